//! Benchmark environments with closed-form oracles.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lambda_pi::{CostSpec, GammaMode, LearnConfig, Objective};
use crate::linalg::from_rows;
use crate::qmodel::{BasisDescriptor, InitConfig, QWeights, Var};
use crate::rng::{stream, streams, Rng};
use crate::system::{
    ActionBounds, Disturbance, DomainBox, Dynamics, EnvMode, Environment, Exosystem, ModelPlant, NoiseSpec, Plant,
    UncertaintySpec,
};

/// Linear plant x' = A x + B a.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinearDynamics {
    pub a: Vec<Vec<f64>>,
    pub b: Vec<Vec<f64>>,
}

impl LinearDynamics {
    pub fn a_matrix(&self) -> DMatrix<f64> {
        from_rows(&self.a).expect("validated")
    }

    pub fn b_matrix(&self) -> DMatrix<f64> {
        from_rows(&self.b).expect("validated")
    }

    pub fn validate(&self) -> Result<()> {
        let a = from_rows(&self.a)?;
        let b = from_rows(&self.b)?;
        if !a.is_square() || b.nrows() != a.nrows() || b.ncols() == 0 {
            return Err(Error::config("A must be n×n and B n×m"));
        }
        Ok(())
    }

    /// Rank of [B, AB, …, A^{n−1}B] equals n.
    pub fn is_controllable(&self) -> bool {
        let a = self.a_matrix();
        let b = self.b_matrix();
        let n = a.nrows();
        let m = b.ncols();
        let mut ctrb = DMatrix::zeros(n, n * m);
        let mut block = b.clone();
        for k in 0..n {
            ctrb.view_mut((0, k * m), (n, m)).copy_from(&block);
            block = &a * block;
        }
        ctrb.rank(1e-10 * ctrb.amax().max(1.0)) == n
    }
}

impl Dynamics for LinearDynamics {
    fn state_dim(&self) -> usize {
        self.a.len()
    }
    fn action_dim(&self) -> usize {
        self.b.first().map_or(0, |r| r.len())
    }
    fn nominal(&self, x: &[f64], a: &[f64]) -> Vec<f64> {
        self.a
            .iter()
            .zip(&self.b)
            .map(|(ar, br)| {
                ar.iter().zip(x).map(|(p, q)| p * q).sum::<f64>() + br.iter().zip(a).map(|(p, q)| p * q).sum::<f64>()
            })
            .collect()
    }
}

/// Discounted linear-quadratic tracking problem.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LqtEnv {
    pub dynamics: LinearDynamics,
    pub exo: Exosystem,
    pub cost: CostSpec,
    pub reference_dim: usize,
}

impl LqtEnv {
    /// Two-state plant tracking a constant scalar reference with x₁.
    pub fn validation() -> Self {
        Self {
            dynamics: LinearDynamics { a: vec![vec![0.9, 0.2], vec![0.0, 0.7]], b: vec![vec![0.0], vec![1.0]] },
            exo: Exosystem::Constant,
            cost: CostSpec { s: vec![vec![1.0]], r: vec![vec![1.0]], gamma: 0.95, tracked: vec![0], scale: 1.0 },
            reference_dim: 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.dynamics.validate()?;
        self.cost.validate(self.dynamics.state_dim(), self.dynamics.action_dim())?;
        if self.cost.tracked.len() != self.reference_dim {
            return Err(Error::config("tracked components must match the reference dimension"));
        }
        if !self.dynamics.is_controllable() {
            return Err(Error::config("(A, B) is not controllable"));
        }
        Ok(())
    }

    pub fn environment(&self) -> Environment<LinearDynamics> {
        Environment::nominal(self.dynamics.clone())
    }

    pub fn basis(&self) -> Result<BasisDescriptor> {
        BasisDescriptor::standard(self.dynamics.state_dim(), self.reference_dim, self.dynamics.action_dim())
    }
}

/// Result of the discounted Riccati recursion on the augmented state [x; r].
#[derive(Clone, Debug)]
pub struct RiccatiSolution {
    /// Cost-to-go matrix over [x; r].
    pub p: DMatrix<f64>,
    /// Optimal feedback a = −K [x; r].
    pub gain: DMatrix<f64>,
    /// Quadratic form of Q* over [x; r; a].
    pub q_form: DMatrix<f64>,
    pub iterations: usize,
    /// Spectral radius of √γ(A_aug − B_aug K).
    pub closed_loop_radius: f64,
}

/// Iterate P ← Q_aug + γA'ᵀPA' − γ²A'ᵀPB'(R + γB'ᵀPB')⁻¹B'ᵀPA' from P = 0,
/// i.e. the undiscounted recursion on (√γA', √γB').
pub fn discounted_riccati(env: &LqtEnv, tol: f64, max_iters: usize) -> Result<RiccatiSolution> {
    env.validate()?;
    let a = env.dynamics.a_matrix();
    let b = env.dynamics.b_matrix();
    let n = a.nrows();
    let m = b.ncols();
    let p_dim = env.reference_dim;
    let h = env.exo.matrix(p_dim);
    let gamma = env.cost.gamma;
    let s = env.cost.s_matrix() * env.cost.scale;
    let r = env.cost.r_matrix() * env.cost.scale;
    let d = n + p_dim;

    let mut aa = DMatrix::zeros(d, d);
    aa.view_mut((0, 0), (n, n)).copy_from(&a);
    aa.view_mut((n, n), (p_dim, p_dim)).copy_from(&h);
    let mut ba = DMatrix::zeros(d, m);
    ba.view_mut((0, 0), (n, m)).copy_from(&b);
    // error e = E x − r
    let mut c = DMatrix::zeros(p_dim, d);
    for (row, &k) in env.cost.tracked.iter().enumerate() {
        c[(row, k)] = 1.0;
        c[(row, n + row)] = -1.0;
    }
    let q_aug = c.transpose() * &s * &c;

    let mut p = DMatrix::zeros(d, d);
    let mut iterations = 0;
    loop {
        iterations += 1;
        let btpb = &r + gamma * ba.transpose() * &p * &ba;
        let btpa = gamma * ba.transpose() * &p * &aa;
        let chol = btpb.clone().cholesky().ok_or_else(|| Error::Riccati("R + γBᵀPB lost definiteness".into()))?;
        let next = &q_aug + gamma * aa.transpose() * &p * &aa - btpa.transpose() * chol.solve(&btpa);
        let next = 0.5 * (&next + next.transpose());
        let change = (&next - &p).amax();
        p = next;
        if !p.iter().all(|v| v.is_finite()) || p.amax() > 1e12 {
            return Err(Error::Riccati("recursion diverged; the problem is not stabilizable".into()));
        }
        if change <= tol * p.amax().max(1.0) {
            break;
        }
        if iterations >= max_iters {
            return Err(Error::Riccati(format!("no fixed point within {max_iters} iterations")));
        }
    }

    let btpb = &r + gamma * ba.transpose() * &p * &ba;
    let btpa = gamma * ba.transpose() * &p * &aa;
    let gain = btpb.clone().cholesky().expect("checked above").solve(&btpa);
    let mut q_form = DMatrix::zeros(d + m, d + m);
    q_form.view_mut((0, 0), (d, d)).copy_from(&(&q_aug + gamma * aa.transpose() * &p * &aa));
    q_form.view_mut((0, d), (d, m)).copy_from(&btpa.transpose());
    q_form.view_mut((d, 0), (m, d)).copy_from(&btpa);
    q_form.view_mut((d, d), (m, m)).copy_from(&btpb);
    let acl = (&aa - &ba * &gain) * gamma.sqrt();
    let closed_loop_radius = acl.complex_eigenvalues().iter().map(|z| z.norm()).fold(0.0, f64::max);
    if closed_loop_radius >= 1.0 {
        return Err(Error::Riccati(format!("closed loop not stable (radius {closed_loop_radius:.6})")));
    }
    Ok(RiccatiSolution { p, gain, q_form, iterations, closed_loop_radius })
}

/// Map a quadratic form over v = [x; r; a] onto the weights of `basis`.
/// Every quadratic monomial v_i v_j must be a basis feature.
pub fn quadratic_form_weights(basis: Arc<BasisDescriptor>, form: &DMatrix<f64>) -> Result<QWeights> {
    let (n, p, m) = (basis.n(), basis.p(), basis.m());
    let d = n + p + m;
    if form.nrows() != d || form.ncols() != d {
        return Err(Error::Dimension { what: "quadratic form", expected: d, got: form.nrows() });
    }
    let var = |k: usize| {
        if k < n {
            Var::X(k)
        } else if k < n + p {
            Var::R(k - n)
        } else {
            Var::A(k - n - p)
        }
    };
    let mut w = vec![0.0; basis.len()];
    for i in 0..d {
        for j in i..d {
            let coef = if i == j { form[(i, i)] } else { form[(i, j)] + form[(j, i)] };
            let factors: Vec<(Var, u8)> = if i == j { vec![(var(i), 2)] } else { vec![(var(i), 1), (var(j), 1)] };
            match basis.monomial_index(&factors) {
                Some(idx) => w[idx] = coef,
                None if coef == 0.0 => {}
                None => return Err(Error::config("basis lacks a quadratic monomial needed by the oracle")),
            }
        }
    }
    QWeights::new(basis, w)
}

/// Exact optimal Q* of the Γ-free tracking problem in the standard basis.
pub fn lqt_riccati_oracle(env: &LqtEnv) -> Result<QWeights> {
    let sol = discounted_riccati(env, 1e-12, 1_000_000)?;
    quadratic_form_weights(Arc::new(env.basis()?), &sol.q_form)
}

/// Scalar nonlinear plant x' = 0.8 sin x + 0.9 a clipped to |x| ≤ 10.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct NonlinearToy;

pub const TOY_LIMIT: f64 = 10.0;

pub fn nonlinear_toy_step(x: f64, a: f64) -> f64 {
    (0.8 * x.sin() + 0.9 * a).clamp(-TOY_LIMIT, TOY_LIMIT)
}

impl Dynamics for NonlinearToy {
    fn state_dim(&self) -> usize {
        1
    }
    fn action_dim(&self) -> usize {
        1
    }
    fn nominal(&self, x: &[f64], a: &[f64]) -> Vec<f64> {
        vec![nonlinear_toy_step(x[0], a[0])]
    }
}

/// Attach a disturbance realization after checking it against its bound on
/// `samples` random states in `[-radius, radius]^n`.
pub fn make_uncertain<D: Dynamics>(
    env: Environment<D>,
    spec: UncertaintySpec,
    radius: f64,
    samples: usize,
    rng: &mut Rng,
) -> Result<Environment<D>> {
    spec.verify_realization(env.dynamics.state_dim(), radius, samples, rng)?;
    Ok(Environment { dynamics: env.dynamics, mode: EnvMode::Uncertain(spec) })
}

/// Closed-loop map of a linear feedback on the augmented system, used to
/// compare greedy actions against the Riccati gain.
pub fn riccati_action(sol: &RiccatiSolution, x: &[f64], r: &[f64]) -> Vec<f64> {
    let v = DVector::from_iterator(x.len() + r.len(), x.iter().chain(r).copied());
    (-(&sol.gain * v)).iter().copied().collect()
}

/// The validation LQT together with the plant, exploration and objective
/// used to learn it from data.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LqtSetup {
    pub env: LqtEnv,
    /// Symmetric action bound.
    pub action_limit: f64,
    pub episode_len: usize,
    /// Episodes start uniformly in [-radius, radius] for every x and r.
    pub init_radius: f64,
    pub noise: NoiseSpec,
    pub gamma_mode: GammaMode,
    pub uncertainty: UncertaintySpec,
    /// Start of the c_base doubling search for Q⁰.
    pub c_base: f64,
    pub init_doublings: u32,
    pub rho_max: u32,
}

impl LqtSetup {
    /// Γ disabled, so the learned Q must equal the Riccati oracle.
    pub fn validation() -> Self {
        Self {
            env: LqtEnv::validation(),
            action_limit: 50.0,
            episode_len: 10,
            init_radius: 1.0,
            noise: NoiseSpec { lo: -0.5, hi: 0.5 },
            gamma_mode: GammaMode::Disabled,
            uncertainty: UncertaintySpec::none(),
            c_base: 1e-9,
            init_doublings: 60,
            rho_max: 60,
        }
    }

    /// Γ enabled with Δ(x)² = 0.01‖x‖² at cost scale 0.001; the uncertain
    /// plant pushes along x with 0.9·Δ(x).
    pub fn robust_validation() -> Self {
        let mut env = LqtEnv::validation();
        env.cost.scale = 1e-3;
        Self {
            env,
            gamma_mode: GammaMode::Full,
            uncertainty: UncertaintySpec::quadratic(0.01).with_realization(Disturbance::Aligned { fraction: 0.9 }),
            ..Self::validation()
        }
    }

    pub fn objective(&self) -> Objective {
        Objective { cost: self.env.cost.clone(), uncertainty: self.uncertainty.clone(), gamma_mode: self.gamma_mode }
    }

    pub fn learn_config(&self, seed: u64) -> LearnConfig {
        LearnConfig {
            noise: self.noise,
            rho_max: self.rho_max,
            init: InitConfig { c_base: self.c_base, ..InitConfig::default() },
            init_doublings: self.init_doublings,
            seed,
            ..LearnConfig::default()
        }
    }

    fn domain(&self) -> DomainBox {
        let n = self.env.dynamics.state_dim();
        let p = self.env.reference_dim;
        let rad = self.init_radius;
        DomainBox { x_lo: vec![-rad; n], x_hi: vec![rad; n], r_lo: vec![-rad; p], r_hi: vec![rad; p] }
    }

    /// Nominal plant the learner interacts with.
    pub fn plant(&self, seed: u64) -> ModelPlant<LinearDynamics> {
        self.plant_with(self.env.environment(), seed)
    }

    /// Plant driven by the disturbance realization, checked against Δ first.
    pub fn uncertain_plant(&self, seed: u64) -> Result<ModelPlant<LinearDynamics>> {
        let mut rng = stream(seed, streams::VALIDATION);
        let env = make_uncertain(self.env.environment(), self.uncertainty.clone(), 10.0, 1000, &mut rng)?;
        Ok(self.plant_with(env, seed))
    }

    fn plant_with(&self, env: Environment<LinearDynamics>, seed: u64) -> ModelPlant<LinearDynamics> {
        let bounds = ActionBounds::symmetric(self.env.dynamics.action_dim(), self.action_limit);
        ModelPlant::new(env, self.env.exo.clone(), bounds, self.domain(), Some(self.episode_len), stream(seed, streams::PLANT_RESET))
    }
}

/// Mean of ‖x_tracked − r‖ over `episodes` fresh episodes of `steps` ticks
/// each under the greedy policy of `w`.
pub fn tracking_error(plant: &mut dyn Plant, w: &QWeights, tracked: &[usize], episodes: usize, steps: usize) -> Result<f64> {
    let bounds = plant.bounds().clone();
    let mut total = 0.0;
    for _ in 0..episodes {
        plant.reset();
        for _ in 0..steps {
            let (x, r) = plant.observe();
            plant.advance(&w.greedy(&x, &r, &bounds).action)?;
            let (x, r) = plant.observe();
            total += tracked.iter().zip(r.iter()).map(|(&k, rv)| (x[k] - rv).powi(2)).sum::<f64>().sqrt();
        }
    }
    Ok(total / (episodes * steps) as f64)
}
