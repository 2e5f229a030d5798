//! Controlled system, reference exosystem, uncertainty bound and data
//! collection through interaction.

use std::io::Write;
use std::ops::Deref;

use nalgebra::{DMatrix, DVector};
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::Rng;

/// Any state component beyond this magnitude aborts a rollout.
pub const DIVERGENCE_LIMIT: f64 = 1e10;

macro_rules! real_vector {
    ($(#[$meta:meta])* $name:ident) => {
        $(#[$meta])*
        #[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
        #[serde(transparent)]
        pub struct $name(pub Vec<f64>);

        impl $name {
            pub fn new(v: Vec<f64>) -> Self {
                Self(v)
            }

            pub fn zeros(n: usize) -> Self {
                Self(vec![0.0; n])
            }

            pub fn is_finite(&self) -> bool {
                self.0.iter().all(|v| v.is_finite())
            }

            pub fn to_dvector(&self) -> DVector<f64> {
                DVector::from_column_slice(&self.0)
            }
        }

        impl Deref for $name {
            type Target = [f64];
            fn deref(&self) -> &[f64] {
                &self.0
            }
        }

        impl From<Vec<f64>> for $name {
            fn from(v: Vec<f64>) -> Self {
                Self(v)
            }
        }
    };
}

real_vector!(
    /// Plant state `x`.
    SystemState
);
real_vector!(
    /// Reference `r` produced by the exosystem.
    ReferenceState
);
real_vector!(
    /// Control input `a`.
    ActionVector
);

/// Componentwise box constraint on actions.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ActionBounds {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl ActionBounds {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>) -> Result<Self> {
        if lo.len() != hi.len() || lo.is_empty() {
            return Err(Error::config("action bounds need matching, non-empty lo/hi"));
        }
        if lo.iter().zip(&hi).any(|(l, h)| !(l.is_finite() && h.is_finite() && l <= h)) {
            return Err(Error::config("action bounds must be finite with lo <= hi"));
        }
        Ok(Self { lo, hi })
    }

    pub fn symmetric(m: usize, half_width: f64) -> Self {
        Self { lo: vec![-half_width; m], hi: vec![half_width; m] }
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn clamp(&self, a: &mut [f64]) {
        for ((v, l), h) in a.iter_mut().zip(&self.lo).zip(&self.hi) {
            *v = v.clamp(*l, *h);
        }
    }

    pub fn contains(&self, a: &[f64]) -> bool {
        a.len() == self.dim() && a.iter().zip(&self.lo).zip(&self.hi).all(|((v, l), h)| *v >= *l && *v <= *h)
    }
}

/// Known bound Δ(x) on the disturbance norm.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum UncertaintyBound {
    /// Δ(x) ≡ 0.
    None,
    /// Δ(x) = sqrt(weight · xᵀx).
    QuadraticNorm { weight: f64 },
    /// Δ(x) = sqrt(weight · ‖x − center‖²), for plants whose operating point
    /// is not the coordinate origin.
    CenteredQuadratic { weight: f64, center: Vec<f64> },
}

/// A concrete disturbance d(x) used by synthetic environments.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Disturbance {
    Zero,
    /// d(x) = gain · x.
    Linear { gain: f64 },
    /// d(x) = fraction · Δ(x) · x/‖x‖, the worst case aligned with x.
    Aligned { fraction: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UncertaintySpec {
    pub bound: UncertaintyBound,
    #[serde(default)]
    pub realization: Option<Disturbance>,
}

impl UncertaintySpec {
    pub fn none() -> Self {
        Self { bound: UncertaintyBound::None, realization: None }
    }

    pub fn quadratic(weight: f64) -> Self {
        Self { bound: UncertaintyBound::QuadraticNorm { weight }, realization: None }
    }

    pub fn with_realization(mut self, d: Disturbance) -> Self {
        self.realization = Some(d);
        self
    }

    /// Δ(x)².
    pub fn bound_sq(&self, x: &[f64]) -> Result<f64> {
        let v = match &self.bound {
            UncertaintyBound::None => 0.0,
            UncertaintyBound::QuadraticNorm { weight } => weight * x.iter().map(|v| v * v).sum::<f64>(),
            UncertaintyBound::CenteredQuadratic { weight, center } => {
                if center.len() != x.len() {
                    return Err(Error::Dimension { what: "uncertainty center", expected: x.len(), got: center.len() });
                }
                weight * x.iter().zip(center).map(|(v, c)| (v - c) * (v - c)).sum::<f64>()
            }
        };
        if !(v >= 0.0) || !v.is_finite() {
            return Err(Error::config(format!("uncertainty bound evaluated to {v}")));
        }
        Ok(v)
    }

    pub fn disturbance(&self, x: &[f64]) -> Result<Vec<f64>> {
        let n = x.len();
        Ok(match &self.realization {
            None | Some(Disturbance::Zero) => vec![0.0; n],
            Some(Disturbance::Linear { gain }) => x.iter().map(|v| gain * v).collect(),
            Some(Disturbance::Aligned { fraction }) => {
                let norm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
                if norm == 0.0 {
                    vec![0.0; n]
                } else {
                    let delta = self.bound_sq(x)?.sqrt();
                    x.iter().map(|v| fraction * delta * v / norm).collect()
                }
            }
        })
    }

    /// Check ‖d(x)‖₂ ≤ Δ(x) on `samples` states drawn uniformly from
    /// `[-radius, radius]^n`; returns the worst ratio seen.
    pub fn verify_realization(&self, n: usize, radius: f64, samples: usize, rng: &mut Rng) -> Result<f64> {
        let mut worst = 0.0_f64;
        for _ in 0..samples {
            let x: Vec<f64> = (0..n).map(|_| rng.gen_range(-radius..=radius)).collect();
            let d = self.disturbance(&x)?;
            let dn = d.iter().map(|v| v * v).sum::<f64>().sqrt();
            let delta = self.bound_sq(&x)?.sqrt();
            if dn > delta * (1.0 + 1e-12) + 1e-300 {
                return Err(Error::config(format!(
                    "disturbance norm {dn:.6e} exceeds bound {delta:.6e} at x = {x:?}"
                )));
            }
            if delta > 0.0 {
                worst = worst.max(dn / delta);
            }
        }
        Ok(worst)
    }
}

pub fn uncertainty_bound(spec: &UncertaintySpec, x: &SystemState) -> Result<f64> {
    if !x.is_finite() {
        return Err(Error::InvalidSample("non-finite state".into()));
    }
    Ok(spec.bound_sq(x)?.sqrt())
}

/// Reference generator r' = h(r).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Exosystem {
    Constant,
    /// r' = H r with H given row by row.
    Linear { h: Vec<Vec<f64>> },
}

impl Exosystem {
    pub fn step(&self, r: &ReferenceState) -> ReferenceState {
        match self {
            Exosystem::Constant => r.clone(),
            Exosystem::Linear { h } => ReferenceState(
                h.iter().map(|row| row.iter().zip(r.iter()).map(|(a, b)| a * b).sum()).collect(),
            ),
        }
    }

    pub fn matrix(&self, p: usize) -> DMatrix<f64> {
        match self {
            Exosystem::Constant => DMatrix::identity(p, p),
            Exosystem::Linear { h } => DMatrix::from_fn(p, p, |i, j| h[i][j]),
        }
    }
}

pub fn reference_step(exo: &Exosystem, r: &ReferenceState) -> ReferenceState {
    exo.step(r)
}

/// Nominal dynamics f(x, a).
pub trait Dynamics: Send + Sync {
    fn state_dim(&self) -> usize;
    fn action_dim(&self) -> usize;
    fn nominal(&self, x: &[f64], a: &[f64]) -> Vec<f64>;
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum EnvMode {
    Nominal,
    Uncertain(UncertaintySpec),
}

/// A dynamics model run either nominally or with its disturbance realization.
#[derive(Clone, Debug)]
pub struct Environment<D> {
    pub dynamics: D,
    pub mode: EnvMode,
}

impl<D: Dynamics> Environment<D> {
    pub fn nominal(dynamics: D) -> Self {
        Self { dynamics, mode: EnvMode::Nominal }
    }

    pub fn nominal_view(&self) -> Environment<&D> {
        Environment { dynamics: &self.dynamics, mode: EnvMode::Nominal }
    }
}

impl<D: Dynamics + ?Sized> Dynamics for &D {
    fn state_dim(&self) -> usize {
        (**self).state_dim()
    }
    fn action_dim(&self) -> usize {
        (**self).action_dim()
    }
    fn nominal(&self, x: &[f64], a: &[f64]) -> Vec<f64> {
        (**self).nominal(x, a)
    }
}

pub fn env_step<D: Dynamics>(env: &Environment<D>, x: &SystemState, a: &ActionVector) -> Result<SystemState> {
    let n = env.dynamics.state_dim();
    if x.len() != n {
        return Err(Error::Dimension { what: "state", expected: n, got: x.len() });
    }
    if a.len() != env.dynamics.action_dim() {
        return Err(Error::Dimension { what: "action", expected: env.dynamics.action_dim(), got: a.len() });
    }
    let mut next = env.dynamics.nominal(x, a);
    if let EnvMode::Uncertain(spec) = &env.mode {
        for (v, d) in next.iter_mut().zip(spec.disturbance(x)?) {
            *v += d;
        }
    }
    check_divergence(&next, 0)?;
    Ok(SystemState(next))
}

pub fn check_divergence(v: &[f64], tick: usize) -> Result<()> {
    if let Some(bad) = v.iter().find(|c| !c.is_finite() || c.abs() > DIVERGENCE_LIMIT) {
        return Err(Error::Divergence { tick, detail: format!("state component {bad:e}") });
    }
    Ok(())
}

/// Axis-aligned box over (x, r) used to sample check points.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DomainBox {
    pub x_lo: Vec<f64>,
    pub x_hi: Vec<f64>,
    pub r_lo: Vec<f64>,
    pub r_hi: Vec<f64>,
}

impl DomainBox {
    pub fn sample(&self, rng: &mut Rng) -> (SystemState, ReferenceState) {
        let draw = |lo: &[f64], hi: &[f64], rng: &mut Rng| -> Vec<f64> {
            lo.iter().zip(hi).map(|(l, h)| if l < h { rng.gen_range(*l..=*h) } else { *l }).collect()
        };
        let x = draw(&self.x_lo, &self.x_hi, rng);
        let r = draw(&self.r_lo, &self.r_hi, rng);
        (SystemState(x), ReferenceState(r))
    }
}

/// A system the learner interacts with one tick at a time.
///
/// `observe` returns what the controller sees; `advance` applies an action on
/// the nominal system. Glucose plants keep hidden physiological state behind
/// the observation.
pub trait Plant {
    fn state_dim(&self) -> usize;
    fn reference_dim(&self) -> usize;
    fn action_dim(&self) -> usize;
    fn bounds(&self) -> &ActionBounds;
    fn observe(&self) -> (SystemState, ReferenceState);
    /// Apply `a` for one tick and return the action actually delivered
    /// (after clamping or device quantization).
    fn advance(&mut self, a: &ActionVector) -> Result<ActionVector>;
    /// True once the current episode has ended; collection must `reset`.
    fn episode_done(&self) -> bool {
        false
    }
    fn reset(&mut self);
    /// Region used for sampled positivity checks.
    fn domain(&self) -> DomainBox;
}

/// Plant backed by an explicit dynamics model and exosystem, with episodes
/// restarted from a random initial box.
#[derive(Clone, Debug)]
pub struct ModelPlant<D> {
    pub env: Environment<D>,
    pub exo: Exosystem,
    pub bounds: ActionBounds,
    pub init: DomainBox,
    pub episode_len: Option<usize>,
    x: SystemState,
    r: ReferenceState,
    tick: usize,
    rng: Rng,
}

impl<D: Dynamics> ModelPlant<D> {
    pub fn new(env: Environment<D>, exo: Exosystem, bounds: ActionBounds, init: DomainBox, episode_len: Option<usize>, rng: Rng) -> Self {
        let n = env.dynamics.state_dim();
        let p = init.r_lo.len();
        let mut plant = Self {
            env,
            exo,
            bounds,
            init,
            episode_len,
            x: SystemState::zeros(n),
            r: ReferenceState::zeros(p),
            tick: 0,
            rng,
        };
        plant.reset();
        plant
    }

    pub fn set_state(&mut self, x: SystemState, r: ReferenceState) {
        self.x = x;
        self.r = r;
        self.tick = 0;
    }

    pub fn tick(&self) -> usize {
        self.tick
    }
}

impl<D: Dynamics> Plant for ModelPlant<D> {
    fn state_dim(&self) -> usize {
        self.env.dynamics.state_dim()
    }
    fn reference_dim(&self) -> usize {
        self.r.len()
    }
    fn action_dim(&self) -> usize {
        self.env.dynamics.action_dim()
    }
    fn bounds(&self) -> &ActionBounds {
        &self.bounds
    }
    fn observe(&self) -> (SystemState, ReferenceState) {
        (self.x.clone(), self.r.clone())
    }
    fn advance(&mut self, a: &ActionVector) -> Result<ActionVector> {
        let mut a = a.clone();
        self.bounds.clamp(&mut a.0);
        let next = env_step(&self.env, &self.x, &a).map_err(|e| match e {
            Error::Divergence { detail, .. } => Error::Divergence { tick: self.tick, detail },
            other => other,
        })?;
        self.x = next;
        self.r = self.exo.step(&self.r);
        self.tick += 1;
        Ok(a)
    }
    fn episode_done(&self) -> bool {
        self.episode_len.is_some_and(|len| self.tick >= len)
    }
    fn reset(&mut self) {
        let (x, r) = self.init.sample(&mut self.rng);
        self.set_state(x, r);
    }
    fn domain(&self) -> DomainBox {
        self.init.clone()
    }
}

/// A deterministic state-feedback policy μ(x, r).
pub trait Policy {
    fn action(&self, x: &SystemState, r: &ReferenceState) -> ActionVector;
}

impl<F> Policy for F
where
    F: Fn(&SystemState, &ReferenceState) -> ActionVector,
{
    fn action(&self, x: &SystemState, r: &ReferenceState) -> ActionVector {
        self(x, r)
    }
}

/// Source of the actions actually applied while collecting data.
pub trait ActionSource {
    fn action(&mut self, x: &SystemState, r: &ReferenceState) -> ActionVector;
}

/// Range of the additive exploration noise n_k, drawn independently per
/// action component.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    pub lo: f64,
    pub hi: f64,
}

impl Default for NoiseSpec {
    fn default() -> Self {
        Self { lo: 3e-4, hi: 6e-4 }
    }
}

impl NoiseSpec {
    pub fn draw(&self, rng: &mut Rng) -> f64 {
        if self.hi > self.lo {
            rng.gen_range(self.lo..self.hi)
        } else {
            self.lo
        }
    }

    /// Widen the range around its midpoint.
    pub fn widened(&self, factor: f64) -> Self {
        let mid = 0.5 * (self.lo + self.hi);
        let half = 0.5 * (self.hi - self.lo) * factor;
        Self { lo: mid - half, hi: mid + half }
    }
}

/// Exploration rule: μ⁰ + n at the first iteration, the average of the
/// current and previous greedy policies plus n afterwards, clamped to bounds.
pub fn exploration_action(
    i: usize,
    current: &ActionVector,
    previous: Option<&ActionVector>,
    noise: &[f64],
    bounds: &ActionBounds,
) -> ActionVector {
    let mut a: Vec<f64> = match (i, previous) {
        (0, _) | (_, None) => current.0.clone(),
        (_, Some(prev)) => current.iter().zip(prev.iter()).map(|(c, p)| 0.5 * (c + p)).collect(),
    };
    for (v, n) in a.iter_mut().zip(noise) {
        *v += n;
    }
    bounds.clamp(&mut a);
    ActionVector(a)
}

pub struct Exploration<'a> {
    pub iteration: usize,
    pub current: &'a dyn Policy,
    pub previous: Option<&'a dyn Policy>,
    pub noise: NoiseSpec,
    pub bounds: ActionBounds,
    pub rng: &'a mut Rng,
}

impl ActionSource for Exploration<'_> {
    fn action(&mut self, x: &SystemState, r: &ReferenceState) -> ActionVector {
        let cur = self.current.action(x, r);
        let prev = if self.iteration > 0 { self.previous.map(|p| p.action(x, r)) } else { None };
        let noise: Vec<f64> = (0..cur.len()).map(|_| self.noise.draw(self.rng)).collect();
        exploration_action(self.iteration, &cur, prev.as_ref(), &noise, &self.bounds)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub x: SystemState,
    pub r: ReferenceState,
    pub a: ActionVector,
    pub x_next: SystemState,
    pub r_next: ReferenceState,
    pub a_next_policy: ActionVector,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TransitionBuffer {
    pub entries: Vec<Transition>,
    pub iteration: usize,
}

impl TransitionBuffer {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Columnar CSV, one transition per row.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        let Some(first) = self.entries.first() else {
            return Ok(());
        };
        let (n, p, m) = (first.x.len(), first.r.len(), first.a.len());
        let mut header: Vec<String> = Vec::new();
        header.extend((1..=n).map(|k| format!("x{k}")));
        header.extend((1..=p).map(|k| format!("r{k}")));
        header.extend((1..=m).map(|k| format!("a{k}")));
        header.extend((1..=n).map(|k| format!("x{k}'")));
        header.extend((1..=p).map(|k| format!("r{k}'")));
        header.extend((1..=m).map(|k| format!("apol{k}")));
        writeln!(w, "{}", header.join(","))?;
        for t in &self.entries {
            let row: Vec<String> = t
                .x
                .iter()
                .chain(t.r.iter())
                .chain(t.a.iter())
                .chain(t.x_next.iter())
                .chain(t.r_next.iter())
                .chain(t.a_next_policy.iter())
                .map(|v| format!("{v:e}"))
                .collect();
            writeln!(w, "{}", row.join(","))?;
        }
        Ok(())
    }
}

/// Roll the nominal plant with `source` for exactly `size` transitions,
/// storing the greedy action of `current` at each successor.
pub fn collect_buffer<P: Plant + ?Sized>(
    plant: &mut P,
    source: &mut dyn ActionSource,
    current: &dyn Policy,
    size: usize,
    min_rows: usize,
    iteration: usize,
) -> Result<TransitionBuffer> {
    if size < min_rows {
        return Err(Error::BufferTooSmall { buffer: size, features: min_rows });
    }
    let mut entries = Vec::with_capacity(size);
    while entries.len() < size {
        if plant.episode_done() {
            plant.reset();
        }
        let (x, r) = plant.observe();
        let a = match plant.advance(&source.action(&x, &r)) {
            Ok(applied) => applied,
            Err(e) => return Err(Error::PartialBuffer { collected: entries.len(), requested: size, source: Box::new(e) }),
        };
        let (x_next, r_next) = plant.observe();
        let a_next_policy = current.action(&x_next, &r_next);
        entries.push(Transition { x, r, a, x_next, r_next, a_next_policy });
    }
    Ok(TransitionBuffer { entries, iteration })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;

    struct Linear {
        a: DMatrix<f64>,
        b: DMatrix<f64>,
    }

    impl Dynamics for Linear {
        fn state_dim(&self) -> usize {
            self.a.nrows()
        }
        fn action_dim(&self) -> usize {
            self.b.ncols()
        }
        fn nominal(&self, x: &[f64], a: &[f64]) -> Vec<f64> {
            let y = &self.a * DVector::from_column_slice(x) + &self.b * DVector::from_column_slice(a);
            y.iter().copied().collect()
        }
    }

    fn diag_env() -> Linear {
        Linear { a: DMatrix::from_row_slice(2, 2, &[0.9, 0.0, 0.0, 0.8]), b: DMatrix::identity(2, 2) }
    }

    #[test]
    fn nominal_and_uncertain_steps() {
        let id = Environment::nominal(Linear { a: DMatrix::identity(2, 2), b: DMatrix::identity(2, 2) });
        let zero = env_step(&id, &SystemState(vec![0.0, 0.0]), &ActionVector(vec![0.0, 0.0])).unwrap();
        assert_eq!(zero.0, vec![0.0, 0.0]);

        let env = Environment::nominal(diag_env());
        let y = env_step(&env, &SystemState(vec![1.0, 1.0]), &ActionVector(vec![0.0, 0.0])).unwrap();
        assert_eq!(y.0, vec![0.9, 0.8]);

        let spec = UncertaintySpec::quadratic(1.0).with_realization(Disturbance::Linear { gain: 0.05 });
        let env = Environment { dynamics: diag_env(), mode: EnvMode::Uncertain(spec) };
        let y = env_step(&env, &SystemState(vec![1.0, 0.0]), &ActionVector(vec![0.0, 0.0])).unwrap();
        assert!((y[0] - 0.95).abs() < 1e-15 && y[1] == 0.0);
    }

    #[test]
    fn divergence_guard() {
        let env = Environment::nominal(diag_env());
        let err = env_step(&env, &SystemState(vec![1e11, 0.0]), &ActionVector(vec![0.0, 0.0]));
        assert!(matches!(err, Err(Error::Divergence { .. })));
        let err = env_step(&env, &SystemState(vec![f64::NAN, 0.0]), &ActionVector(vec![0.0, 0.0]));
        assert!(matches!(err, Err(Error::Divergence { .. })));
    }

    #[test]
    fn exosystems() {
        let r = ReferenceState(vec![120.0]);
        assert_eq!(reference_step(&Exosystem::Constant, &r).0, vec![120.0]);
        let half = Exosystem::Linear { h: vec![vec![0.5]] };
        assert_eq!(reference_step(&half, &ReferenceState(vec![2.0])).0, vec![1.0]);
        assert_eq!(reference_step(&half, &ReferenceState(vec![0.0])).0, vec![0.0]);
    }

    #[test]
    fn harness_bound_values() {
        let spec = UncertaintySpec::quadratic(90.0);
        assert_eq!(uncertainty_bound(&spec, &SystemState(vec![0.0, 0.0])).unwrap(), 0.0);
        let d = uncertainty_bound(&spec, &SystemState(vec![1.0, 0.0])).unwrap();
        assert!((d - 9.486832980505138).abs() < 1e-12);
        let d = uncertainty_bound(&spec, &SystemState(vec![3.0, 4.0])).unwrap();
        assert!((d - 47.43416490252569).abs() < 1e-12);
        let bad = UncertaintySpec::quadratic(-1.0);
        assert!(matches!(uncertainty_bound(&bad, &SystemState(vec![1.0])), Err(Error::Config(_))));
    }

    #[test]
    fn exploration_examples() {
        let b = ActionBounds::new(vec![0.0], vec![5.0]).unwrap();
        let a = exploration_action(0, &ActionVector(vec![0.01]), None, &[4e-4], &b);
        assert!((a[0] - 0.0104).abs() < 1e-15);
        let a = exploration_action(2, &ActionVector(vec![0.02]), Some(&ActionVector(vec![0.01])), &[3e-4], &b);
        assert!((a[0] - 0.0153).abs() < 1e-15);
        let a = exploration_action(0, &ActionVector(vec![7.0]), None, &[4e-4], &b);
        assert_eq!(a[0], 5.0);
    }

    #[test]
    fn buffer_respects_size_and_policy() {
        let env = Environment::nominal(Linear { a: DMatrix::from_element(1, 1, 0.5), b: DMatrix::from_element(1, 1, 1.0) });
        let init = DomainBox { x_lo: vec![-1.0], x_hi: vec![1.0], r_lo: vec![0.0], r_hi: vec![0.0] };
        let mut plant = ModelPlant::new(env, Exosystem::Constant, ActionBounds::symmetric(1, 10.0), init, Some(7), stream(1, 2));
        let policy = |x: &SystemState, _r: &ReferenceState| ActionVector(vec![-0.25 * x[0]]);
        let mut rng = stream(1, 1);
        let mut src = Exploration {
            iteration: 0,
            current: &policy,
            previous: None,
            noise: NoiseSpec { lo: -0.5, hi: 0.5 },
            bounds: ActionBounds::symmetric(1, 10.0),
            rng: &mut rng,
        };
        let buf = collect_buffer(&mut plant, &mut src, &policy, 20, 3, 0).unwrap();
        assert_eq!(buf.len(), 20);
        for t in &buf.entries {
            assert_eq!(t.a_next_policy, policy(&t.x_next, &t.r_next));
            // no transition straddles a reset
            assert!((t.x_next[0] - (0.5 * t.x[0] + t.a[0])).abs() < 1e-15);
        }
        assert!(matches!(
            collect_buffer(&mut plant, &mut src, &policy, 2, 3, 0),
            Err(Error::BufferTooSmall { .. })
        ));
        let mut csv = Vec::new();
        buf.write_csv(&mut csv).unwrap();
        let text = String::from_utf8(csv).unwrap();
        assert!(text.starts_with("x1,r1,a1,x1',r1',apol1\n"));
        assert_eq!(text.lines().count(), 21);
    }
}
