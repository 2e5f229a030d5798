use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::cost::{gamma_term, stage_cost, Objective};
use super::robustness::{robustness_check, RobustnessConfig};
use super::schedule::{lambda_value, LambdaSchedule};
use super::trace::{AttemptRecord, IterationRecord, LearnTrace};
use crate::error::{Error, Result};
use crate::linalg::{least_squares, RankPolicy};
use crate::qmodel::{init_q0, BasisDescriptor, GreedyPolicy, InitConfig, QWeights};
use crate::rng::{stream, streams, Rng};
use crate::system::{collect_buffer, ActionBounds, Exploration, NoiseSpec, Plant, Transition, TransitionBuffer};

/// Weights beyond this magnitude mean the iteration has no finite limit.
const DIVERGED_WEIGHT: f64 = 1e100;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LearnConfig {
    pub schedule: LambdaSchedule,
    pub buffer_size: usize,
    pub tau: f64,
    pub max_iters: usize,
    pub rho_start: u32,
    pub rho_max: u32,
    pub init: InitConfig,
    /// How many times c_base may be doubled to meet the initialization check.
    pub init_doublings: u32,
    pub noise: NoiseSpec,
    pub rank_policy: RankPolicy,
    /// Re-collections with a 10× wider noise range after a rank failure.
    pub excitation_retries: usize,
    /// `None` skips the post-convergence check (and ρ escalation).
    pub robustness: Option<RobustnessConfig>,
    /// Restart the exploration noise sequence at every iteration, so a plant
    /// that replays the same episode sees identical draws.
    #[serde(default)]
    pub replay_noise: bool,
    pub seed: u64,
}

impl Default for LearnConfig {
    fn default() -> Self {
        Self {
            schedule: LambdaSchedule::default(),
            buffer_size: 144,
            tau: 1e-10,
            max_iters: 2000,
            rho_start: 1,
            rho_max: 30,
            init: InitConfig::default(),
            init_doublings: 40,
            noise: NoiseSpec::default(),
            rank_policy: RankPolicy::default(),
            excitation_retries: 3,
            robustness: Some(RobustnessConfig::default()),
            replay_noise: false,
            seed: 0,
        }
    }
}

impl LearnConfig {
    pub fn validate(&self, basis: &BasisDescriptor) -> Result<()> {
        self.schedule.validate()?;
        if self.buffer_size < basis.len() {
            return Err(Error::BufferTooSmall { buffer: self.buffer_size, features: basis.len() });
        }
        if !(self.tau > 0.0) {
            return Err(Error::config("tau must be positive"));
        }
        if self.rho_start < 1 || self.rho_max < self.rho_start {
            return Err(Error::config("need 1 <= rho_start <= rho_max"));
        }
        if !(self.init.c_base > 0.0 && self.init.action_ratio > 0.0) {
            return Err(Error::config("initial weights must be positive"));
        }
        if self.max_iters == 0 {
            return Err(Error::config("max_iters must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct LearnOutcome {
    pub weights: QWeights,
    pub rho: u32,
    pub trace: LearnTrace,
}

#[derive(Clone, Debug)]
pub struct LsStep {
    pub weights: QWeights,
    pub condition: f64,
    pub rank: usize,
}

/// Regressor Ψ and targets z of the least-squares evaluation step:
/// Ψ_b = Φ_b − λγΦ'_b and z_b = l_b + Γ̂_b + (1 − λ)γ Φ'_bᵀ w_i.
pub fn regression_system(
    buffer: &TransitionBuffer,
    w_i: &QWeights,
    lambda: f64,
    rho: u32,
    obj: &Objective,
) -> Result<(DMatrix<f64>, DVector<f64>)> {
    let basis = &w_i.basis;
    let k = basis.len();
    let rows = buffer.len();
    let gamma = obj.cost.gamma;
    let mut psi = DMatrix::zeros(rows, k);
    let mut z = DVector::zeros(rows);
    let mut phi = vec![0.0; k];
    let mut phi_next = vec![0.0; k];
    for (b, t) in buffer.entries.iter().enumerate() {
        basis.eval_into(&t.x, &t.r, &t.a, &mut phi);
        basis.eval_into(&t.x_next, &t.r_next, &t.a_next_policy, &mut phi_next);
        for j in 0..k {
            psi[(b, j)] = phi[j] - lambda * gamma * phi_next[j];
        }
        let q_next: f64 = phi_next.iter().zip(&w_i.w).map(|(f, w)| f * w).sum();
        let l = stage_cost(&obj.cost, &t.x, &t.r, &t.a);
        let g = gamma_term(w_i, rho, obj, &t.x, &t.x_next, &t.r_next, &t.a_next_policy)?;
        z[b] = l + g + (1.0 - lambda) * gamma * q_next;
    }
    Ok((psi, z))
}

pub fn policy_evaluate_ls(
    buffer: &TransitionBuffer,
    w_i: &QWeights,
    lambda: f64,
    rho: u32,
    obj: &Objective,
    rank_policy: RankPolicy,
) -> Result<LsStep> {
    let (psi, z) = regression_system(buffer, w_i, lambda, rho, obj)?;
    let sol = least_squares(&psi, &z, rank_policy)?;
    let weights = QWeights::new(w_i.basis.clone(), sol.x.iter().copied().collect())?;
    Ok(LsStep { weights, condition: sol.condition, rank: sol.rank })
}

/// Q̂(x, r, a) − l − Γ̂ − γ Q̂(x', r', μ̂(x', r')) with μ̂ greedy for `w`.
pub fn bellman_residual(w: &QWeights, t: &Transition, rho: u32, obj: &Objective, bounds: &ActionBounds) -> Result<f64> {
    let a_next = w.greedy(&t.x_next, &t.r_next, bounds).action;
    let l = stage_cost(&obj.cost, &t.x, &t.r, &t.a);
    let g = gamma_term(w, rho, obj, &t.x, &t.x_next, &t.r_next, &a_next)?;
    Ok(w.value(&t.x, &t.r, &t.a) - l - g - obj.cost.gamma * w.value(&t.x_next, &t.r_next, &a_next))
}

/// Initialization check Q⁰ ≥ l + Γ⁰ + γQ⁰(x', r', μ⁰(x', r')) on every
/// buffer sample; the buffer's stored successor actions must be μ⁰.
pub fn check_initial_condition(q0: &QWeights, buffer: &TransitionBuffer, rho: u32, obj: &Objective) -> Result<bool> {
    for t in &buffer.entries {
        let lhs = q0.value(&t.x, &t.r, &t.a);
        let rhs = stage_cost(&obj.cost, &t.x, &t.r, &t.a)
            + gamma_term(q0, rho, obj, &t.x, &t.x_next, &t.r_next, &t.a_next_policy)?
            + obj.cost.gamma * q0.value(&t.x_next, &t.r_next, &t.a_next_policy);
        if !(lhs >= rhs) {
            return Ok(false);
        }
    }
    Ok(true)
}

/// Gradient non-increase ‖∇ₓQ̂^i(x, r, μ̂^i)‖² ≤ ‖∇ₓQ̂^{i−1}(x, r, μ̂^{i−1})‖²
/// at every buffer state.
pub fn check_gradient_condition(w_i: &QWeights, w_prev: &QWeights, buffer: &TransitionBuffer, bounds: &ActionBounds) -> bool {
    let sq = |w: &QWeights, x: &[f64], r: &[f64]| -> f64 {
        let a = w.greedy(x, r, bounds).action;
        w.grad_x(x, r, &a).iter().map(|g| g * g).sum()
    };
    buffer.entries.iter().all(|t| sq(w_i, &t.x, &t.r) <= sq(w_prev, &t.x, &t.r))
}

struct Collected {
    buffer: TransitionBuffer,
    step: LsStep,
    noise: NoiseSpec,
    nonconvex: usize,
}

#[allow(clippy::too_many_arguments)]
fn collect_and_solve(
    plant: &mut dyn Plant,
    w: &mut QWeights,
    prev: Option<&QWeights>,
    i: usize,
    lambda: f64,
    rho: u32,
    obj: &Objective,
    cfg: &LearnConfig,
    rng: &mut Rng,
    c_base: &mut (f64, bool),
) -> Result<Collected> {
    let bounds = plant.bounds().clone();
    let k = w.basis.len();
    for retry in 0..=cfg.excitation_retries {
        let noise = cfg.noise.widened(10f64.powi(retry as i32));
        let current = GreedyPolicy::new(w, &bounds);
        let previous = prev.map(|p| GreedyPolicy::new(p, &bounds));
        let buffer = {
            let mut source = Exploration {
                iteration: i,
                current: &current,
                previous: previous.as_ref().map(|p| p as &dyn crate::system::Policy),
                noise,
                bounds: bounds.clone(),
                rng,
            };
            collect_buffer(plant, &mut source, &current, cfg.buffer_size, k, i)?
        };
        let nonconvex = current.nonconvex_count() + previous.as_ref().map_or(0, |p| p.nonconvex_count());
        if i == 0 {
            // Scaling Q⁰ leaves its greedy policy unchanged, so the buffer stays valid.
            let basis = w.basis.clone();
            *c_base = calibrate_q0(basis, &cfg.init, cfg.init_doublings, &buffer, rho, obj)?;
            *w = init_q0(w.basis.clone(), &InitConfig { c_base: c_base.0, ..cfg.init });
        }
        match policy_evaluate_ls(&buffer, w, lambda, rho, obj, cfg.rank_policy) {
            Ok(step) => return Ok(Collected { buffer, step, noise, nonconvex }),
            Err(Error::RankDeficient { .. }) => {}
            Err(e) => return Err(e),
        }
    }
    Err(Error::Excitation { retries: cfg.excitation_retries })
}

fn calibrate_q0(
    basis: Arc<BasisDescriptor>,
    init: &InitConfig,
    doublings: u32,
    buffer: &TransitionBuffer,
    rho: u32,
    obj: &Objective,
) -> Result<(f64, bool)> {
    let mut c = init.c_base;
    for _ in 0..=doublings {
        let q0 = init_q0(basis.clone(), &InitConfig { c_base: c, ..*init });
        if check_initial_condition(&q0, buffer, rho, obj)? {
            return Ok((c, true));
        }
        c *= 2.0;
    }
    Ok((init.c_base, false))
}

/// Learn a robust tracking Q-function by interacting with `plant`.
///
/// Each attempt starts from the deterministic Q⁰ at the current ρ and
/// iterates greedy improvement, λ selection, data collection and the
/// least-squares evaluation until the largest Q change over the buffer is at
/// most τ. The converged weights then go through the closed-loop robustness
/// check; a failure bumps ρ and starts a new attempt.
pub fn run_rlpi(
    plant: &mut dyn Plant,
    basis: Arc<BasisDescriptor>,
    obj: &Objective,
    cfg: &LearnConfig,
) -> Result<LearnOutcome> {
    cfg.validate(&basis)?;
    obj.cost.validate(plant.state_dim(), plant.action_dim())?;
    if basis.n() != plant.state_dim() || basis.p() != plant.reference_dim() || basis.m() != plant.action_dim() {
        return Err(Error::config("basis dimensions do not match the plant"));
    }
    let bounds = plant.bounds().clone();
    let mut rng = stream(cfg.seed, streams::EXPLORATION);
    let mut trace = LearnTrace::default();

    for rho in cfg.rho_start..=cfg.rho_max {
        let mut w = init_q0(basis.clone(), &cfg.init);
        let mut prev: Option<QWeights> = None;
        let mut c_base = (cfg.init.c_base, false);
        let mut i = 0usize;
        let w_star = loop {
            let lambda = lambda_value(&cfg.schedule, i);
            if cfg.replay_noise {
                rng = stream(cfg.seed, streams::EXPLORATION);
            }
            let col = collect_and_solve(plant, &mut w, prev.as_ref(), i, lambda, rho, obj, cfg, &mut rng, &mut c_base)?;
            let next = col.step.weights;
            let magnitude = next.w.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
            if !(magnitude <= DIVERGED_WEIGHT) {
                trace.attempts.push(AttemptRecord {
                    rho,
                    c_base: c_base.0,
                    initial_condition: c_base.1,
                    iterations: i + 1,
                    converged: false,
                    robustness: None,
                });
                return Err(Error::Diverged { rho, iteration: i, magnitude, trace: Box::new(trace) });
            }
            let mut change = 0.0_f64;
            let mut increase = f64::NEG_INFINITY;
            let mut cost_sum = 0.0;
            let mut action_sum = 0.0;
            for t in &col.buffer.entries {
                let d = next.value(&t.x, &t.r, &t.a) - w.value(&t.x, &t.r, &t.a);
                change = change.max(d.abs());
                increase = increase.max(d);
                cost_sum += stage_cost(&obj.cost, &t.x, &t.r, &t.a);
                action_sum += t.a.iter().sum::<f64>();
            }
            let nb = col.buffer.len() as f64;
            let gradient_condition = prev.as_ref().map(|p| check_gradient_condition(&w, p, &col.buffer, &bounds));
            trace.records.push(IterationRecord {
                rho,
                i,
                lambda,
                weights: next.w.clone(),
                max_q_change: change,
                max_q_increase: increase,
                nonconvex: col.nonconvex,
                condition: col.step.condition,
                rank: col.step.rank,
                noise_lo: col.noise.lo,
                noise_hi: col.noise.hi,
                mean_stage_cost: cost_sum / nb,
                mean_action: action_sum / nb,
                gradient_condition,
            });
            if change <= cfg.tau {
                break next;
            }
            i += 1;
            if i >= cfg.max_iters {
                trace.attempts.push(AttemptRecord {
                    rho,
                    c_base: c_base.0,
                    initial_condition: c_base.1,
                    iterations: i,
                    converged: false,
                    robustness: None,
                });
                return Err(Error::NotConverged { iterations: i, last_change: change, trace: Box::new(trace) });
            }
            prev = Some(std::mem::replace(&mut w, next));
        };
        let iterations = i + 1;

        let report = match &cfg.robustness {
            Some(rc) => Some(robustness_check(&w_star, plant, rho, obj, rc)?),
            None => None,
        };
        let accepted = report.as_ref().is_none_or(|r| r.passed);
        trace.attempts.push(AttemptRecord {
            rho,
            c_base: c_base.0,
            initial_condition: c_base.1,
            iterations,
            converged: true,
            robustness: report,
        });
        if accepted {
            trace.final_rho = Some(rho);
            trace.iterations = iterations;
            return Ok(LearnOutcome { weights: w_star, rho, trace });
        }
    }
    Err(Error::RobustnessNotAchieved { rho: cfg.rho_max, trace: Box::new(trace) })
}
