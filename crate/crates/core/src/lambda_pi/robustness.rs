use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::cost::{robust_inequality_check, gamma_term, stage_cost, GammaMode, Objective};
use crate::error::Result;
use crate::qmodel::QWeights;
use crate::rng::{stream, streams};
use crate::system::{Plant, ReferenceState, SystemState};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ResidualTol {
    /// factor × median stage cost over the check window.
    RelativeMedianStageCost { factor: f64 },
    Absolute { value: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RobustnessConfig {
    /// Closed-loop steps C.
    pub steps: usize,
    pub residual: ResidualTol,
    /// Extra (x, r, a) points sampled from the plant domain for positivity.
    pub grid_points: usize,
    pub origin_tol: f64,
    pub action_tol: f64,
    pub seed: u64,
}

impl Default for RobustnessConfig {
    fn default() -> Self {
        Self {
            steps: 576,
            residual: ResidualTol::RelativeMedianStageCost { factor: 1e-2 },
            grid_points: 1000,
            origin_tol: 1e-8,
            action_tol: 1e-8,
            seed: 0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Clause {
    PositiveDefinite,
    BellmanResidual,
    Condition10,
    PolicyAtOrigin,
    Rollout,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Failure {
    /// Closed-loop step, or `None` for checks not tied to a step.
    pub step: Option<usize>,
    pub clause: Clause,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RobustnessReport {
    pub passed: bool,
    pub steps_run: usize,
    pub residual_tol: f64,
    pub median_stage_cost: f64,
    pub max_abs_residual: f64,
    pub residual_failures: usize,
    pub min_robust_inequality_margin: f64,
    pub robust_inequality_failures: usize,
    pub q_at_origin: f64,
    pub min_q_sampled: f64,
    pub positivity_failures: usize,
    pub policy_at_origin: Vec<f64>,
    pub first_failure: Option<Failure>,
}

struct Step {
    residual: f64,
    cond10: bool,
    positive: bool,
}

/// Roll the nominal closed loop under the greedy policy of `w_star` and test
/// positivity, Bellman residual, the robustness inequality and μ̂*(0, 0) = 0.
pub fn robustness_check(
    w_star: &QWeights,
    plant: &mut dyn Plant,
    rho: u32,
    obj: &Objective,
    cfg: &RobustnessConfig,
) -> Result<RobustnessReport> {
    let bounds = plant.bounds().clone();
    let gamma = obj.cost.gamma;
    let mut steps: Vec<Step> = Vec::with_capacity(cfg.steps);
    let mut costs = Vec::with_capacity(cfg.steps);
    let mut min_margin = f64::INFINITY;
    let mut min_q = f64::INFINITY;
    let mut rollout_failure = None;

    for k in 0..cfg.steps {
        if plant.episode_done() {
            plant.reset();
        }
        let (x, r) = plant.observe();
        let a = match plant.advance(&w_star.greedy(&x, &r, &bounds).action) {
            Ok(applied) => applied,
            Err(_) => {
                rollout_failure = Some(k);
                break;
            }
        };
        let (xn, rn) = plant.observe();
        let an = w_star.greedy(&xn, &rn, &bounds).action;
        let l = stage_cost(&obj.cost, &x, &r, &a);
        let g = gamma_term(w_star, rho, obj, &x, &xn, &rn, &an)?;
        let q = w_star.value(&x, &r, &a);
        let residual = q - l - g - gamma * w_star.value(&xn, &rn, &an);
        let (cond10, margin) = if obj.gamma_mode == GammaMode::Full {
            robust_inequality_check(w_star, rho, obj, &x, &xn, &rn, &an)?
        } else {
            (true, 0.0)
        };
        let at_origin = x.iter().chain(r.iter()).chain(a.iter()).all(|v| *v == 0.0);
        let positive = at_origin || q > 0.0;
        if !at_origin {
            min_q = min_q.min(q);
        }
        min_margin = min_margin.min(margin);
        costs.push(l);
        steps.push(Step { residual, cond10, positive });
    }

    let median = median(&mut costs.clone());
    let residual_tol = match cfg.residual {
        ResidualTol::RelativeMedianStageCost { factor } => factor * median,
        ResidualTol::Absolute { value } => value,
    };

    let mut first_failure: Option<Failure> = None;
    let mut note = |f: Failure| {
        if first_failure.is_none() {
            first_failure = Some(f);
        }
    };
    let (mut residual_failures, mut robust_inequality_failures, mut positivity_failures) = (0, 0, 0);
    let mut max_abs_residual = 0.0_f64;
    for (k, s) in steps.iter().enumerate() {
        max_abs_residual = max_abs_residual.max(s.residual.abs());
        if !s.positive {
            positivity_failures += 1;
            note(Failure { step: Some(k), clause: Clause::PositiveDefinite });
        }
        if !(s.residual.abs() <= residual_tol) {
            residual_failures += 1;
            note(Failure { step: Some(k), clause: Clause::BellmanResidual });
        }
        if !s.cond10 {
            robust_inequality_failures += 1;
            note(Failure { step: Some(k), clause: Clause::Condition10 });
        }
    }
    if let Some(k) = rollout_failure {
        note(Failure { step: Some(k), clause: Clause::Rollout });
    }

    let domain = plant.domain();
    let mut rng = stream(cfg.seed, streams::GRID_SAMPLES);
    for _ in 0..cfg.grid_points {
        let (x, r) = domain.sample(&mut rng);
        let a: Vec<f64> =
            bounds.lo.iter().zip(&bounds.hi).map(|(l, h)| if l < h { rng.gen_range(*l..=*h) } else { *l }).collect();
        if x.iter().chain(r.iter()).chain(a.iter()).all(|v| *v == 0.0) {
            continue;
        }
        let q = w_star.value(&x, &r, &a);
        min_q = min_q.min(q);
        if !(q > 0.0) {
            positivity_failures += 1;
            note(Failure { step: None, clause: Clause::PositiveDefinite });
        }
    }

    let n = plant.state_dim();
    let p = plant.reference_dim();
    let m = plant.action_dim();
    let zero_x = SystemState::zeros(n);
    let zero_r = ReferenceState::zeros(p);
    let q_at_origin = w_star.value(&zero_x, &zero_r, &vec![0.0; m]);
    if !(q_at_origin.abs() <= cfg.origin_tol) {
        positivity_failures += 1;
        note(Failure { step: None, clause: Clause::PositiveDefinite });
    }
    let policy_at_origin = w_star.greedy(&zero_x, &zero_r, &bounds).action.0;
    if policy_at_origin.iter().any(|v| !(v.abs() <= cfg.action_tol)) {
        note(Failure { step: None, clause: Clause::PolicyAtOrigin });
    }

    Ok(RobustnessReport {
        passed: first_failure.is_none(),
        steps_run: steps.len(),
        residual_tol,
        median_stage_cost: median,
        max_abs_residual,
        residual_failures,
        min_robust_inequality_margin: min_margin,
        robust_inequality_failures,
        q_at_origin,
        min_q_sampled: min_q,
        positivity_failures,
        policy_at_origin,
        first_failure,
    })
}

fn median(v: &mut [f64]) -> f64 {
    if v.is_empty() {
        return 0.0;
    }
    v.sort_by(|a, b| a.total_cmp(b));
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}
