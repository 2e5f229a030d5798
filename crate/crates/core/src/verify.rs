//! Property suites over exact grid MDPs and the LQT oracle, shared by the
//! command line and the acceptance tests.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::envs::{lqt_riccati_oracle, LqtSetup};
use crate::error::Result;
use crate::exact_dp::{
    bellman_backup, lambda_order_holds, exact_lambda_pi, initial_table, inner_iterate, lambda_fixed_point,
    reference_grid, GridDynamics, GridMdp,
};
use crate::lambda_pi::{run_rlpi, GammaMode, LambdaSchedule};
use crate::qmodel::QWeights;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SuiteOutcome {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VerifyLevel {
    Quick,
    Full,
}

impl std::str::FromStr for VerifyLevel {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "quick" => Ok(Self::Quick),
            "full" => Ok(Self::Full),
            other => Err(format!("unknown verify level {other:?} (quick or full)")),
        }
    }
}

pub type NamedGrid = (&'static str, GridMdp);

/// The three reference grids with `points` nodes per axis.
pub fn reference_grids(points: usize, tracking: bool) -> Result<Vec<NamedGrid>> {
    GridDynamics::ALL.iter().map(|&d| Ok((d.name(), reference_grid(d, points, tracking, GammaMode::Full)?))).collect()
}

fn outcome(name: &str, passed: bool, detail: String) -> SuiteOutcome {
    SuiteOutcome { name: name.to_string(), passed, detail }
}

/// Inner λ-evaluation sequence from Q⁰: pointwise non-increasing and within
/// (λγ)^j/(1 − λγ)·‖Ξ⁰ − Ξ¹‖∞ of its limit for j ≤ `steps`.
pub fn inner_sequence_suite(grids: &[NamedGrid], lambdas: &[f64], steps: usize, slack: f64) -> SuiteOutcome {
    let mut worst_rise = f64::NEG_INFINITY;
    let mut worst_excess = f64::NEG_INFINITY;
    let mut failures = Vec::new();
    for (name, mdp) in grids {
        let Some((_, q)) = initial_table(mdp) else {
            failures.push(format!("{name}: no initial table"));
            continue;
        };
        for &lambda in lambdas {
            let seq = inner_iterate(mdp, &q, lambda, steps);
            let beta = lambda * mdp.gamma;
            let gap = seq.tables[0].max_abs_diff(&seq.tables[1]);
            let mut ok = seq.precondition;
            for j in 0..=steps {
                if j < steps {
                    let rise = seq.tables[j + 1].max_excess_over(&seq.tables[j]);
                    worst_rise = worst_rise.max(rise);
                    ok &= rise <= slack;
                }
                let excess = seq.tables[j].max_abs_diff(&seq.limit) - beta.powi(j as i32) / (1.0 - beta) * gap;
                worst_excess = worst_excess.max(excess);
                ok &= excess <= slack;
            }
            if !ok {
                failures.push(format!("{name} λ={lambda}"));
            }
        }
    }
    outcome(
        "inner-sequence",
        failures.is_empty(),
        format!("max rise {worst_rise:.2e}, max bound excess {worst_excess:.2e}, failing {failures:?}"),
    )
}

/// Outer λ-PI from a checked Q⁰ with the gradient condition checked every
/// iteration: Q^{i+1} ≤ T Q^i ≤ Q^i and the limit equals value iteration's.
pub fn monotone_iteration_suite(grids: &[NamedGrid], slack: f64, fixed_point_tol: f64) -> Result<SuiteOutcome> {
    let mut worst_rise = f64::NEG_INFINITY;
    let mut worst_gap = 0.0_f64;
    let mut failures = Vec::new();
    let mut counts = Vec::new();
    for (name, mdp) in grids {
        let Some((_, q0)) = initial_table(mdp) else {
            failures.push(format!("{name}: no initial table"));
            continue;
        };
        let run = exact_lambda_pi(mdp, &q0, &LambdaSchedule::default(), 1e-10, 1000)?;
        let vi = exact_lambda_pi(mdp, &q0, &LambdaSchedule::value_iteration(), 1e-12, 5000)?;
        let mut ok = run.initial_condition && run.gradient_condition.iter().all(|c| *c);
        for w in run.tables.windows(2) {
            let backup = bellman_backup(mdp, &w[0]);
            let rise = w[1]
                .max_excess_over(&backup)
                .max(backup.max_excess_over(&w[0]))
                .max(w[1].max_excess_over(&w[0]));
            worst_rise = worst_rise.max(rise);
            ok &= rise <= slack;
        }
        let gap = vi.last().max_abs_diff(run.last());
        worst_gap = worst_gap.max(gap);
        ok &= gap <= fixed_point_tol;
        counts.push(format!("{name} {}/{}", run.iterations, vi.iterations));
        if !ok {
            failures.push(name.to_string());
        }
    }
    Ok(outcome(
        "monotone-iteration",
        failures.is_empty(),
        format!(
            "max rise {worst_rise:.2e}, gap to VI {worst_gap:.2e}, iterations λ-PI/VI {counts:?}, failing {failures:?}"
        ),
    ))
}

/// Larger λ gives a pointwise smaller λ-evaluation of the same Q.
pub fn lambda_ordering_suite(grids: &[NamedGrid], sweep: &[f64], slack: f64) -> SuiteOutcome {
    let mut worst = f64::NEG_INFINITY;
    let mut failures = Vec::new();
    for (name, mdp) in grids {
        let Some((_, q)) = initial_table(mdp) else {
            failures.push(format!("{name}: no initial table"));
            continue;
        };
        let tables: Vec<_> = sweep.iter().map(|&l| lambda_fixed_point(mdp, &q, l)).collect();
        for i in 0..sweep.len() {
            for j in i + 1..sweep.len() {
                let rise = tables[j].max_excess_over(&tables[i]);
                worst = worst.max(rise);
                if !(rise <= slack) || !lambda_order_holds(mdp, &q, sweep[i], sweep[j], slack) {
                    failures.push(format!("{name} {}<{}", sweep[i], sweep[j]));
                }
            }
        }
    }
    outcome("lambda-ordering", failures.is_empty(), format!("max rise {worst:.2e}, failing {failures:?}"))
}

/// ‖w − w*‖∞ / ‖w*‖∞.
pub fn relative_weight_error(w: &QWeights, oracle: &QWeights) -> f64 {
    let scale = oracle.w.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    let err = w.w.iter().zip(&oracle.w).fold(0.0_f64, |m, (a, b)| m.max((a - b).abs()));
    err / scale
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OracleComparison {
    pub iterations: usize,
    pub relative_error: f64,
}

/// Learn the Γ-disabled validation LQT from data and compare with Riccati.
pub fn riccati_comparison(schedule: &LambdaSchedule, seed: u64) -> Result<OracleComparison> {
    let setup = LqtSetup::validation();
    let basis = Arc::new(setup.env.basis()?);
    let mut plant = setup.plant(seed);
    let mut cfg = setup.learn_config(seed);
    cfg.schedule = *schedule;
    let out = run_rlpi(&mut plant, basis, &setup.objective(), &cfg)?;
    let oracle = lqt_riccati_oracle(&setup.env)?;
    Ok(OracleComparison { iterations: out.trace.iterations, relative_error: relative_weight_error(&out.weights, &oracle) })
}

pub fn riccati_suite(tol: f64) -> SuiteOutcome {
    match riccati_comparison(&LambdaSchedule::default(), 0) {
        Ok(c) => outcome(
            "riccati-oracle",
            c.relative_error <= tol,
            format!("relative error {:.2e} after {} iterations", c.relative_error, c.iterations),
        ),
        Err(e) => outcome("riccati-oracle", false, e.to_string()),
    }
}

/// Quick runs the grid suites on 9-node grids; full uses 21 nodes per axis
/// and adds the data-driven LQT comparison.
pub fn run_verify(level: VerifyLevel) -> Result<Vec<SuiteOutcome>> {
    let points = match level {
        VerifyLevel::Quick => 9,
        VerifyLevel::Full => 21,
    };
    let tracking = reference_grids(points, true)?;
    let regulation = reference_grids(points, false)?;
    let mut out = vec![
        inner_sequence_suite(&tracking, &[0.1, 0.5, 0.9], 100, 1e-10),
        monotone_iteration_suite(&regulation, 1e-12, 1e-8)?,
        lambda_ordering_suite(&tracking, &[0.1, 0.3, 0.5, 0.7, 0.9], 1e-12),
    ];
    if level == VerifyLevel::Full {
        out.push(riccati_suite(1e-6));
    }
    Ok(out)
}
