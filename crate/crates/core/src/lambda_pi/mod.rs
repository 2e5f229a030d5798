//! Robust λ-policy iteration with a least-squares Q critic.

mod cost;
mod driver;
mod robustness;
mod schedule;
mod trace;

pub use cost::{
    robust_inequality_check, robust_inequality_holds, gamma_term, stage_cost, CostSpec, GammaMode, Objective,
};
pub use driver::{
    bellman_residual, check_initial_condition, check_gradient_condition, policy_evaluate_ls, regression_system, run_rlpi,
    LearnConfig, LearnOutcome, LsStep,
};
pub use robustness::{robustness_check, Clause, Failure, ResidualTol, RobustnessConfig, RobustnessReport};
pub use schedule::{lambda_value, LambdaRule, LambdaSchedule};
pub use trace::{AttemptRecord, IterationRecord, LearnTrace, TraceLine};
