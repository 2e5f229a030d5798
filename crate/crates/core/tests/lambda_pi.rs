use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::Rng;
use rlpi_core::envs::LqtSetup;
use rlpi_core::lambda_pi::{
    gamma_term, lambda_value, policy_evaluate_ls, regression_system, run_rlpi, stage_cost, CostSpec, GammaMode,
    LambdaSchedule, Objective,
};
use rlpi_core::linalg::RankPolicy;
use rlpi_core::qmodel::{init_q0, BasisDescriptor, InitConfig, QWeights};
use rlpi_core::rng::stream;
use rlpi_core::system::{
    ActionBounds, ActionVector, ReferenceState, SystemState, Transition, TransitionBuffer, UncertaintySpec,
};

fn basis() -> Arc<BasisDescriptor> {
    Arc::new(BasisDescriptor::harness())
}

/// Random one-step pairs of the validation LQT with the successor action
/// taken greedily from `w`.
fn random_buffer(w: &QWeights, size: usize, seed: u64) -> TransitionBuffer {
    let mut rng = stream(seed, 0);
    let bounds = ActionBounds::symmetric(1, 5.0);
    let entries = (0..size)
        .map(|_| {
            let x: Vec<f64> = (0..2).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let r = vec![rng.gen_range(-1.0..1.0)];
            let a = vec![rng.gen_range(-1.0..1.0)];
            let x_next = vec![0.9 * x[0] + 0.2 * x[1], 0.7 * x[1] + a[0]];
            let a_next = w.greedy(&x_next, &r, &bounds).action;
            Transition {
                x: SystemState::new(x),
                r: ReferenceState::new(r.clone()),
                a: ActionVector::new(a),
                x_next: SystemState::new(x_next),
                r_next: ReferenceState::new(r),
                a_next_policy: a_next,
            }
        })
        .collect();
    TransitionBuffer { entries, iteration: 1 }
}

fn objective(mode: GammaMode) -> Objective {
    Objective {
        cost: CostSpec { s: vec![vec![1.0]], r: vec![vec![0.5]], gamma: 0.95, tracked: vec![0], scale: 1.0 },
        uncertainty: UncertaintySpec::quadratic(0.3),
        gamma_mode: mode,
    }
}

fn convex_weights(raw: Vec<f64>) -> QWeights {
    let q0 = init_q0(basis(), &InitConfig { c_base: 1.0, action_ratio: 10.0 });
    let w: Vec<f64> = q0.w.iter().zip(raw).map(|(a, b)| a + 0.1 * b).collect();
    QWeights::new(basis(), w).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn ls_residual_is_orthogonal_to_the_regressors(raw in prop::collection::vec(-1.0f64..1.0, 28), lambda in 0.0f64..0.99, rho in 1u32..5, seed in any::<u64>()) {
        let w = convex_weights(raw);
        let buf = random_buffer(&w, 144, seed);
        let obj = objective(GammaMode::Full);
        let (psi, z) = regression_system(&buf, &w, lambda, rho, &obj).unwrap();
        let step = policy_evaluate_ls(&buf, &w, lambda, rho, &obj, RankPolicy::Strict { rcond: 1e-12 }).unwrap();
        let sol = DVector::from_column_slice(&step.weights.w);
        let normal = psi.transpose() * (&psi * sol - &z);
        prop_assert!(normal.amax() <= 1e-8 * z.amax(), "normal residual {:e}, targets {:e}", normal.amax(), z.amax());
    }

    #[test]
    fn zero_lambda_step_is_fitted_value_iteration(raw in prop::collection::vec(-1.0f64..1.0, 28), rho in 1u32..5, seed in any::<u64>()) {
        let w = convex_weights(raw);
        let buf = random_buffer(&w, 144, seed);
        let obj = objective(GammaMode::Full);
        let (psi, z) = regression_system(&buf, &w, 0.0, rho, &obj).unwrap();
        let rows = buf.len();
        let mut phi = DMatrix::zeros(rows, 28);
        let mut target = DVector::zeros(rows);
        let rho = rho as f64;
        for (b, t) in buf.entries.iter().enumerate() {
            for (j, v) in w.basis.eval(&t.x, &t.r, &t.a).into_iter().enumerate() {
                phi[(b, j)] = v;
            }
            // l = (x1 − r)² + 0.5 a², Δ² = 0.3 xᵀx, Γ = ρ²Δ² + γ/4 ‖∇ₓQ(x', r', a')‖²
            let l = (t.x[0] - t.r[0]).powi(2) + 0.5 * t.a[0] * t.a[0];
            let delta_sq = 0.3 * (t.x[0] * t.x[0] + t.x[1] * t.x[1]);
            let h = 1e-5;
            let q = |dx: f64, dy: f64| w.value(&[t.x_next[0] + dx, t.x_next[1] + dy], &t.r_next, &t.a_next_policy);
            let gx = (q(h, 0.0) - q(-h, 0.0)) / (2.0 * h);
            let gy = (q(0.0, h) - q(0.0, -h)) / (2.0 * h);
            let g = rho * rho * delta_sq + 0.25 * 0.95 * (gx * gx + gy * gy);
            target[b] = l + g + 0.95 * w.value(&t.x_next, &t.r_next, &t.a_next_policy);
        }
        prop_assert!((&psi - &phi).amax() == 0.0);
        let tol = 1e-6 * target.amax().max(1.0);
        prop_assert!((&z - &target).amax() <= tol, "target mismatch {:e}", (&z - &target).amax());
    }

    #[test]
    fn stage_cost_and_gamma_are_nonnegative(
        raw in prop::collection::vec(-1.0f64..1.0, 28),
        x in prop::collection::vec(-10.0f64..10.0, 2),
        xn in prop::collection::vec(-10.0f64..10.0, 2),
        r in -10.0f64..10.0,
        a in -5.0f64..5.0,
        rho in 1u32..10,
    ) {
        let w = QWeights::new(basis(), raw).unwrap();
        let obj = objective(GammaMode::Full);
        prop_assert!(stage_cost(&obj.cost, &x, &[r], &[a]) >= 0.0);
        prop_assert!(stage_cost(&CostSpec::harness(), &x, &[r], &[a]) >= 0.0);
        prop_assert!(gamma_term(&w, rho, &obj, &x, &xn, &[r], &[a]).unwrap() >= 0.0);
        prop_assert_eq!(gamma_term(&w, rho, &objective(GammaMode::Disabled), &x, &xn, &[r], &[a]).unwrap(), 0.0);
    }

    #[test]
    fn stage_cost_vanishes_exactly_on_tracking_with_zero_action(x2 in -10.0f64..10.0, r in -10.0f64..10.0, e in 1e-6f64..1.0, a in 1e-6f64..1.0) {
        let cost = objective(GammaMode::Full).cost;
        prop_assert_eq!(stage_cost(&cost, &[r, x2], &[r], &[0.0]), 0.0);
        prop_assert!(stage_cost(&cost, &[r + e, x2], &[r], &[0.0]) > 0.0);
        prop_assert!(stage_cost(&cost, &[r, x2], &[r], &[a]) > 0.0);
    }

    #[test]
    fn lambda_schedule_is_nondecreasing_below_one(rate in 0.01f64..5.0, cap in 0.0f64..0.9999) {
        let s = LambdaSchedule { rule: rlpi_core::lambda_pi::LambdaRule::Tanh { rate }, cap };
        prop_assert_eq!(lambda_value(&s, 0), 0.0);
        let mut prev = 0.0;
        for i in 0..2000 {
            let l = lambda_value(&s, i);
            prop_assert!(l >= prev && l < 1.0);
            prev = l;
        }
    }
}

#[test]
fn gamma_vanishes_at_the_origin_with_flat_successor() {
    let obj = objective(GammaMode::Full);
    let flat = QWeights::zeros(basis());
    assert_eq!(gamma_term(&flat, 3, &obj, &[0.0, 0.0], &[0.4, -1.0], &[0.2], &[0.1]).unwrap(), 0.0);
    assert!(gamma_term(&flat, 3, &obj, &[0.1, 0.0], &[0.4, -1.0], &[0.2], &[0.1]).unwrap() > 0.0);
}

/// Where the initialization and gradient checks both hold, the fitted Q must
/// not rise on the buffer; iterations where a check fails are only counted.
#[test]
fn learned_q_does_not_rise_where_the_checks_hold() {
    for setup in [LqtSetup::validation(), LqtSetup::robust_validation()] {
        let basis = Arc::new(setup.env.basis().unwrap());
        let mut plant = setup.plant(0);
        let out = run_rlpi(&mut plant, basis, &setup.objective(), &setup.learn_config(0)).unwrap();
        let (mut checked, mut skipped) = (0, 0);
        for attempt in &out.trace.attempts {
            let records: Vec<_> = out.trace.records_for(attempt.rho).collect();
            assert_eq!(records.len(), attempt.iterations);
            let scale = records.iter().map(|r| r.max_q_change).fold(1.0_f64, f64::max);
            for r in records {
                assert_eq!(r.gradient_condition.is_some(), r.i > 0);
                if attempt.initial_condition && r.gradient_condition == Some(true) {
                    assert!(r.max_q_increase <= 1e-6 * scale, "rise {:e} at i={}", r.max_q_increase, r.i);
                    checked += 1;
                } else {
                    skipped += 1;
                }
            }
        }
        assert_eq!(checked + skipped, out.trace.records.len());
    }
}

#[test]
fn trace_lines_parse_back() {
    let setup = LqtSetup::validation();
    let basis = Arc::new(setup.env.basis().unwrap());
    let mut plant = setup.plant(1);
    let out = run_rlpi(&mut plant, basis, &setup.objective(), &setup.learn_config(1)).unwrap();
    let mut buf = Vec::new();
    out.trace.write_jsonl(&mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    let lines: Vec<rlpi_core::lambda_pi::TraceLine> =
        text.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(lines.len(), out.trace.records.len() + out.trace.attempts.len());
    assert_eq!(out.trace.final_rho, Some(out.rho));
}
