//! One line per acceptance criterion; exits non-zero if any criterion fails.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::{Duration, Instant};

use rand::Rng;
use rayon::prelude::*;
use rlpi_cli::config::{AlgorithmConfig, EnvironmentSpec, ExperimentConfig, GlucoseSpec};
use rlpi_cli::evaluate::{cmd_evaluate, glucose_trial};
use rlpi_cli::learn::{cmd_learn, learn_subject};
use rlpi_core::envs::{tracking_error, LqtSetup};
use rlpi_core::glucosim::{make_cohort, Cohort};
use rlpi_core::lambda_pi::{run_rlpi, LambdaSchedule};
use rlpi_core::qmodel::{q_eval, q_grad_x, q_hess_x, BasisDescriptor, QWeights, StateRefAction};
use rlpi_core::rng::{child_seed, stream};
use rlpi_core::verify::{
    inner_sequence_suite, lambda_ordering_suite, monotone_iteration_suite, reference_grids, riccati_comparison,
};

type Criterion = Box<dyn FnOnce() -> (Verdict, Option<Duration>)>;

struct Verdict {
    passed: bool,
    detail: String,
}

fn verdict(passed: bool, detail: impl Into<String>) -> Verdict {
    Verdict { passed, detail: detail.into() }
}

fn within(limit: Duration, elapsed: Duration) -> bool {
    elapsed < limit
}

fn riccati_oracle() -> (Verdict, Option<Duration>) {
    let start = Instant::now();
    let c = riccati_comparison(&LambdaSchedule::default(), 0);
    let t = start.elapsed();
    let v = match c {
        Ok(c) => verdict(
            c.relative_error <= 1e-6 && within(Duration::from_secs(60), t),
            format!("relative error {:.2e} after {} iterations", c.relative_error, c.iterations),
        ),
        Err(e) => verdict(false, e.to_string()),
    };
    (v, Some(Duration::from_secs(60)))
}

fn suite(
    limit: Option<Duration>,
    f: impl FnOnce() -> rlpi_core::Result<rlpi_core::verify::SuiteOutcome>,
) -> (Verdict, Option<Duration>) {
    let start = Instant::now();
    let v = match f() {
        Ok(o) => verdict(o.passed && limit.is_none_or(|l| within(l, start.elapsed())), o.detail),
        Err(e) => verdict(false, e.to_string()),
    };
    (v, limit)
}

fn glucose_iterations(schedule: LambdaSchedule, subjects: usize) -> Vec<Result<usize, String>> {
    let spec = GlucoseSpec::default();
    let algo = AlgorithmConfig { lambda: schedule, ..AlgorithmConfig::default() };
    let seeds = rlpi_cli::config::Seeds::default();
    make_cohort(Cohort::T1ADU, subjects, seeds.cohort)
        .par_iter()
        .enumerate()
        .map(|(k, p)| {
            let (res, _) = learn_subject(p, &spec, &algo, child_seed(seeds.learn, k as u64));
            res.map(|o| o.trace.iterations).map_err(|e| e.to_string())
        })
        .collect()
}

fn iteration_ordering() -> (Verdict, Option<Duration>) {
    let mut notes = Vec::new();
    let mut passed = true;
    match (riccati_comparison(&LambdaSchedule::default(), 0), riccati_comparison(&LambdaSchedule::value_iteration(), 0)) {
        (Ok(a), Ok(b)) => {
            passed &= a.iterations < b.iterations;
            notes.push(format!("LQT {}/{}", a.iterations, b.iterations));
        }
        (a, b) => {
            passed = false;
            notes.push(format!("LQT failed: {:?} / {:?}", a.err().map(|e| e.to_string()), b.err().map(|e| e.to_string())));
        }
    }
    let pi = glucose_iterations(LambdaSchedule::default(), 5);
    let vi = glucose_iterations(LambdaSchedule::value_iteration(), 5);
    for (k, (a, b)) in pi.iter().zip(&vi).enumerate() {
        match (a, b) {
            (Ok(a), Ok(b)) => {
                passed &= a < b;
                notes.push(format!("subject {k} {a}/{b}"));
            }
            _ => {
                passed = false;
                let short = |r: &Result<usize, String>| r.as_ref().map_or_else(|e| e.clone(), |n| n.to_string());
                notes.push(format!("subject {k} not converged ({} / {})", short(a), short(b)));
            }
        }
    }
    (verdict(passed, format!("iterations λ-PI/VI: {}", notes.join("; "))), None)
}

fn derivatives() -> (Verdict, Option<Duration>) {
    let basis = Arc::new(BasisDescriptor::harness());
    let mut rng = stream(2024, 0);
    let (mut worst_g, mut worst_h) = (0.0_f64, 0.0_f64);
    for _ in 0..1000 {
        let w = QWeights::new(basis.clone(), (0..basis.len()).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap();
        let x = [rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0)];
        let r = vec![rng.gen_range(-2.0..2.0)];
        let a = vec![rng.gen_range(-2.0..2.0)];
        let q = |dx: [f64; 2]| q_eval(&w, &StateRefAction::new(vec![x[0] + dx[0], x[1] + dx[1]], r.clone(), a.clone()));
        let p = StateRefAction::new(x.to_vec(), r.clone(), a.clone());
        let g = q_grad_x(&w, &p);
        let hs = q_hess_x(&w, &p);
        let (hg, hh) = (1e-6, 1e-4);
        let gscale = g.iter().fold(1.0_f64, |m, v| m.max(v.abs()));
        let hscale = hs.amax().max(1.0);
        for i in 0..2 {
            let mut e = [0.0; 2];
            e[i] = hg;
            let fd = (q(e) - q([-e[0], -e[1]])) / (2.0 * hg);
            worst_g = worst_g.max((g[i] - fd).abs() / gscale);
            for j in 0..2 {
                let shift = |si: f64, sj: f64| {
                    let mut d = [0.0; 2];
                    d[i] += si * hh;
                    d[j] += sj * hh;
                    q(d)
                };
                let fd = (shift(1.0, 1.0) - shift(1.0, -1.0) - shift(-1.0, 1.0) + shift(-1.0, -1.0)) / (4.0 * hh * hh);
                worst_h = worst_h.max((hs[(i, j)] - fd).abs() / hscale);
            }
        }
    }
    (
        verdict(worst_g <= 1e-6 && worst_h <= 1e-4, format!("max relative error: gradient {worst_g:.2e}, Hessian {worst_h:.2e}")),
        None,
    )
}

fn rho_escalation() -> (Verdict, Option<Duration>) {
    let setup = LqtSetup::robust_validation();
    let basis = Arc::new(setup.env.basis().unwrap());
    let out = match run_rlpi(&mut setup.plant(0), basis.clone(), &setup.objective(), &setup.learn_config(0)) {
        Ok(o) => o,
        Err(e) => return (verdict(false, e.to_string()), None),
    };
    let Some(rejected) = out.trace.records_for(1).last().filter(|_| out.rho > 1) else {
        return (verdict(false, format!("accepted at ρ = {}; no rejected ρ = 1 policy", out.rho)), None);
    };
    let rejected = QWeights::new(basis, rejected.weights.clone()).unwrap();
    let rollouts = |w: &QWeights| -> rlpi_core::Result<f64> {
        let mut plant = setup.uncertain_plant(7)?;
        tracking_error(&mut plant, w, &setup.env.cost.tracked, 10, 50)
    };
    match (rollouts(&out.weights), rollouts(&rejected)) {
        (Ok(a), Ok(b)) => (
            verdict(a < b, format!("accepted at ρ = {}; tracking error {a:.4e} vs ρ = 1 policy {b:.4e}", out.rho)),
            None,
        ),
        (a, b) => (verdict(false, format!("rollout failed: {a:?} / {b:?}")), None),
    }
}

fn clinical_smoke() -> (Verdict, Option<Duration>) {
    let limit = Duration::from_secs(600);
    let start = Instant::now();
    let spec = GlucoseSpec::default();
    let seeds = rlpi_cli::config::Seeds::default();
    let subjects = make_cohort(Cohort::T1ADU, 10, seeds.cohort);
    let algo = |lambda| AlgorithmConfig { lambda, ..AlgorithmConfig::default() };
    let (pi, vi) = (algo(LambdaSchedule::default()), algo(LambdaSchedule::value_iteration()));
    let rows: Vec<(bool, String)> = subjects
        .par_iter()
        .enumerate()
        .map(|(k, p)| {
            let learn_seed = child_seed(seeds.learn, k as u64);
            let trial_seed = child_seed(child_seed(seeds.evaluate, k as u64), 0);
            let trial = |a: &AlgorithmConfig| -> Result<(f64, f64), String> {
                let w = learn_subject(p, &spec, a, learn_seed).0.map_err(|e| format!("learn: {e}"))?.weights;
                let (t, _) = glucose_trial(&spec, p, &w, 14, 0, trial_seed).map_err(|e| format!("trial: {e}"))?;
                if let Some(why) = t.aborted {
                    return Err(format!("trial aborted: {why}"));
                }
                Ok((t.cgm.bands.severe_hypo, t.cgm.bands.normo))
            };
            match (trial(&pi), trial(&vi)) {
                (Ok((severe, tir)), Ok((_, tir_vi))) => {
                    (severe == 0.0 && tir >= tir_vi, format!("subject {k}: <50 {severe:.2}%, TIR {tir:.1}% vs {tir_vi:.1}%"))
                }
                (a, b) => (false, format!("subject {k}: {} / {}", a.err().unwrap_or_default(), b.err().unwrap_or_default())),
            }
        })
        .collect();
    let passed = rows.iter().all(|r| r.0) && within(limit, start.elapsed());
    let failing = rows.iter().filter(|r| !r.0).count();
    let detail = format!("{failing}/10 subjects failing; {}", rows.iter().map(|r| r.1.as_str()).collect::<Vec<_>>().join("; "));
    (verdict(passed, detail), Some(limit))
}

fn read_tree(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in std::fs::read_dir(&dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                out.insert(path.strip_prefix(root).unwrap().to_path_buf(), std::fs::read(&path).unwrap());
            }
        }
    }
    out
}

fn determinism() -> (Verdict, Option<Duration>) {
    let mut notes = Vec::new();
    let mut passed = true;
    let glucose = ExperimentConfig {
        environment: EnvironmentSpec::Glucose(GlucoseSpec { subjects: 2, ..GlucoseSpec::default() }),
        ..ExperimentConfig::default()
    };
    for (name, base) in [("lqt", ExperimentConfig::lqt()), ("glucose", glucose)] {
        // both runs write to the same path, since the config records it
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("run");
        let cfg = ExperimentConfig { output_dir: out.clone(), ..base };
        let trees: Vec<_> = (0..2)
            .map(|_| {
                let _ = std::fs::remove_dir_all(&out);
                let learn = cmd_learn(&cfg).map(|_| ()).map_err(|e| e.to_string());
                let eval = cmd_evaluate(&cfg).map(|_| ()).map_err(|e| e.to_string());
                (read_tree(&out), learn, eval)
            })
            .collect();
        let same = trees[0] == trees[1];
        passed &= same && !trees[0].0.is_empty();
        notes.push(format!(
            "{name}: {} files {} (learn {:?}, evaluate {:?})",
            trees[0].0.len(),
            if same { "identical" } else { "differ" },
            trees[0].1.as_ref().map_or_else(|e| e.as_str(), |_| "ok"),
            trees[0].2.as_ref().map_or_else(|e| e.as_str(), |_| "ok"),
        ));
    }
    (verdict(passed, notes.join("; ")), None)
}

fn main() {
    let grids = |tracking| reference_grids(21, tracking);
    let criteria: Vec<(&str, Criterion)> = vec![
        ("Riccati oracle equivalence", Box::new(riccati_oracle)),
        (
            "inner λ-sequence monotone and bounded",
            Box::new(move || {
                suite(Some(Duration::from_secs(30)), || Ok(inner_sequence_suite(&grids(true)?, &[0.1, 0.5, 0.9], 100, 1e-10)))
            }),
        ),
        (
            "monotone λ-PI reaches the VI fixed point",
            Box::new(move || suite(Some(Duration::from_secs(60)), || monotone_iteration_suite(&grids(false)?, 1e-12, 1e-8))),
        ),
        (
            "larger λ gives smaller evaluations",
            Box::new(move || suite(None, || Ok(lambda_ordering_suite(&grids(true)?, &[0.1, 0.3, 0.5, 0.7, 0.9], 1e-12)))),
        ),
        ("λ-PI needs fewer iterations than VI", Box::new(iteration_ordering)),
        ("gradient and Hessian match finite differences", Box::new(derivatives)),
        ("ρ escalation improves uncertain tracking", Box::new(rho_escalation)),
        ("surrogate T1ADU 14-day trial", Box::new(clinical_smoke)),
        ("learn and evaluate are byte-deterministic", Box::new(determinism)),
    ];
    let mut failed = 0;
    for (n, (name, run)) in criteria.into_iter().enumerate() {
        let start = Instant::now();
        let (v, limit) = run();
        let elapsed = start.elapsed();
        let budget = limit.map_or_else(String::new, |l| format!(" (limit {} s)", l.as_secs()));
        println!(
            "criterion {}: {} [{name}] {:.1} s{budget}: {}",
            n + 1,
            if v.passed { "PASS" } else { "FAIL" },
            elapsed.as_secs_f64(),
            v.detail
        );
        failed += usize::from(!v.passed);
    }
    println!("{failed} of 9 criteria failed");
    if failed > 0 {
        std::process::exit(1);
    }
}
