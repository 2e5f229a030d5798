use std::sync::Arc;

use rayon::prelude::*;
use rlpi_core::envs::{lqt_riccati_oracle, LqtSetup};
use rlpi_core::glucosim::{make_cohort, GlucosePlant, PatientParams, TICK_MINUTES};
use rlpi_core::lambda_pi::{run_rlpi, GammaMode, LearnConfig, LearnOutcome, LearnTrace, Objective};
use rlpi_core::metrics::GlycaemicReport;
use rlpi_core::qmodel::BasisDescriptor;
use rlpi_core::rng::child_seed;
use rlpi_core::verify::relative_weight_error;
use serde::{Deserialize, Serialize};

use crate::config::{AlgorithmConfig, EnvironmentSpec, ExperimentConfig, GlucoseSpec};
use crate::error::{CliError, CliResult};
use crate::output::{json_pretty, Artifacts};

pub const LEARN_DIR: &str = "learn";
pub const TICKS_PER_DAY: usize = 1440 / TICK_MINUTES;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub run: String,
    pub seed: u64,
    pub converged: bool,
    pub status: String,
    pub rho: Option<u32>,
    /// Iterations of the accepted attempt, or of the last attempt on failure.
    pub iterations: usize,
    pub attempts: usize,
    pub oracle_relative_error: Option<f64>,
    /// Glycaemic statistics of everything the patient went through while learning.
    pub learning_report: Option<GlycaemicReport>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LearnSummary {
    pub environment: String,
    pub lambda_rule: String,
    pub runs: Vec<RunRecord>,
}

impl LearnSummary {
    pub fn failures(&self) -> usize {
        self.runs.iter().filter(|r| !r.converged).count()
    }
}

pub fn run_name(k: usize) -> String {
    format!("run-{k:02}")
}

pub fn apply_algorithm(lc: &mut LearnConfig, obj: &mut Objective, a: &AlgorithmConfig) {
    lc.schedule = a.lambda;
    lc.tau = a.tau;
    lc.buffer_size = a.buffer_size;
    lc.rho_start = a.rho_start;
    lc.rho_max = a.rho_max;
    lc.max_iters = a.max_iters;
    obj.cost.gamma = a.gamma;
}

pub fn lqt_learn_setup(setup: &LqtSetup, a: &AlgorithmConfig, seed: u64) -> (LearnConfig, Objective) {
    let mut lc = setup.learn_config(seed);
    let mut obj = setup.objective();
    apply_algorithm(&mut lc, &mut obj, a);
    (lc, obj)
}

pub fn glucose_learn_setup(spec: &GlucoseSpec, a: &AlgorithmConfig, seed: u64) -> (LearnConfig, Objective) {
    let mut harness = spec.harness.clone();
    harness.glucose.window_steps = a.buffer_size;
    let mut lc = harness.learn_config(seed);
    let mut obj = harness.objective();
    apply_algorithm(&mut lc, &mut obj, a);
    (lc, obj)
}

pub fn glucose_subjects(cfg: &ExperimentConfig, spec: &GlucoseSpec) -> Vec<PatientParams> {
    make_cohort(spec.cohort, spec.subjects, cfg.seeds.cohort)
}

/// Learn on one virtual patient; the plant records every tick it simulates.
pub fn learn_subject(
    params: &PatientParams,
    spec: &GlucoseSpec,
    a: &AlgorithmConfig,
    seed: u64,
) -> (rlpi_core::Result<LearnOutcome>, Option<GlycaemicReport>) {
    let (lc, obj) = glucose_learn_setup(spec, a, seed);
    let mut gcfg = spec.harness.glucose.clone();
    gcfg.window_steps = a.buffer_size;
    let mut plant = match GlucosePlant::new(params.clone(), gcfg, seed) {
        Ok(p) => p,
        Err(e) => return (Err(e), None),
    };
    plant.record_trace(true);
    let result = run_rlpi(&mut plant, Arc::new(BasisDescriptor::harness()), &obj, &lc);
    let rows = plant.take_trace();
    let report = if rows.is_empty() {
        None
    } else {
        let cgm: Vec<f64> = rows.iter().map(|r| r.cgm).collect();
        let insulin: Vec<f64> = rows.iter().map(|r| r.insulin).collect();
        GlycaemicReport::from_trace(&cgm, &insulin, rows.len() as f64 / TICKS_PER_DAY as f64).ok()
    };
    (result, report)
}

fn record_run(
    run: String,
    seed: u64,
    result: &rlpi_core::Result<LearnOutcome>,
    files: &mut Artifacts,
) -> CliResult<RunRecord> {
    let dir = std::path::Path::new(LEARN_DIR).join(&run);
    let trace: Option<&LearnTrace> = match result {
        Ok(out) => Some(&out.trace),
        Err(e) => e.trace(),
    };
    if let Some(trace) = trace {
        let mut buf = Vec::new();
        trace.write_jsonl(&mut buf).map_err(|e| CliError::Algorithm { context: run.clone(), source: e })?;
        files.add(dir.join("trace.jsonl"), buf);
    }
    let attempts = trace.map_or(0, |t| t.attempts.len());
    Ok(match result {
        Ok(out) => {
            let json = out.weights.to_json().map_err(|e| CliError::Algorithm { context: run.clone(), source: e })?;
            files.add(dir.join("weights.json"), json + "\n");
            RunRecord {
                run,
                seed,
                converged: true,
                status: "converged".into(),
                rho: Some(out.rho),
                iterations: out.trace.iterations,
                attempts,
                oracle_relative_error: None,
                learning_report: None,
            }
        }
        Err(e) => RunRecord {
            run,
            seed,
            converged: false,
            status: e.to_string(),
            rho: None,
            iterations: trace.and_then(|t| t.attempts.last()).map_or(0, |a| a.iterations),
            attempts,
            oracle_relative_error: None,
            learning_report: None,
        },
    })
}

fn learn_lqt(cfg: &ExperimentConfig, setup: &LqtSetup, files: &mut Artifacts) -> CliResult<Vec<RunRecord>> {
    let seed = cfg.seeds.learn;
    let (lc, obj) = lqt_learn_setup(setup, &cfg.algorithm, seed);
    let basis = Arc::new(setup.env.basis().map_err(|e| CliError::Config(e.to_string()))?);
    let mut plant = setup.plant(seed);
    let result = run_rlpi(&mut plant, basis, &obj, &lc);
    let mut rec = record_run(run_name(0), seed, &result, files)?;
    if let (Ok(out), GammaMode::Disabled) = (&result, setup.gamma_mode) {
        let oracle = lqt_riccati_oracle(&setup.env).map_err(|e| CliError::Algorithm { context: "oracle".into(), source: e })?;
        rec.oracle_relative_error = Some(relative_weight_error(&out.weights, &oracle));
        let json = oracle.to_json().map_err(|e| CliError::Algorithm { context: "oracle".into(), source: e })?;
        files.add(std::path::Path::new(LEARN_DIR).join("oracle_weights.json"), json + "\n");
    }
    Ok(vec![rec])
}

fn learn_glucose(cfg: &ExperimentConfig, spec: &GlucoseSpec, files: &mut Artifacts) -> CliResult<Vec<RunRecord>> {
    let subjects = glucose_subjects(cfg, spec);
    let results: Vec<_> = subjects
        .par_iter()
        .enumerate()
        .map(|(k, params)| {
            let seed = child_seed(cfg.seeds.learn, k as u64);
            let (result, report) = learn_subject(params, spec, &cfg.algorithm, seed);
            let mut local = Artifacts::default();
            let rec = record_run(run_name(k), seed, &result, &mut local).map(|mut r| {
                r.learning_report = report;
                r
            });
            (rec, local)
        })
        .collect();
    let mut records = Vec::new();
    for (rec, local) in results {
        records.push(rec?);
        files.extend(local);
    }
    Ok(records)
}

fn summary_csv(s: &LearnSummary) -> String {
    let mut out = format!("run,seed,converged,rho,iterations,attempts,oracle_relative_error,{}\n", GlycaemicReport::csv_header());
    for r in &s.runs {
        let opt = |v: Option<String>| v.unwrap_or_default();
        let report = r.learning_report.as_ref().map_or_else(
            || vec![""; GlycaemicReport::FIELDS.len() - 1].join(","),
            |g| g.csv_row(),
        );
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            r.run,
            r.seed,
            r.converged,
            opt(r.rho.map(|v| v.to_string())),
            r.iterations,
            r.attempts,
            opt(r.oracle_relative_error.map(|v| format!("{v:e}"))),
            report
        ));
    }
    out
}

/// Learn on every configured run and return the summary together with the
/// files to write.
pub fn learn_artifacts(cfg: &ExperimentConfig) -> CliResult<(LearnSummary, Artifacts)> {
    cfg.validate()?;
    let mut files = Artifacts::default();
    let (environment, runs) = match &cfg.environment {
        EnvironmentSpec::LqtValidation(s) => ("lqt_validation", learn_lqt(cfg, s, &mut files)?),
        EnvironmentSpec::Glucose(g) => ("glucose", learn_glucose(cfg, g, &mut files)?),
    };
    let summary = LearnSummary { environment: environment.into(), lambda_rule: cfg.algorithm.lambda.to_string(), runs };
    files.add("config.json", cfg.to_json());
    files.add(std::path::Path::new(LEARN_DIR).join("summary.json"), json_pretty(&summary));
    files.add(std::path::Path::new(LEARN_DIR).join("summary.csv"), summary_csv(&summary));
    Ok((summary, files))
}

/// Run learning and write weights, traces and the learning-phase report
/// under the output directory. Runs that fail are reported with their error
/// and make the command fail after everything else has been written.
pub fn cmd_learn(cfg: &ExperimentConfig) -> CliResult<LearnSummary> {
    let (summary, files) = learn_artifacts(cfg)?;
    files.write_under(&cfg.output_path())?;
    let failed: Vec<String> =
        summary.runs.iter().filter(|r| !r.converged).map(|r| format!("{} (seed {}): {}", r.run, r.seed, r.status)).collect();
    if failed.is_empty() {
        Ok(summary)
    } else {
        Err(CliError::Failed(format!("learning failed for {}", failed.join("; "))))
    }
}
