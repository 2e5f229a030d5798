use std::path::Path;

use rayon::prelude::*;
use rlpi_core::envs::{lqt_riccati_oracle, tracking_error, LqtSetup};
use rlpi_core::glucosim::{write_trace_csv, GlucosePlant, TraceRow, DAY_MINUTES};
use rlpi_core::metrics::{cohort_aggregate, CohortSummary, GlycaemicReport};
use rlpi_core::qmodel::{GreedyPolicy, QWeights};
use rlpi_core::rng::child_seed;
use serde::{Deserialize, Serialize};

use crate::config::{EnvironmentSpec, ExperimentConfig, GlucoseSpec};
use crate::error::{CliError, CliResult};
use crate::learn::{glucose_subjects, run_name, LEARN_DIR, TICKS_PER_DAY};
use crate::output::{json_pretty, read_file, Artifacts};

pub const EVALUATE_DIR: &str = "evaluate";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialResult {
    pub trial: usize,
    pub seed: u64,
    /// Simulated minutes before the trial ended.
    pub minutes: f64,
    /// Set when the patient model left its valid range.
    pub aborted: Option<String>,
    pub cgm: GlycaemicReport,
    pub plasma: GlycaemicReport,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SubjectEvaluation {
    pub run: String,
    pub trials: usize,
    pub aborted: usize,
    pub cgm: CohortSummary,
    pub plasma: CohortSummary,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LqtEvaluation {
    pub episodes: usize,
    pub steps: usize,
    pub learned_tracking_error: f64,
    pub oracle_tracking_error: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "environment", rename_all = "snake_case")]
pub enum EvaluationSummary {
    LqtValidation(LqtEvaluation),
    Glucose { days: usize, subjects: Vec<SubjectEvaluation>, skipped: Vec<String> },
}

pub fn load_weights(dir: &Path, run: &str) -> CliResult<Option<QWeights>> {
    let path = dir.join(LEARN_DIR).join(run).join("weights.json");
    if !path.exists() {
        return Ok(None);
    }
    let text = read_file(&path)?;
    QWeights::from_json(&text).map(Some).map_err(|e| CliError::Algorithm { context: path.display().to_string(), source: e })
}

/// One closed-loop trial of `days` days under the evaluation profile.
pub fn glucose_trial(
    spec: &GlucoseSpec,
    params: &rlpi_core::glucosim::PatientParams,
    w: &QWeights,
    days: usize,
    trial: usize,
    seed: u64,
) -> rlpi_core::Result<(TrialResult, Vec<TraceRow>)> {
    let gcfg = spec.harness.evaluation_config();
    let bounds = gcfg.bounds.clone();
    let mut plant = GlucosePlant::new(params.clone(), gcfg, seed)?;
    plant.record_trace(true);
    let policy = GreedyPolicy::new(w, &bounds);
    let aborted = match plant.run(&policy, days * TICKS_PER_DAY) {
        Ok(()) => None,
        Err(e @ rlpi_core::Error::PatientDeath { .. }) => Some(e.to_string()),
        Err(e) => return Err(e),
    };
    let rows = plant.take_trace();
    let span = (rows.len() as f64 / TICKS_PER_DAY as f64).max(1.0 / TICKS_PER_DAY as f64);
    let insulin: Vec<f64> = rows.iter().map(|r| r.insulin).collect();
    let cgm: Vec<f64> = rows.iter().map(|r| r.cgm).collect();
    let plasma: Vec<f64> = rows.iter().map(|r| r.glucose.max(f64::MIN_POSITIVE)).collect();
    let result = TrialResult {
        trial,
        seed,
        minutes: plant.minute(),
        aborted,
        cgm: GlycaemicReport::from_trace(&cgm, &insulin, span)?,
        plasma: GlycaemicReport::from_trace(&plasma, &insulin, span)?,
    };
    Ok((result, rows))
}

fn trials_csv(trials: &[TrialResult]) -> String {
    let mut out = format!("trial,seed,minutes,aborted,{}\n", GlycaemicReport::csv_header());
    for t in trials {
        out.push_str(&format!("{},{},{},{},{}\n", t.trial, t.seed, t.minutes, t.aborted.is_some(), t.cgm.csv_row()));
    }
    out
}

/// Split a trace into one CSV per simulated day.
fn daily_traces(rows: &[TraceRow], dir: &Path, files: &mut Artifacts) -> CliResult<()> {
    let mut day = 0usize;
    let mut start = 0usize;
    while start < rows.len() {
        let end = rows[start..]
            .iter()
            .position(|r| r.minute >= (day + 1) as f64 * DAY_MINUTES)
            .map_or(rows.len(), |p| start + p);
        let mut buf = Vec::new();
        write_trace_csv(&rows[start..end], &mut buf).map_err(|e| CliError::Algorithm { context: "trace".into(), source: e })?;
        files.add(dir.join(format!("trace_day{:02}.csv", day + 1)), buf);
        start = end;
        day += 1;
    }
    Ok(())
}

fn evaluate_glucose(cfg: &ExperimentConfig, spec: &GlucoseSpec, files: &mut Artifacts) -> CliResult<EvaluationSummary> {
    let root = cfg.output_path();
    let subjects = glucose_subjects(cfg, spec);
    let mut loaded = Vec::new();
    let mut skipped = Vec::new();
    for k in 0..subjects.len() {
        match load_weights(&root, &run_name(k))? {
            Some(w) => loaded.push((k, w)),
            None => skipped.push(run_name(k)),
        }
    }
    if loaded.is_empty() {
        return Err(CliError::Failed(format!(
            "no learned weights under {}; run `learn` first",
            root.join(LEARN_DIR).display()
        )));
    }
    let days = cfg.evaluation.days;
    let jobs: Vec<(usize, usize)> =
        loaded.iter().enumerate().flat_map(|(i, _)| (0..cfg.evaluation.trials).map(move |t| (i, t))).collect();
    let results: Vec<_> = jobs
        .par_iter()
        .map(|&(i, t)| {
            let (k, w) = &loaded[i];
            let seed = child_seed(child_seed(cfg.seeds.evaluate, *k as u64), t as u64);
            glucose_trial(spec, &subjects[*k], w, days, t, seed)
                .map_err(|e| CliError::Algorithm { context: format!("{} trial {t} (seed {seed})", run_name(*k)), source: e })
        })
        .collect();
    let mut per_subject: Vec<Vec<TrialResult>> = vec![Vec::new(); loaded.len()];
    for (&(i, t), res) in jobs.iter().zip(results) {
        let (trial, rows) = res?;
        if t == 0 {
            daily_traces(&rows, &Path::new(EVALUATE_DIR).join(run_name(loaded[i].0)), files)?;
        }
        per_subject[i].push(trial);
    }
    let mut out = Vec::new();
    for ((k, _), trials) in loaded.iter().zip(per_subject) {
        let run = run_name(*k);
        let dir = Path::new(EVALUATE_DIR).join(&run);
        files.add(dir.join("trials.csv"), trials_csv(&trials));
        let cgm: Vec<_> = trials.iter().map(|t| t.cgm.clone()).collect();
        let plasma: Vec<_> = trials.iter().map(|t| t.plasma.clone()).collect();
        let agg = |r: &[GlycaemicReport]| {
            cohort_aggregate(r).map_err(|e| CliError::Algorithm { context: run.clone(), source: e })
        };
        out.push(SubjectEvaluation {
            run: run.clone(),
            trials: trials.len(),
            aborted: trials.iter().filter(|t| t.aborted.is_some()).count(),
            cgm: agg(&cgm)?,
            plasma: agg(&plasma)?,
        });
    }
    Ok(EvaluationSummary::Glucose { days, subjects: out, skipped })
}

fn evaluate_lqt(cfg: &ExperimentConfig, setup: &LqtSetup) -> CliResult<EvaluationSummary> {
    let root = cfg.output_path();
    let w = load_weights(&root, &run_name(0))?.ok_or_else(|| {
        CliError::Failed(format!("no learned weights under {}; run `learn` first", root.join(LEARN_DIR).display()))
    })?;
    let oracle = lqt_riccati_oracle(&setup.env).map_err(|e| CliError::Algorithm { context: "oracle".into(), source: e })?;
    let episodes = cfg.evaluation.trials;
    let steps = cfg.evaluation.lqt_steps;
    let err = |w: &QWeights| -> CliResult<f64> {
        let mut plant = setup.plant(cfg.seeds.evaluate);
        tracking_error(&mut plant, w, &setup.env.cost.tracked, episodes, steps)
            .map_err(|e| CliError::Algorithm { context: "evaluation rollout".into(), source: e })
    };
    Ok(EvaluationSummary::LqtValidation(LqtEvaluation {
        episodes,
        steps,
        learned_tracking_error: err(&w)?,
        oracle_tracking_error: err(&oracle)?,
    }))
}

const PLOT_MANIFEST: &str = r#"{
  "plots": [
    {
      "title": "Glucose and insulin over one trial day",
      "files": "evaluate/<run>/trace_dayNN.csv",
      "x": "minute",
      "series": [
        {"y": "cgm", "axis": "left", "unit": "mg/dL"},
        {"y": "glucose", "axis": "left", "unit": "mg/dL"},
        {"y": "insulin", "axis": "right", "unit": "U per 5 min"},
        {"y": "meal_rate", "axis": "right", "unit": "g/min"}
      ],
      "bands": [[70, 180]]
    }
  ]
}
"#;

pub fn evaluate_artifacts(cfg: &ExperimentConfig) -> CliResult<(EvaluationSummary, Artifacts)> {
    cfg.validate()?;
    let mut files = Artifacts::default();
    let summary = match &cfg.environment {
        EnvironmentSpec::LqtValidation(s) => evaluate_lqt(cfg, s)?,
        EnvironmentSpec::Glucose(g) => {
            let s = evaluate_glucose(cfg, g, &mut files)?;
            files.add(Path::new(EVALUATE_DIR).join("plots.json"), PLOT_MANIFEST);
            s
        }
    };
    files.add(Path::new(EVALUATE_DIR).join("summary.json"), json_pretty(&summary));
    Ok((summary, files))
}

/// Closed-loop trials with the learned weights; writes per-trial metrics,
/// per-day traces of the first trial and a summary.
pub fn cmd_evaluate(cfg: &ExperimentConfig) -> CliResult<EvaluationSummary> {
    let (summary, files) = evaluate_artifacts(cfg)?;
    files.write_under(&cfg.output_path())?;
    Ok(summary)
}
