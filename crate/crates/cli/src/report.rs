use std::fmt::Write as _;
use std::path::Path;

use rlpi_core::metrics::write_markdown_table;
use rlpi_core::verify::SuiteOutcome;

use crate::error::{CliError, CliResult};
use crate::evaluate::{EvaluationSummary, EVALUATE_DIR};
use crate::learn::{LearnSummary, LEARN_DIR};
use crate::output::{read_file, write_file};

fn load_json<T: serde::de::DeserializeOwned>(path: &Path) -> CliResult<Option<T>> {
    if !path.exists() {
        return Ok(None);
    }
    let text = read_file(path)?;
    serde_json::from_str(&text).map(Some).map_err(|e| CliError::Failed(format!("{}: {e}", path.display())))
}

pub fn learn_section(s: &LearnSummary, out: &mut String) {
    let _ = writeln!(out, "## Learning\n\nenvironment `{}`, λ rule `{}`\n", s.environment, s.lambda_rule);
    let _ = writeln!(out, "| run | seed | converged | ρ | iterations | attempts | oracle error | TIR while learning |");
    let _ = writeln!(out, "|---|---|---|---|---|---|---|---|");
    for r in &s.runs {
        let rho = r.rho.map_or("-".to_string(), |v| v.to_string());
        let oracle = r.oracle_relative_error.map_or("-".to_string(), |v| format!("{v:.2e}"));
        let tir = r.learning_report.as_ref().map_or("-".to_string(), |g| format!("{:.1}%", g.bands.normo));
        let _ = writeln!(
            out,
            "| {} | {} | {} | {} | {} | {} | {} | {} |",
            r.run, r.seed, r.converged, rho, r.iterations, r.attempts, oracle, tir
        );
    }
    let failed: Vec<_> = s.runs.iter().filter(|r| !r.converged).collect();
    if !failed.is_empty() {
        let _ = writeln!(out);
        for r in failed {
            let _ = writeln!(out, "- {}: {}", r.run, r.status);
        }
    }
    let _ = writeln!(out);
}

pub fn evaluation_section(s: &EvaluationSummary, out: &mut String) -> CliResult<()> {
    let _ = writeln!(out, "## Evaluation\n");
    match s {
        EvaluationSummary::LqtValidation(e) => {
            let _ = writeln!(
                out,
                "Mean tracking error over {} episodes of {} steps: learned {:.6}, Riccati oracle {:.6}\n",
                e.episodes, e.steps, e.learned_tracking_error, e.oracle_tracking_error
            );
        }
        EvaluationSummary::Glucose { days, subjects, skipped } => {
            let _ = writeln!(out, "{days}-day trials, CGM metrics, mean ± sample std over trials\n");
            let rows: Vec<_> = subjects.iter().map(|s| (s.run.clone(), s.cgm.clone())).collect();
            let trials: Vec<String> = subjects.iter().map(|s| s.trials.to_string()).collect();
            let aborted: Vec<String> = subjects.iter().map(|s| s.aborted.to_string()).collect();
            let mut buf = Vec::new();
            write_markdown_table(&rows, &[("trials", trials), ("aborted", aborted)], &mut buf)
                .map_err(|e| CliError::Algorithm { context: "report".into(), source: e })?;
            out.push_str(&String::from_utf8_lossy(&buf));
            if !skipped.is_empty() {
                let _ = writeln!(out, "\nNot evaluated (no weights): {}", skipped.join(", "));
            }
            let _ = writeln!(out, "\nPer-day traces of trial 0 are listed in `evaluate/plots.json`.\n");
        }
    }
    Ok(())
}

pub fn verify_section(suites: &[SuiteOutcome], out: &mut String) {
    let _ = writeln!(out, "## Property suites\n");
    for s in suites {
        let _ = writeln!(out, "- {} {}: {}", if s.passed { "PASS" } else { "FAIL" }, s.name, s.detail);
    }
    let _ = writeln!(out);
}

/// Assemble `report.md` from whatever summaries exist under `dir`.
pub fn build_report(dir: &Path) -> CliResult<String> {
    let learn: Option<LearnSummary> = load_json(&dir.join(LEARN_DIR).join("summary.json"))?;
    let eval: Option<EvaluationSummary> = load_json(&dir.join(EVALUATE_DIR).join("summary.json"))?;
    let suites: Option<Vec<SuiteOutcome>> = load_json(&dir.join("verify.json"))?;
    if learn.is_none() && eval.is_none() && suites.is_none() {
        return Err(CliError::Failed(format!("nothing to report under {}", dir.display())));
    }
    let mut out = String::from("# Experiment report\n\n");
    if let Some(s) = &learn {
        learn_section(s, &mut out);
    }
    if let Some(s) = &eval {
        evaluation_section(s, &mut out)?;
    }
    if let Some(s) = &suites {
        verify_section(s, &mut out);
    }
    Ok(out)
}

pub fn cmd_report(dir: &Path) -> CliResult<std::path::PathBuf> {
    let text = build_report(dir)?;
    let path = dir.join("report.md");
    write_file(&path, text.as_bytes())?;
    Ok(path)
}
