use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use rlpi_cli::config::{ExperimentConfig, Overrides};
use rlpi_cli::error::{CliError, CliResult};
use rlpi_cli::output::{json_pretty, write_file};
use rlpi_cli::{evaluate, learn, report};
use rlpi_core::verify::{run_verify, VerifyLevel};

#[derive(Parser, Debug)]
#[command(name = "rlpi", version, about = "Robust λ-policy iteration experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// JSON experiment config; defaults are used when absent.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// lqt or glucose
    #[arg(long, global = true)]
    env: Option<String>,
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// tanh:<rate> or const:<λ>; const:0 is value iteration
    #[arg(long, global = true)]
    lambda_rule: Option<String>,
    #[arg(long, global = true)]
    tau: Option<f64>,
    #[arg(long, global = true)]
    buffer_size: Option<usize>,
    #[arg(long, global = true)]
    rho_start: Option<u32>,
    #[arg(long, global = true)]
    max_iters: Option<usize>,
    #[arg(long, global = true)]
    subjects: Option<usize>,
    #[arg(long, global = true)]
    cohort: Option<String>,
    #[arg(long, global = true)]
    trials: Option<usize>,
    #[arg(long, global = true)]
    days: Option<usize>,
    /// Learning seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Learn weights for every configured run.
    Learn,
    /// Closed-loop trials with previously learned weights.
    Evaluate,
    /// Run the exact-grid property suites.
    Verify {
        #[arg(long, default_value = "quick")]
        level: VerifyLevel,
    },
    /// Write report.md from the summaries in the output directory.
    Report,
    /// Print the effective config as JSON.
    Config,
}

impl Cli {
    fn overrides(&self) -> Overrides {
        Overrides {
            env: self.env.clone(),
            lambda_rule: self.lambda_rule.clone(),
            tau: self.tau,
            buffer_size: self.buffer_size,
            rho_start: self.rho_start,
            max_iters: self.max_iters,
            subjects: self.subjects,
            cohort: self.cohort.clone(),
            trials: self.trials,
            days: self.days,
            seed: self.seed,
            out: self.out.clone(),
        }
    }

    fn experiment(&self) -> CliResult<ExperimentConfig> {
        let base = match &self.config {
            Some(p) => ExperimentConfig::load(p)?,
            None => ExperimentConfig::default(),
        };
        self.overrides().apply(base)
    }
}

fn run(cli: &Cli) -> CliResult<()> {
    let cfg = cli.experiment()?;
    let dir = cfg.output_path();
    match &cli.command {
        Command::Learn => {
            let summary = learn::cmd_learn(&cfg)?;
            println!("learned {} run(s) into {}", summary.runs.len(), dir.display());
        }
        Command::Evaluate => {
            evaluate::cmd_evaluate(&cfg)?;
            println!("evaluation written to {}", dir.join(evaluate::EVALUATE_DIR).display());
        }
        Command::Verify { level } => {
            let suites =
                run_verify(*level).map_err(|e| CliError::Algorithm { context: "verify".into(), source: e })?;
            for s in &suites {
                println!("{} {}: {}", if s.passed { "PASS" } else { "FAIL" }, s.name, s.detail);
            }
            write_file(&dir.join("verify.json"), &json_pretty(&suites))?;
            let failed = suites.iter().filter(|s| !s.passed).count();
            if failed > 0 {
                return Err(CliError::Failed(format!("{failed} suite(s) failed")));
            }
        }
        Command::Report => {
            let path = report::cmd_report(&dir)?;
            println!("{}", path.display());
        }
        Command::Config => print!("{}", cfg.to_json()),
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
