use std::path::{Path, PathBuf};

use rlpi_core::envs::LqtSetup;
use rlpi_core::glucosim::{Cohort, HarnessSetup};
use rlpi_core::lambda_pi::{LambdaSchedule, LearnConfig};
use rlpi_core::qmodel::BasisDescriptor;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

pub const SCHEMA: &str = "rlpi-experiment/1";

/// Environment variable that relative output directories are resolved against.
pub const OUTPUT_ROOT_VAR: &str = "RLPI_OUTPUT_ROOT";

/// One experiment. Defaults are the glucose harness constants.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema: String,
    pub environment: EnvironmentSpec,
    pub algorithm: AlgorithmConfig,
    pub evaluation: EvaluationConfig,
    pub seeds: Seeds,
    pub output_dir: PathBuf,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case")]
pub enum EnvironmentSpec {
    LqtValidation(LqtSetup),
    Glucose(GlucoseSpec),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GlucoseSpec {
    pub cohort: Cohort,
    pub subjects: usize,
    pub harness: HarnessSetup,
}

impl Default for GlucoseSpec {
    fn default() -> Self {
        Self { cohort: Cohort::T1ADU, subjects: 10, harness: HarnessSetup::default() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AlgorithmConfig {
    pub gamma: f64,
    pub tau: f64,
    pub buffer_size: usize,
    pub lambda: LambdaSchedule,
    pub rho_start: u32,
    pub rho_max: u32,
    pub max_iters: usize,
}

impl Default for AlgorithmConfig {
    fn default() -> Self {
        Self {
            gamma: 0.95,
            tau: 1e-10,
            buffer_size: 144,
            lambda: LambdaSchedule::default(),
            rho_start: 1,
            rho_max: 30,
            max_iters: 2000,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvaluationConfig {
    pub trials: usize,
    pub days: usize,
    /// Closed-loop ticks per episode on the LQT environment.
    pub lqt_steps: usize,
}

impl Default for EvaluationConfig {
    fn default() -> Self {
        Self { trials: 20, days: 14, lqt_steps: 50 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Seeds {
    pub learn: u64,
    pub cohort: u64,
    pub evaluate: u64,
}

impl Default for Seeds {
    fn default() -> Self {
        Self { learn: 0, cohort: 0, evaluate: 1 }
    }
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            schema: SCHEMA.to_string(),
            environment: EnvironmentSpec::Glucose(GlucoseSpec::default()),
            algorithm: AlgorithmConfig::default(),
            evaluation: EvaluationConfig::default(),
            seeds: Seeds::default(),
            output_dir: PathBuf::from("runs/glucose"),
        }
    }
}

impl ExperimentConfig {
    /// The Γ-disabled LQT with a Riccati oracle.
    pub fn lqt() -> Self {
        Self {
            environment: EnvironmentSpec::LqtValidation(LqtSetup::validation()),
            output_dir: PathBuf::from("runs/lqt"),
            ..Self::default()
        }
    }

    pub fn from_json(text: &str) -> CliResult<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| CliError::Config(format!("config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes") + "\n"
    }

    pub fn validate(&self) -> CliResult<()> {
        let bad = |m: String| Err(CliError::Config(m));
        if self.schema != SCHEMA {
            return bad(format!("unsupported config schema {:?} (expected {SCHEMA:?})", self.schema));
        }
        let a = &self.algorithm;
        if !(a.gamma > 0.0 && a.gamma <= 1.0) {
            return bad(format!("gamma {} outside (0, 1]", a.gamma));
        }
        a.lambda.validate().map_err(|e| CliError::Config(e.to_string()))?;
        if self.evaluation.trials == 0 || self.evaluation.days == 0 || self.evaluation.lqt_steps == 0 {
            return bad("evaluation needs at least one trial, day and step".into());
        }
        match &self.environment {
            EnvironmentSpec::LqtValidation(s) => s.env.validate().map_err(|e| CliError::Config(e.to_string()))?,
            EnvironmentSpec::Glucose(g) => {
                if g.subjects == 0 {
                    return bad("need at least one subject".into());
                }
                g.harness.glucose.validate().map_err(|e| CliError::Config(e.to_string()))?;
            }
        }
        let learn = LearnConfig {
            buffer_size: a.buffer_size,
            tau: a.tau,
            max_iters: a.max_iters,
            rho_start: a.rho_start,
            rho_max: a.rho_max,
            schedule: a.lambda,
            ..Default::default()
        };
        let basis = match &self.environment {
            EnvironmentSpec::LqtValidation(s) => s.env.basis(),
            EnvironmentSpec::Glucose(_) => Ok(BasisDescriptor::harness()),
        }
        .map_err(|e| CliError::Config(e.to_string()))?;
        learn.validate(&basis).map_err(|e| CliError::Config(e.to_string()))
    }

    /// Output directory, resolved against `RLPI_OUTPUT_ROOT` when relative.
    pub fn output_path(&self) -> PathBuf {
        resolve_output(&self.output_dir, std::env::var_os(OUTPUT_ROOT_VAR).map(PathBuf::from))
    }
}

pub fn resolve_output(dir: &Path, root: Option<PathBuf>) -> PathBuf {
    match root {
        Some(root) if dir.is_relative() => root.join(dir),
        _ => dir.to_path_buf(),
    }
}

/// Command-line overrides applied on top of a loaded or default config.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Overrides {
    pub env: Option<String>,
    pub lambda_rule: Option<String>,
    pub tau: Option<f64>,
    pub buffer_size: Option<usize>,
    pub rho_start: Option<u32>,
    pub max_iters: Option<usize>,
    pub subjects: Option<usize>,
    pub cohort: Option<String>,
    pub trials: Option<usize>,
    pub days: Option<usize>,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
}

impl Overrides {
    pub fn apply(&self, mut cfg: ExperimentConfig) -> CliResult<ExperimentConfig> {
        if let Some(env) = &self.env {
            let same = matches!(
                (env.as_str(), &cfg.environment),
                ("lqt", EnvironmentSpec::LqtValidation(_)) | ("glucose", EnvironmentSpec::Glucose(_))
            );
            if !same {
                let fresh = match env.as_str() {
                    "lqt" => ExperimentConfig::lqt(),
                    "glucose" => ExperimentConfig::default(),
                    other => return Err(CliError::Config(format!("unknown environment {other:?} (lqt or glucose)"))),
                };
                cfg.environment = fresh.environment;
                cfg.output_dir = fresh.output_dir;
            }
        }
        if let Some(rule) = &self.lambda_rule {
            cfg.algorithm.lambda = rule.parse().map_err(|e: rlpi_core::Error| CliError::Config(e.to_string()))?;
        }
        if let Some(v) = self.tau {
            cfg.algorithm.tau = v;
        }
        if let Some(v) = self.buffer_size {
            cfg.algorithm.buffer_size = v;
        }
        if let Some(v) = self.rho_start {
            cfg.algorithm.rho_start = v;
            cfg.algorithm.rho_max = cfg.algorithm.rho_max.max(v);
        }
        if let Some(v) = self.max_iters {
            cfg.algorithm.max_iters = v;
        }
        if let Some(v) = self.trials {
            cfg.evaluation.trials = v;
        }
        if let Some(v) = self.days {
            cfg.evaluation.days = v;
        }
        if let Some(v) = self.seed {
            cfg.seeds.learn = v;
        }
        if let Some(v) = &self.out {
            cfg.output_dir = v.clone();
        }
        if self.subjects.is_some() || self.cohort.is_some() {
            let EnvironmentSpec::Glucose(g) = &mut cfg.environment else {
                return Err(CliError::Config("--subjects and --cohort apply to the glucose environment".into()));
            };
            if let Some(v) = self.subjects {
                g.subjects = v;
            }
            if let Some(c) = &self.cohort {
                g.cohort = c.parse().map_err(|e: rlpi_core::Error| CliError::Config(e.to_string()))?;
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }
}
