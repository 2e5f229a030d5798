use thiserror::Error;

use crate::lambda_pi::LearnTrace;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {what}: expected {expected}, got {got}")]
    Dimension {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("rollout diverged at tick {tick}: {detail}")]
    Divergence { tick: usize, detail: String },

    #[error("simulated patient glucose reached {glucose:.3} mg/dL at minute {minute}")]
    PatientDeath { glucose: f64, minute: f64 },

    #[error("buffer of {requested} transitions aborted after {collected}: {source}")]
    PartialBuffer {
        collected: usize,
        requested: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("buffer size {buffer} is smaller than the {features} basis features")]
    BufferTooSmall { buffer: usize, features: usize },

    #[error("regressor is rank deficient: numerical rank {rank} of {cols}, condition estimate {condition:.3e}")]
    RankDeficient {
        rank: usize,
        cols: usize,
        condition: f64,
    },

    #[error("insufficient excitation: regressor stayed rank deficient after {retries} re-collections")]
    Excitation { retries: usize },

    #[error("learning did not converge within {iterations} iterations (last max Q change {last_change:.3e})")]
    NotConverged {
        iterations: usize,
        last_change: f64,
        trace: Box<LearnTrace>,
    },

    #[error("learning diverged at rho = {rho}, iteration {iteration} (weight magnitude {magnitude:.3e})")]
    Diverged {
        rho: u32,
        iteration: usize,
        magnitude: f64,
        trace: Box<LearnTrace>,
    },

    #[error("robustness conditions still failing at rho = {rho}")]
    RobustnessNotAchieved { rho: u32, trace: Box<LearnTrace> },

    #[error("Riccati recursion failed: {0}")]
    Riccati(String),

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("invalid sample: {0}")]
    InvalidSample(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    /// Learning trace carried by a failed run, if any.
    pub fn trace(&self) -> Option<&LearnTrace> {
        match self {
            Error::NotConverged { trace, .. }
            | Error::Diverged { trace, .. }
            | Error::RobustnessNotAchieved { trace, .. } => Some(trace),
            _ => None,
        }
    }
}
