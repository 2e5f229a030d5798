use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case")]
pub enum LambdaRule {
    /// λ^i = tanh(rate · ln(i + 1)).
    Tanh { rate: f64 },
    /// λ^i ≡ value; 0 gives value iteration.
    Constant { value: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LambdaSchedule {
    #[serde(flatten)]
    pub rule: LambdaRule,
    pub cap: f64,
}

impl Default for LambdaSchedule {
    fn default() -> Self {
        Self { rule: LambdaRule::Tanh { rate: 0.7 }, cap: 0.999 }
    }
}

impl LambdaSchedule {
    pub fn value_iteration() -> Self {
        Self { rule: LambdaRule::Constant { value: 0.0 }, cap: 0.999 }
    }

    pub fn constant(value: f64) -> Self {
        Self { rule: LambdaRule::Constant { value }, cap: 0.999 }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.cap >= 0.0 && self.cap < 1.0) {
            return Err(Error::config(format!("lambda cap {} must lie in [0, 1)", self.cap)));
        }
        match self.rule {
            LambdaRule::Tanh { rate } if !(rate > 0.0 && rate.is_finite()) => {
                Err(Error::config(format!("tanh rate {rate} must be positive")))
            }
            LambdaRule::Constant { value } if !(0.0..1.0).contains(&value) => {
                Err(Error::config(format!("constant lambda {value} must lie in [0, 1)")))
            }
            _ => Ok(()),
        }
    }
}

pub fn lambda_value(schedule: &LambdaSchedule, i: usize) -> f64 {
    let raw = match schedule.rule {
        LambdaRule::Tanh { rate } => (rate * ((i + 1) as f64).ln()).tanh(),
        LambdaRule::Constant { value } => value,
    };
    raw.min(schedule.cap)
}

impl fmt::Display for LambdaSchedule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.rule {
            LambdaRule::Tanh { rate } => write!(f, "tanh:{rate}"),
            LambdaRule::Constant { value } => write!(f, "const:{value}"),
        }
    }
}

/// Parses `tanh:<rate>` or `const:<value>`.
impl FromStr for LambdaSchedule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (kind, arg) = s.split_once(':').ok_or_else(|| Error::config(format!("bad lambda rule {s:?}")))?;
        let v: f64 = arg.trim().parse().map_err(|_| Error::config(format!("bad lambda rule {s:?}")))?;
        let rule = match kind.trim() {
            "tanh" => LambdaRule::Tanh { rate: v },
            "const" => LambdaRule::Constant { value: v },
            _ => return Err(Error::config(format!("unknown lambda rule {kind:?}"))),
        };
        let sched = Self { rule, ..Self::default() };
        sched.validate()?;
        Ok(sched)
    }
}
