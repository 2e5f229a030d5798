use std::io::Write;

use serde::{Deserialize, Serialize};

use super::robustness::RobustnessReport;
use crate::error::Result;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub rho: u32,
    pub i: usize,
    pub lambda: f64,
    /// ŵ^{i+1} produced by this iteration's solve.
    pub weights: Vec<f64>,
    /// max over the buffer of |Q̂^{i+1} − Q̂^i|.
    pub max_q_change: f64,
    /// max over the buffer of Q̂^{i+1} − Q̂^i (≤ 0 under monotone decrease).
    pub max_q_increase: f64,
    /// Greedy evaluations during collection that met a non-convex Q̂^i.
    pub nonconvex: usize,
    pub condition: f64,
    pub rank: usize,
    pub noise_lo: f64,
    pub noise_hi: f64,
    pub mean_stage_cost: f64,
    pub mean_action: f64,
    /// Gradient non-increase check on this buffer; absent at i = 0.
    pub gradient_condition: Option<bool>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttemptRecord {
    pub rho: u32,
    pub c_base: f64,
    /// Initialization check on the first buffer.
    pub initial_condition: bool,
    pub iterations: usize,
    pub converged: bool,
    pub robustness: Option<RobustnessReport>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LearnTrace {
    pub records: Vec<IterationRecord>,
    pub attempts: Vec<AttemptRecord>,
    pub final_rho: Option<u32>,
    /// Iterations of the accepted attempt.
    pub iterations: usize,
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum TraceLine {
    Iteration(IterationRecord),
    Attempt(AttemptRecord),
}

impl LearnTrace {
    /// One JSON object per line; each attempt's summary follows its iterations.
    pub fn write_jsonl<W: Write>(&self, mut w: W) -> Result<()> {
        let mut it = self.records.iter().peekable();
        for attempt in &self.attempts {
            while let Some(rec) = it.next_if(|r| r.rho == attempt.rho) {
                serde_json::to_writer(&mut w, &TraceLine::Iteration(rec.clone()))?;
                writeln!(w)?;
            }
            serde_json::to_writer(&mut w, &TraceLine::Attempt(attempt.clone()))?;
            writeln!(w)?;
        }
        for rec in it {
            serde_json::to_writer(&mut w, &TraceLine::Iteration(rec.clone()))?;
            writeln!(w)?;
        }
        Ok(())
    }

    pub fn records_for(&self, rho: u32) -> impl Iterator<Item = &IterationRecord> {
        self.records.iter().filter(move |r| r.rho == rho)
    }
}
