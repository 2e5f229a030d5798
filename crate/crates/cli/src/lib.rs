//! Experiment runner: configuration, learning, closed-loop evaluation,
//! property suites and report generation for the `rlpi` binary.

pub mod config;
pub mod error;
pub mod evaluate;
pub mod learn;
pub mod output;
pub mod report;
