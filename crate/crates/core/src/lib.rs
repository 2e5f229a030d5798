//! Robust tracking control by λ-policy iteration with a least-squares
//! Q-function critic.
//!
//! The crate contains the learning algorithm ([`lambda_pi`]), its function
//! approximator ([`qmodel`]), the system abstractions it interacts with
//! ([`system`]), exact grid oracles for the underlying theory ([`exact_dp`]),
//! linear-quadratic and toy benchmarks ([`envs`]), a surrogate glucose-insulin
//! simulator ([`glucosim`]), glycaemic metrics ([`metrics`]) and the property
//! suites run by the command line ([`verify`]).

pub mod envs;
pub mod exact_dp;
pub mod glucosim;
pub mod error;
pub mod lambda_pi;
pub mod metrics;
pub mod linalg;
pub mod qmodel;
pub mod rng;
pub mod verify;
pub mod system;

pub use error::{Error, Result};
