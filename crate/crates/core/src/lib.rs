//! Clean-label backdoor poisoning attacks against feature-based binary
//! classifiers, and the filtering defenses that try to catch them.
//!
//! The pipeline: build or load a labeled [`dataset`](crate::dataset), train
//! a victim from the [`models`](crate::models) zoo, attribute its decisions
//! with [`explain`](crate::explain), construct and inject a watermark with
//! [`attack`](crate::attack), then measure what the [`defend`](crate::defend)
//! filters catch. [`experiment`](crate::experiment) orchestrates full
//! attacker-scenario sweeps with per-seed reproducibility.

pub mod attack;
pub mod dataset;
pub mod defend;
pub mod experiment;
pub mod explain;
pub mod matrix;
pub mod models;
pub mod rng;
