//! Simulation lab for large deviations of heavy-tailed moving averages.
//!
//! The crate simulates `X_k = sum_i A_i Z_{k-i}` driven by regularly varying
//! noise, conditions on rare window-sum events `{S_0^n ∈ nΓ}`, and measures
//! how those events cluster: where the single dominating noise vector sits,
//! how far the cluster of rare windows extends, and how the equivalent
//! single-jump probabilities compare at finite `n`.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cluster_stats;
pub mod error;
pub mod experiment;
pub mod failure_sets;
pub mod linalg;
pub mod ma_process;
pub mod rare_event;
pub mod report;
pub mod rng;
pub mod tail_noise;

pub use error::{Error, Result};
