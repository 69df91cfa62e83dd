//! Region-level active learning for dense prediction.
//!
//! The crate provides class-decomposition sampling ([`decomp`]), the usual
//! comparison strategies ([`baselines`]), the summed-area machinery both rely
//! on ([`integral`]) and a deterministic desk-scale harness ([`simulator`])
//! with a synthetic dataset, a linear softmax model and an oracle annotator.

pub mod baselines;
pub mod config;
pub mod decomp;
pub mod domain;
pub mod error;
pub mod integral;
pub mod metrics;
pub mod rng;
pub mod simulator;
pub mod tensor;

pub use error::{Error, Result};
