//! Moderate-margin adversarial training (MMAT) for small multilayer perceptrons.
//!
//! The crate bundles a reverse-mode autodiff engine ([`ndgrad`]), dense ReLU
//! networks ([`nets`]), gradient and DeepFool attacks ([`attacks`]), the
//! example grading strategy ([`strategy`]), training loops ([`training`]),
//! evaluation ([`evaluation`]) and data loading ([`data`]).

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod attacks;
pub mod cli;
pub mod config;
pub mod data;
pub mod error;
pub mod evaluation;
pub mod ndgrad;
pub mod nets;
pub mod rng;
pub mod strategy;
pub mod study;
pub mod training;

pub use error::{Error, Result};

/// Version stamp written into every checkpoint.
pub const ARTIFACT_VERSION: &str = "mmat-1";
