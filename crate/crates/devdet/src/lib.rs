//! Two-stage "developing" pipeline for cross-domain fake-image detection on
//! a procedurally generated multi-domain benchmark.
//!
//! The pieces, in pipeline order:
//! - [`datagen`]: seeded synthetic benchmark where domain texture dominates
//!   the forgery trace (per-domain AUC is high, pooled accuracy collapses)
//! - [`detector`]: small CNN binary detector trained with BCE
//! - [`mining`]: hard-fake / easy-real sample selection by confidence
//! - [`ffdev`]: developer generator trained against the frozen detector to
//!   amplify forgery evidence while preserving reals
//! - [`dosedict`]: sparse dictionary over hard-fake features; reconstruction
//!   error drives a per-sample developing dose
//! - [`daft`]: dose-adaptive fine-tuning of the detector plus the assembled
//!   three-step inference pipeline (dose, develop, predict)
//! - [`metrics`]: per-domain AUC/ACC, pooled S-AUC, M-ACC
//! - [`cli`]: artifact-chained commands (`synth` … `eval`, `ablate`,
//!   `run-all`) driven by a [`config::RunConfig`]
//!
//! Everything is deterministic from one root seed; all trained parameters
//! are f32-quantized in memory so checkpoints round-trip bit-exactly.

pub mod cli;
pub mod config;
pub mod daft;
pub mod data;
pub mod datagen;
pub mod detector;
pub mod dosedict;
pub mod error;
pub mod ffdev;
pub mod img;
pub mod metrics;
pub mod mining;
pub mod nn;
pub mod rng;

pub use error::{Error, Result};
