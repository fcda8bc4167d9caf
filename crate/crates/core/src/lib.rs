//! Declarative-memory activation models for predicting music relistening.
//!
//! The crate covers the whole experimental pipeline:
//!
//! - [`corpus`]: listening-event and track-metadata loading, stratified user sampling
//! - [`sessionizer`]: gap-based session assignment
//! - [`activation`]: base-level, spreading, partial matching, valuation and noise
//!   components, softmax normalization, weighted combination and ranking
//! - [`baselines`]: transition-probability and most-recent predictors
//! - [`evaluator`]: one-week sliding-window replay scored with R-precision and next-hit rate
//! - [`calibration`]: relistening-gap power-law fit and component weight regression
//! - [`synthgen`]: synthetic corpora with power-law relistening gaps

pub mod activation;
pub mod baselines;
pub mod calibration;
pub mod corpus;
mod error;
pub mod evaluator;
pub mod lstsq;
pub mod seed;
pub mod sessionizer;
pub mod synthgen;

pub use error::{Error, Result};

/// Seconds in one hour; all decay math runs in hours.
pub const SECONDS_PER_HOUR: f64 = 3600.0;
