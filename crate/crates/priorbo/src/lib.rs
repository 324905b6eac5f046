//! Bayesian optimization driven by a user prior over the optimum's location.
//!
//! The optimizer blends a per-dimension prior density over good points with a
//! probability-of-improvement model derived from a GP or random-forest
//! surrogate. The two are combined into a decaying pseudo-posterior whose
//! influence shifts from prior to model as evaluations accumulate, and the
//! next point is chosen by maximizing a TPE-style expected-improvement ratio.
//!
//! The crate ships as a library plus the `priorbo` CLI, which runs single
//! experiments, recipe sweeps, diagnostics grids, and regret summaries on the
//! bundled closed-form benchmarks or on an external objective process.

pub mod acquisition;
pub mod bench;
pub mod cli;
pub mod engine;
pub mod error;
pub mod optimizer;
pub mod priors;
pub mod space;
pub mod surrogate;

pub use error::{Error, Result};
