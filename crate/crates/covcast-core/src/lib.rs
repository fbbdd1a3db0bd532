// Validation sites use `!(x > bound)` so that NaN fails the check; the
// suggested `partial_cmp` rewrite would let NaN slip through.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

//! Covariance prediction for vectors of financial returns.
//!
//! The crate provides streaming one-step-ahead covariance predictors
//! (rolling window, EWMA, iterated EWMA, and a dynamically weighted
//! combination of iterated EWMAs), the small convex solvers they and the
//! portfolio constructions rely on, log-likelihood regret evaluation, and
//! a backtest driver that turns a daily return panel into regret series
//! and portfolio performance reports.

pub mod backtest;
pub mod combiner;
pub mod convex_kit;
pub mod estimators;
pub mod evaluation;
pub mod linalg;
pub mod market_data;
pub mod portfolios;

pub use backtest::{BacktestReport, ExperimentConfig, PredictorSpec};
pub use combiner::{PrecisionFactor, WeightVector};
pub use estimators::CovEstimate;
pub use market_data::{QuarterPartition, ReturnsMatrix};
