//! Anomaly period detection for multivariate DBMS metric time series.
//!
//! The pipeline trains a reconstruction autoencoder (optionally wrapped in
//! batch temporal normalization) on windows of stat metrics, scores each
//! window and feature by its mean squared reconstruction error, flags windows
//! above a control-chart upper limit, merges them into ranked anomaly periods,
//! and ranks wait-event metrics against the anomalous stat trajectory with
//! DTW and Pearson correlation.

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod data;
pub mod detector;
pub mod nn;
pub mod plot;
pub mod report;
pub mod similarity;
pub mod spc;
pub mod synth;

pub use error::{Error, ErrorCategory, Result};
