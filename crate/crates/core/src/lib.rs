//! sPlot background subtraction and classifier training without negative
//! event weights.
//!
//! - [`density`]: truncated one-dimensional mass densities and mixtures.
//! - [`splot`]: yield fit, species covariance and per-event sWeights.
//! - [`losses`]: constrained MSE, exact mixture likelihood, weighted and
//!   plain cross-entropy, all over raw logits.
//! - [`model`]: leaky-ReLU MLP with manual backprop and Adam.
//! - [`data`]: synthetic generation, CSV ingestion, splits, CWoLa regions.
//! - [`eval`]: ROC AUC, learning curves and size-sweep tables.
//! - [`experiment`]: the method-comparison protocol tying it together.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod data;
pub mod density;
pub mod eval;
pub mod experiment;
pub mod linalg;
pub mod losses;
pub mod model;
pub mod splot;

/// Formats a float with 17 significant digits.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}
