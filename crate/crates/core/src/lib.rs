//! Augmented-class learning with unlabeled data.
//!
//! The crate covers data preparation under class shift, the augmented Gini
//! impurity, the two-step forest, its neural soft-tree counterpart,
//! evaluation metrics and brute-force reference computations.

pub mod checks;
pub mod dataset;
pub mod error;
pub mod forest;
pub mod impurity;
pub mod metrics;
pub mod model;
pub mod neural;
pub mod oracle;
pub mod rng;

pub use error::{Error, Result};
