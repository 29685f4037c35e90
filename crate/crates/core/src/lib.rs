//! Cross-validation for spatially and temporally structured presence/absence data.
//!
//! The crate builds fold plans that respect spatial autocorrelation (random,
//! spatial blocks, environmental clusters, spatio-temporal blocks and
//! forward-chaining), tunes tree ensembles under them, finalizes a model by
//! retraining or by keeping the last fold's training window, and measures how
//! well validation scores track scores on an out-of-time test period.

pub mod data;
pub mod error;
pub mod folds;
pub mod geo;
pub mod kmeans;
pub mod learners;
pub mod metrics;
mod optim;
pub mod pipeline;
pub mod rng;
pub mod sac;
pub mod sim;
pub mod smote;
pub mod table;
pub mod tuning;

pub use error::{Error, Result};
