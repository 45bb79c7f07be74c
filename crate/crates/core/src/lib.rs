//! Item response theory for classifier evaluation.
//!
//! Fits 1PL/2PL/3PL, multidimensional 2PL, Beta and joint confidence-response
//! IRT models to model-by-item response matrices with mean-field variational
//! inference, and provides the downstream analyses built on the fitted
//! parameters: reliability statistics, overconfidence, guessing summaries,
//! discriminative subset selection, calibration and weighted ensembles.

pub mod analysis;
pub mod ensemble;
pub mod error;
pub mod io;
pub mod irt;
pub mod matrix;
pub mod posterior;
pub mod synth;
pub mod vi;

pub use error::{Error, Result};
