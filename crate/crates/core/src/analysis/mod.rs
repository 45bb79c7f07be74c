//! Downstream analyses on fitted posteriors: reliability, overconfidence,
//! guessing summaries, subset selection and calibration.

mod calibration;
mod complexity;
mod correlation;
mod overconfidence;
mod reliability;
mod selection;

pub use calibration::{calibrate_confidences, ece, CalibratedMatrix, DEFAULT_ECE_BINS};
pub use complexity::{classwise_median, median, GroupMedian, ItemParameter};
pub use correlation::{kendall_tau, pearson_r};
pub use overconfidence::{
    error_rate_by_overconfidence, overconfidence, OverconfidenceBin, OverconfidenceMatrix, DEFAULT_BIN_WIDTH,
};
pub use reliability::{reliability_report, ItemPoint, ModelPoint, ReliabilityReport};
pub use selection::{select_discriminable_subset, subset_ranking_fidelity};

/// Per-item flags for known annotation problems.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ErrorFlags {
    pub annotation_error: Vec<bool>,
    pub class_overlap: Vec<bool>,
}

impl ErrorFlags {
    pub fn none(n_items: usize) -> Self {
        ErrorFlags {
            annotation_error: vec![false; n_items],
            class_overlap: vec![false; n_items],
        }
    }

    pub fn len(&self) -> usize {
        self.annotation_error.len()
    }

    pub fn is_empty(&self) -> bool {
        self.annotation_error.is_empty()
    }
}

use crate::error::{Error, Result};
use crate::posterior::FittedPosterior;

/// Verifies that `fitted` was fitted on exactly these models and items.
pub(crate) fn check_ids(fitted: &FittedPosterior, model_ids: &[String], item_ids: &[String]) -> Result<()> {
    if fitted.model_ids != model_ids {
        return Err(Error::DimensionMismatch(
            "posterior model ids differ from the matrix model ids".into(),
        ));
    }
    if fitted.item_ids != item_ids {
        return Err(Error::DimensionMismatch(
            "posterior item ids differ from the matrix item ids".into(),
        ));
    }
    Ok(())
}

/// Mean of each consecutive `d`-sized group; identity for `d == 1`.
pub(crate) fn per_unit_mean(values: &[f64], d: usize) -> Vec<f64> {
    values.chunks(d).map(|c| c.iter().sum::<f64>() / d as f64).collect()
}
