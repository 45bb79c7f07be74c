use serde::Serialize;

use crate::error::{Error, Result};
use crate::irt::ModelKind;
use crate::matrix::ConfidenceMatrix;
use crate::posterior::FittedPosterior;

use super::{check_ids, ErrorFlags};

pub const DEFAULT_BIN_WIDTH: f64 = 0.1;

/// `p*_ij - c_ij`: fitted success probability minus the model's confidence.
#[derive(Debug, Clone, PartialEq)]
pub struct OverconfidenceMatrix {
    pub model_ids: Vec<String>,
    pub item_ids: Vec<String>,
    pub cells: Vec<f64>,
}

impl OverconfidenceMatrix {
    pub fn get(&self, model: usize, item: usize) -> f64 {
        self.cells[model * self.item_ids.len() + item]
    }

    pub fn row(&self, model: usize) -> &[f64] {
        let m = self.item_ids.len();
        &self.cells[model * m..(model + 1) * m]
    }
}

/// Requires a 2PL posterior fitted on the same models and items as `conf`.
pub fn overconfidence(fitted: &FittedPosterior, conf: &ConfidenceMatrix) -> Result<OverconfidenceMatrix> {
    if fitted.kind != ModelKind::TwoPL {
        return Err(Error::InvalidArgument(format!(
            "overconfidence needs a TwoPL posterior, got {}",
            fitted.kind
        )));
    }
    check_ids(fitted, conf.model_ids(), conf.item_ids())?;
    let params = fitted.point_estimates();
    let m = conf.n_items();
    let cells = (0..conf.n_models() * m)
        .map(|k| params.probability(k / m, k % m) - conf.cells()[k])
        .collect();
    Ok(OverconfidenceMatrix {
        model_ids: conf.model_ids().to_vec(),
        item_ids: conf.item_ids().to_vec(),
        cells,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OverconfidenceBin {
    pub lower: f64,
    pub upper: f64,
    pub count: usize,
    pub annotation_errors: usize,
    pub class_overlaps: usize,
    pub annotation_error_pct: f64,
    pub class_overlap_pct: f64,
}

/// Bins one model's overconfidence values over `[-1, 1]` with the given width
/// and reports, per non-empty bin, the share of flagged items. Values on an
/// interior edge fall into the upper bin; 1 falls into the last bin.
pub fn error_rate_by_overconfidence(
    o: &OverconfidenceMatrix,
    model: usize,
    flags: &ErrorFlags,
    bin_width: f64,
) -> Result<Vec<OverconfidenceBin>> {
    if !(bin_width > 0.0 && bin_width <= 2.0) {
        return Err(Error::InvalidArgument(format!(
            "bin width {bin_width} is outside (0, 2]"
        )));
    }
    let m = o.item_ids.len();
    if model >= o.model_ids.len() {
        return Err(Error::IndexOutOfRange {
            axis: "model",
            index: model,
            len: o.model_ids.len(),
        });
    }
    if flags.annotation_error.len() != m || flags.class_overlap.len() != m {
        return Err(Error::DimensionMismatch(format!(
            "{} annotation / {} overlap flags for {m} items",
            flags.annotation_error.len(),
            flags.class_overlap.len()
        )));
    }
    let n_bins = ((2.0 / bin_width) - 1e-9).ceil().max(1.0) as usize;
    let mut counts = vec![(0usize, 0usize, 0usize); n_bins];
    for (j, &v) in o.row(model).iter().enumerate() {
        // the small offset keeps decimal edges such as -0.9 in the upper bin
        let k = (((v + 1.0) / bin_width + 1e-9).floor().max(0.0) as usize).min(n_bins - 1);
        counts[k].0 += 1;
        counts[k].1 += flags.annotation_error[j] as usize;
        counts[k].2 += flags.class_overlap[j] as usize;
    }
    Ok(counts
        .into_iter()
        .enumerate()
        .filter(|(_, c)| c.0 > 0)
        .map(|(k, (count, ann, ovl))| OverconfidenceBin {
            lower: -1.0 + k as f64 * bin_width,
            upper: (-1.0 + (k + 1) as f64 * bin_width).min(1.0),
            count,
            annotation_errors: ann,
            class_overlaps: ovl,
            annotation_error_pct: 100.0 * ann as f64 / count as f64,
            class_overlap_pct: 100.0 * ovl as f64 / count as f64,
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single_row(cells: Vec<f64>) -> OverconfidenceMatrix {
        let m = cells.len();
        OverconfidenceMatrix {
            model_ids: vec!["m".into()],
            item_ids: (0..m).map(|j| format!("i{j}")).collect(),
            cells,
        }
    }

    #[test]
    fn bins_and_percentages() {
        let o = single_row(vec![-1.0, -0.95, 0.0, 0.05, 1.0]);
        let flags = ErrorFlags {
            annotation_error: vec![true, false, true, false, true],
            class_overlap: vec![false; 5],
        };
        let bins = error_rate_by_overconfidence(&o, 0, &flags, 0.1).unwrap();
        assert_eq!(bins.len(), 3);
        assert_eq!(bins[0].count, 2);
        assert_eq!(bins[0].annotation_error_pct, 50.0);
        // 0.0 sits on an edge and goes up into [0, 0.1)
        assert!((bins[1].lower - 0.0).abs() < 1e-12);
        assert_eq!(bins[1].count, 2);
        assert_eq!(bins[2].count, 1);
        assert_eq!(bins[2].annotation_error_pct, 100.0);
    }

    #[test]
    fn bad_width() {
        let o = single_row(vec![0.0]);
        let flags = ErrorFlags::none(1);
        assert!(error_rate_by_overconfidence(&o, 0, &flags, 0.0).is_err());
        assert!(error_rate_by_overconfidence(&o, 0, &flags, 2.5).is_err());
        assert_eq!(error_rate_by_overconfidence(&o, 0, &flags, 2.0).unwrap().len(), 1);
    }
}
