use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::irt::{icc_1pl, ModelKind};
use crate::matrix::ConfidenceMatrix;
use crate::posterior::FittedPosterior;
use crate::vi::DifficultyPosterior;

pub const DEFAULT_ECE_BINS: usize = 15;

/// Expected calibration error over `n_bins` equal-width confidence bins.
///
/// A confidence on an interior bin edge belongs to the upper bin; 1 belongs
/// to the last bin.
pub fn ece(confidences: &[f64], correct: &[u8], n_bins: usize) -> Result<f64> {
    if confidences.len() != correct.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} confidences for {} outcomes",
            confidences.len(),
            correct.len()
        )));
    }
    if n_bins == 0 {
        return Err(Error::InvalidArgument("ece needs at least one bin".into()));
    }
    if confidences.is_empty() {
        return Err(Error::InvalidArgument("ece of an empty sample".into()));
    }
    if let Some(c) = confidences.iter().find(|c| !(0.0..=1.0).contains(*c)) {
        return Err(Error::Domain(format!("confidence {c} is outside [0, 1]")));
    }
    let mut count = vec![0usize; n_bins];
    let mut conf_sum = vec![0.0; n_bins];
    let mut hits = vec![0usize; n_bins];
    for (&c, &z) in confidences.iter().zip(correct) {
        let k = ((c * n_bins as f64 + 1e-9).floor() as usize).min(n_bins - 1);
        count[k] += 1;
        conf_sum[k] += c;
        hits[k] += (z != 0) as usize;
    }
    let total = confidences.len() as f64;
    Ok((0..n_bins)
        .filter(|&k| count[k] > 0)
        .map(|k| {
            let nk = count[k] as f64;
            (nk / total) * (hits[k] as f64 / nk - conf_sum[k] / nk).abs()
        })
        .sum())
}

/// Fitted success probabilities replacing raw confidences.
#[derive(Debug, Clone, PartialEq)]
pub struct CalibratedMatrix {
    pub model_ids: Vec<String>,
    pub item_ids: Vec<String>,
    pub probabilities: Vec<f64>,
    /// `Σ_j p̂_ij` per model.
    pub expected_correct: Vec<f64>,
}

/// `p̂_ij = σ(θ_i - b_j)` from the joint posterior's ability means and the
/// supplied per-item difficulties (typically from
/// [`crate::vi::fit_difficulty_from_confidences`]).
pub fn calibrate_confidences(
    fitted: &FittedPosterior,
    conf: &ConfidenceMatrix,
    difficulties: &DifficultyPosterior,
) -> Result<CalibratedMatrix> {
    if fitted.kind != ModelKind::JointConfidence {
        return Err(Error::InvalidArgument(format!(
            "calibration needs a JointConfidence posterior, got {}",
            fitted.kind
        )));
    }
    let models: HashMap<&str, usize> = fitted
        .model_ids
        .iter()
        .enumerate()
        .map(|(i, s)| (s.as_str(), i))
        .collect();
    let items: HashMap<&str, usize> = difficulties
        .item_ids
        .iter()
        .enumerate()
        .map(|(j, s)| (s.as_str(), j))
        .collect();
    let theta = conf
        .model_ids()
        .iter()
        .map(|id| {
            models
                .get(id.as_str())
                .map(|&i| fitted.ability.loc[i])
                .ok_or_else(|| Error::UnknownId {
                    axis: "model",
                    id: id.clone(),
                })
        })
        .collect::<Result<Vec<f64>>>()?;
    let b = conf
        .item_ids()
        .iter()
        .map(|id| {
            items
                .get(id.as_str())
                .map(|&j| difficulties.difficulty.loc[j])
                .ok_or_else(|| Error::InvalidArgument(format!("no difficulty for item `{id}`")))
        })
        .collect::<Result<Vec<f64>>>()?;
    let m = b.len();
    let probabilities: Vec<f64> = (0..theta.len() * m).map(|k| icc_1pl(theta[k / m], b[k % m])).collect();
    let expected_correct = probabilities.chunks(m.max(1)).map(|r| r.iter().sum()).collect();
    Ok(CalibratedMatrix {
        model_ids: conf.model_ids().to_vec(),
        item_ids: conf.item_ids().to_vec(),
        probabilities,
        expected_correct,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_bin_hand_value() {
        let conf = [0.9; 10];
        let correct = [1, 1, 1, 1, 1, 1, 0, 0, 0, 0];
        assert!((ece(&conf, &correct, 1).unwrap() - 0.3).abs() < 1e-12);
    }

    #[test]
    fn calibrated_constant_is_zero() {
        let conf = [0.5; 4];
        assert_eq!(ece(&conf, &[1, 0, 1, 0], 15).unwrap(), 0.0);
    }

    #[test]
    fn edge_goes_up_and_one_goes_last() {
        // 0.5 with 2 bins lands in the upper bin together with 1.0
        let e = ece(&[0.5, 1.0, 0.2], &[1, 1, 0], 2).unwrap();
        // lower bin: {0.2, wrong} → 0.2 ; upper: {0.5, 1.0} both right → |1 - 0.75|
        let want = (1.0 / 3.0) * 0.2 + (2.0 / 3.0) * 0.25;
        assert!((e - want).abs() < 1e-12);
    }

    #[test]
    fn length_mismatch() {
        assert!(ece(&[0.5], &[1, 0], 3).is_err());
    }
}
