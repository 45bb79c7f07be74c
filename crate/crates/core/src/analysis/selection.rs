use crate::error::{Error, Result};
use crate::matrix::ResponseMatrix;
use crate::posterior::FittedPosterior;

use super::{kendall_tau, per_unit_mean};

/// The `k` items with the largest posterior-mean discriminability, optionally
/// restricted to difficulties inside `difficulty_window` (inclusive). Ties are
/// broken by item id. Multidimensional slopes are ranked by their Euclidean
/// norm and difficulties windowed by their mean over dimensions.
pub fn select_discriminable_subset(
    fitted: &FittedPosterior,
    k: usize,
    difficulty_window: Option<(f64, f64)>,
) -> Result<Vec<String>> {
    let d = fitted.kind.dim();
    let gamma = fitted
        .point_estimates()
        .gamma
        .ok_or_else(|| Error::InvalidArgument(format!("{} has no item discriminability", fitted.kind)))?;
    let strength: Vec<f64> = gamma
        .chunks(d)
        .map(|g| g.iter().map(|v| v * v).sum::<f64>().sqrt())
        .collect();
    let difficulty = per_unit_mean(&fitted.difficulty.loc, d);
    if let Some((lo, hi)) = difficulty_window {
        if !(lo <= hi) {
            return Err(Error::InvalidArgument(format!("empty difficulty window [{lo}, {hi}]")));
        }
    }
    let mut pool: Vec<usize> = (0..fitted.n_items())
        .filter(|&j| difficulty_window.is_none_or(|(lo, hi)| difficulty[j] >= lo && difficulty[j] <= hi))
        .collect();
    if k > pool.len() {
        return Err(Error::InvalidArgument(format!(
            "asked for {k} items but only {} remain after filtering",
            pool.len()
        )));
    }
    pool.sort_by(|&a, &b| {
        strength[b]
            .total_cmp(&strength[a])
            .then_with(|| fitted.item_ids[a].cmp(&fitted.item_ids[b]))
    });
    Ok(pool[..k].iter().map(|&j| fitted.item_ids[j].clone()).collect())
}

/// Kendall tau between per-model accuracy on `subset` and on the full matrix.
pub fn subset_ranking_fidelity(matrix: &ResponseMatrix, subset: &[String]) -> Result<f64> {
    if subset.is_empty() {
        return Err(Error::InvalidArgument("subset is empty".into()));
    }
    let sub = matrix.select_items(subset)?;
    kendall_tau(&sub.accuracies(), &matrix.accuracies())
}
