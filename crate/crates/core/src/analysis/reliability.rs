use serde::Serialize;

use crate::error::Result;
use crate::matrix::ResponseMatrix;
use crate::posterior::FittedPosterior;

use super::{check_ids, kendall_tau, per_unit_mean};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ModelPoint {
    pub model_id: String,
    pub ability: f64,
    pub ability_scale: f64,
    pub accuracy: f64,
    pub expected_correct: f64,
    pub actual_correct: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ItemPoint {
    pub item_id: String,
    pub difficulty: f64,
    pub difficulty_scale: f64,
    pub mean_score: f64,
}

/// How well fitted parameters track classical metrics on the same data.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReliabilityReport {
    pub ability_accuracy_tau: f64,
    pub difficulty_score_tau: f64,
    /// RMSE over models of `Σ_j p_ij` against the observed number correct.
    pub expected_correct_rmse: f64,
    pub models: Vec<ModelPoint>,
    pub items: Vec<ItemPoint>,
}

/// Multidimensional abilities and difficulties are summarized by their
/// mean over dimensions.
pub fn reliability_report(matrix: &ResponseMatrix, fitted: &FittedPosterior) -> Result<ReliabilityReport> {
    check_ids(fitted, matrix.model_ids(), matrix.item_ids())?;
    let d = fitted.kind.dim();
    let params = fitted.point_estimates();
    let ability = per_unit_mean(&fitted.ability.loc, d);
    let ability_scale = per_unit_mean(&fitted.ability.scale, d);
    let difficulty = per_unit_mean(&fitted.difficulty.loc, d);
    let difficulty_scale = per_unit_mean(&fitted.difficulty.scale, d);
    let accuracy = matrix.accuracies();
    let scores = matrix.mean_item_scores();

    let (n, m) = (matrix.n_models(), matrix.n_items());
    let mut models = Vec::with_capacity(n);
    let mut sq = 0.0;
    for i in 0..n {
        let expected: f64 = (0..m).map(|j| params.probability(i, j)).sum();
        let actual = matrix.row(i).iter().map(|&z| z as usize).sum::<usize>();
        sq += (expected - actual as f64).powi(2);
        models.push(ModelPoint {
            model_id: matrix.model_ids()[i].clone(),
            ability: ability[i],
            ability_scale: ability_scale[i],
            accuracy: accuracy[i],
            expected_correct: expected,
            actual_correct: actual,
        });
    }
    let items = (0..m)
        .map(|j| ItemPoint {
            item_id: matrix.item_ids()[j].clone(),
            difficulty: difficulty[j],
            difficulty_scale: difficulty_scale[j],
            mean_score: scores[j],
        })
        .collect();
    Ok(ReliabilityReport {
        ability_accuracy_tau: kendall_tau(&ability, &accuracy)?,
        difficulty_score_tau: kendall_tau(&difficulty, &scores)?,
        expected_correct_rmse: (sq / n as f64).sqrt(),
        models,
        items,
    })
}
