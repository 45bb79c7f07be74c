//! Plurality voting over a prediction matrix, with the weights derived from
//! fitted IRT parameters.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::PredictionMatrix;
use crate::posterior::FittedPosterior;

/// Probabilities are clamped to at most `1 - PROB_WEIGHT_CLAMP` before the
/// `-ln(1 - p)` weight.
pub const PROB_WEIGHT_CLAMP: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum VotingScheme {
    MajorityVote,
    StrongestModel,
    AbilitySoftmax,
    ProbabilityWeighted,
}

impl VotingScheme {
    pub const ALL: [VotingScheme; 4] = [
        VotingScheme::MajorityVote,
        VotingScheme::StrongestModel,
        VotingScheme::AbilitySoftmax,
        VotingScheme::ProbabilityWeighted,
    ];
}

impl fmt::Display for VotingScheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            VotingScheme::MajorityVote => "MajorityVote",
            VotingScheme::StrongestModel => "StrongestModel",
            VotingScheme::AbilitySoftmax => "AbilitySoftmax",
            VotingScheme::ProbabilityWeighted => "ProbabilityWeighted",
        })
    }
}

impl FromStr for VotingScheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let key: String = s
            .chars()
            .filter(|c| c.is_ascii_alphanumeric())
            .collect::<String>()
            .to_ascii_lowercase();
        match key.as_str() {
            "majority" | "majorityvote" => Ok(VotingScheme::MajorityVote),
            "strongest" | "strongestmodel" => Ok(VotingScheme::StrongestModel),
            "softmax" | "abilitysoftmax" => Ok(VotingScheme::AbilitySoftmax),
            "probability" | "probabilityweighted" => Ok(VotingScheme::ProbabilityWeighted),
            _ => Err(Error::InvalidArgument(format!("unknown voting scheme `{s}`"))),
        }
    }
}

/// `w_i = e^{θ_i} / Σ_k e^{θ_k}`, computed after subtracting the maximum.
pub fn ability_softmax_weights(theta: &[f64]) -> Result<Vec<f64>> {
    if theta.is_empty() {
        return Err(Error::InvalidArgument("no abilities".into()));
    }
    if let Some(t) = theta.iter().find(|t| !t.is_finite()) {
        return Err(Error::Domain(format!("ability {t} is not finite")));
    }
    let max = theta.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = theta.iter().map(|t| (t - max).exp()).collect();
    let total: f64 = e.iter().sum();
    Ok(e.into_iter().map(|v| v / total).collect())
}

/// Inputs a scheme may need, aligned with the prediction matrix's models and
/// (for probabilities) cells.
#[derive(Debug, Clone, Copy, Default)]
pub struct VoteInputs<'a> {
    pub abilities: Option<&'a [f64]>,
    pub probabilities: Option<&'a [f64]>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VoteOutcome {
    pub labels: Vec<String>,
    pub accuracy: f64,
}

/// Weighted plurality per item; ties go to the smallest label.
fn plurality(pred: &PredictionMatrix, weight: impl Fn(usize, usize) -> f64) -> Vec<String> {
    let (n, m) = (pred.n_models(), pred.n_items());
    let mut labels = Vec::with_capacity(m);
    let mut tally: BTreeMap<&str, f64> = BTreeMap::new();
    for j in 0..m {
        tally.clear();
        for i in 0..n {
            *tally.entry(pred.get(i, j)).or_insert(0.0) += weight(i, j);
        }
        // BTreeMap iterates labels in ascending order; only a strictly larger
        // score replaces the current winner.
        let mut best: Option<(&str, f64)> = None;
        for (&label, &score) in &tally {
            if best.is_none_or(|(_, s)| score > s) {
                best = Some((label, score));
            }
        }
        labels.push(best.map(|(l, _)| l.to_string()).unwrap_or_default());
    }
    labels
}

fn strongest(pred: &PredictionMatrix, abilities: &[f64]) -> usize {
    let ids = pred.model_ids();
    (0..abilities.len())
        .reduce(|a, b| match abilities[b].total_cmp(&abilities[a]) {
            std::cmp::Ordering::Greater => b,
            std::cmp::Ordering::Equal if ids[b] < ids[a] => b,
            _ => a,
        })
        .expect("at least one model")
}

fn accuracy(labels: &[String], truth: &[String]) -> f64 {
    if truth.is_empty() {
        return 0.0;
    }
    let hits = labels.iter().zip(truth).filter(|(a, b)| a == b).count();
    hits as f64 / truth.len() as f64
}

/// Fuses the models' predictions with `scheme`.
pub fn vote(pred: &PredictionMatrix, scheme: VotingScheme, inputs: VoteInputs) -> Result<VoteOutcome> {
    let n = pred.n_models();
    if n == 0 {
        return Err(Error::InvalidArgument("prediction matrix has no models".into()));
    }
    let abilities = || -> Result<&[f64]> {
        let a = inputs
            .abilities
            .ok_or_else(|| Error::InvalidArgument(format!("{scheme} needs model abilities")))?;
        if a.len() != n {
            return Err(Error::DimensionMismatch(format!(
                "{} abilities for {n} models",
                a.len()
            )));
        }
        Ok(a)
    };
    let labels = match scheme {
        VotingScheme::MajorityVote => plurality(pred, |_, _| 1.0),
        VotingScheme::StrongestModel => {
            let best = strongest(pred, abilities()?);
            (0..pred.n_items()).map(|j| pred.get(best, j).to_string()).collect()
        }
        VotingScheme::AbilitySoftmax => {
            let w = ability_softmax_weights(abilities()?)?;
            plurality(pred, |i, _| w[i])
        }
        VotingScheme::ProbabilityWeighted => {
            let p = inputs
                .probabilities
                .ok_or_else(|| Error::InvalidArgument(format!("{scheme} needs a probability matrix")))?;
            let m = pred.n_items();
            if p.len() != n * m {
                return Err(Error::DimensionMismatch(format!(
                    "{} probabilities for {n} × {m} cells",
                    p.len()
                )));
            }
            if let Some(v) = p.iter().find(|v| !(0.0..=1.0).contains(*v)) {
                return Err(Error::Domain(format!("probability {v} is outside [0, 1]")));
            }
            plurality(pred, |i, j| -(-p[i * m + j].min(1.0 - PROB_WEIGHT_CLAMP)).ln_1p())
        }
    };
    let accuracy = accuracy(&labels, pred.truth());
    Ok(VoteOutcome { labels, accuracy })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EnsembleReport {
    pub accuracies: BTreeMap<VotingScheme, f64>,
    /// Schemes that could not run and why.
    pub notices: Vec<String>,
}

/// Accuracy of every scheme the inputs allow. Abilities come from the
/// posterior (matched by model id; the mean over dimensions for
/// multidimensional fits). Without explicit probabilities, the fitted success
/// probabilities are used when the posterior covers the matrix's items.
pub fn ensemble_report(
    pred: &PredictionMatrix,
    fitted: &FittedPosterior,
    probs: Option<&[f64]>,
) -> Result<EnsembleReport> {
    let d = fitted.kind.dim();
    let model_index: HashMap<&str, usize> = fitted
        .model_ids
        .iter()
        .enumerate()
        .map(|(i, s)| (s.as_str(), i))
        .collect();
    let rows: Vec<usize> = pred
        .model_ids()
        .iter()
        .map(|id| {
            model_index.get(id.as_str()).copied().ok_or_else(|| Error::UnknownId {
                axis: "model",
                id: id.clone(),
            })
        })
        .collect::<Result<_>>()?;
    let abilities: Vec<f64> = rows
        .iter()
        .map(|&i| fitted.ability.loc[i * d..(i + 1) * d].iter().sum::<f64>() / d as f64)
        .collect();

    let mut notices = Vec::new();
    let fitted_probs;
    let probs = match probs {
        Some(p) => Some(p),
        None => {
            let item_index: HashMap<&str, usize> = fitted
                .item_ids
                .iter()
                .enumerate()
                .map(|(j, s)| (s.as_str(), j))
                .collect();
            let cols: Option<Vec<usize>> = pred
                .item_ids()
                .iter()
                .map(|id| item_index.get(id.as_str()).copied())
                .collect();
            match cols {
                Some(cols) => {
                    let params = fitted.point_estimates();
                    fitted_probs = rows
                        .iter()
                        .flat_map(|&i| cols.iter().map(move |&j| (i, j)))
                        .map(|(i, j)| params.probability(i, j))
                        .collect::<Vec<f64>>();
                    Some(fitted_probs.as_slice())
                }
                None => {
                    notices.push(format!(
                        "{} skipped: no probability matrix given and the posterior does not cover every item",
                        VotingScheme::ProbabilityWeighted
                    ));
                    None
                }
            }
        }
    };
    let inputs = VoteInputs {
        abilities: Some(&abilities),
        probabilities: probs,
    };
    let mut accuracies = BTreeMap::new();
    for scheme in VotingScheme::ALL {
        if scheme == VotingScheme::ProbabilityWeighted && probs.is_none() {
            continue;
        }
        accuracies.insert(scheme, vote(pred, scheme, inputs)?.accuracy);
    }
    Ok(EnsembleReport { accuracies, notices })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pred(rows: &[&[&str]], truth: &[&str]) -> PredictionMatrix {
        let n = rows.len();
        let m = truth.len();
        PredictionMatrix::new(
            (0..n).map(|i| format!("m{i}")).collect(),
            (0..m).map(|j| format!("i{j}")).collect(),
            rows.iter().flat_map(|r| r.iter().map(|s| s.to_string())).collect(),
            truth.iter().map(|s| s.to_string()).collect(),
        )
        .unwrap()
    }

    #[test]
    fn softmax_hand_values() {
        let w = ability_softmax_weights(&[2.0, 0.0, 0.0]).unwrap();
        let e2 = 2f64.exp();
        assert!((w[0] - e2 / (e2 + 2.0)).abs() < 1e-15);
        assert!((w[1] - 1.0 / (e2 + 2.0)).abs() < 1e-15);
        assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-15);
        assert!(ability_softmax_weights(&[f64::NAN]).is_err());
    }

    #[test]
    fn strong_model_outvotes_two() {
        let p = pred(&[&["A"], &["B"], &["B"]], &["A"]);
        let inputs = VoteInputs {
            abilities: Some(&[2.0, 0.0, 0.0]),
            probabilities: None,
        };
        assert_eq!(
            vote(&p, VotingScheme::AbilitySoftmax, inputs).unwrap().labels,
            vec!["A"]
        );
        assert_eq!(vote(&p, VotingScheme::MajorityVote, inputs).unwrap().labels, vec!["B"]);
        assert!(vote(&p, VotingScheme::ProbabilityWeighted, inputs).is_err());
    }

    #[test]
    fn ties_go_to_smallest_label() {
        let p = pred(&[&["B"], &["A"]], &["B"]);
        let out = vote(&p, VotingScheme::MajorityVote, VoteInputs::default()).unwrap();
        assert_eq!(out.labels, vec!["A"]);
        assert_eq!(out.accuracy, 0.0);
    }

    #[test]
    fn strongest_tie_goes_to_smallest_id() {
        let p = pred(&[&["A"], &["B"]], &["B"]);
        let inputs = VoteInputs {
            abilities: Some(&[1.0, 1.0]),
            probabilities: None,
        };
        assert_eq!(
            vote(&p, VotingScheme::StrongestModel, inputs).unwrap().labels,
            vec!["A"]
        );
    }

    #[test]
    fn probability_weighting_clamps_certain_cells() {
        let p = pred(&[&["A"], &["B"], &["B"]], &["A"]);
        let inputs = VoteInputs {
            abilities: None,
            probabilities: Some(&[1.0, 0.9, 0.9]),
        };
        // -ln(1e-12) ≈ 27.6 beats 2 · -ln(0.1) ≈ 4.6
        assert_eq!(
            vote(&p, VotingScheme::ProbabilityWeighted, inputs).unwrap().labels,
            vec!["A"]
        );
    }

    #[test]
    fn scheme_names_round_trip() {
        for s in VotingScheme::ALL {
            assert_eq!(s.to_string().parse::<VotingScheme>().unwrap(), s);
        }
    }
}
