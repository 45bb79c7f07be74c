//! Synthetic ground truth: parameters drawn from known distributions and the
//! responses, confidences and predictions they imply.
//!
//! Every function takes an explicit seed. Independent pieces (parameters,
//! responses, label noise, confidences, predictions) draw from separate
//! ChaCha streams of that seed, so changing one never shifts another.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Beta, Distribution, LogNormal, Normal, StudentT, Uniform};
use serde::{Deserialize, Serialize};

use crate::analysis::{kendall_tau, pearson_r, ErrorFlags};
use crate::error::{Error, Result};
use crate::irt::{sigmoid, ModelKind, ParameterSet};
use crate::matrix::{ConfidenceMatrix, ItemMeta, PredictionMatrix, ResponseMatrix};
use crate::posterior::FittedPosterior;

const STREAM_PARAMETERS: u64 = 1;
const STREAM_RESPONSES: u64 = 2;
const STREAM_LABEL_NOISE: u64 = 3;
const STREAM_CONFIDENCES: u64 = 4;
const STREAM_PREDICTIONS: u64 = 5;

/// Beta shapes `e^{±a/2}` are sampled with `|a|` capped here; beyond it the
/// draw is 0 or 1 to double precision anyway.
const SAMPLE_LOGIT_MAX: f64 = 30.0;

fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum AbilityDistribution {
    /// N(0, 1).
    Normal,
    /// Student t with the given degrees of freedom; heavier tails than the
    /// fitting prior.
    StudentT { dof: f64 },
}

/// Power distortion `c ← c^t` of confidences; `t < 1` inflates them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Miscalibration {
    Uniform(f64),
    PerModel(Vec<f64>),
}

impl Miscalibration {
    fn exponent(&self, model: usize) -> f64 {
        match self {
            Miscalibration::Uniform(t) => *t,
            Miscalibration::PerModel(ts) => ts[model],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorSpec {
    pub n_models: usize,
    pub n_items: usize,
    pub kind: ModelKind,
    pub ability: AbilityDistribution,
    pub miscalibration: Option<Miscalibration>,
    /// Fraction of items whose response column is inverted for every model.
    pub label_noise: f64,
    /// Number of severity levels for stratified generation; items cycle
    /// through classes first, then levels.
    pub severity_levels: Option<u8>,
    pub n_classes: usize,
}

impl GeneratorSpec {
    pub fn new(n_models: usize, n_items: usize, kind: ModelKind) -> Result<Self> {
        let spec = GeneratorSpec {
            n_models,
            n_items,
            kind,
            ability: AbilityDistribution::Normal,
            miscalibration: None,
            label_noise: 0.0,
            severity_levels: None,
            n_classes: 10,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidArgument(msg));
        if self.n_models == 0 || self.n_items == 0 {
            return bad(format!(
                "need at least one model and one item, got {} × {}",
                self.n_models, self.n_items
            ));
        }
        if self.kind.dim() == 0 {
            return bad("MultiDim2PL needs d >= 1".into());
        }
        if !(0.0..1.0).contains(&self.label_noise) {
            return bad(format!("label_noise {} is outside [0, 1)", self.label_noise));
        }
        if self.n_classes == 0 {
            return bad("n_classes must be positive".into());
        }
        if let AbilityDistribution::StudentT { dof } = self.ability {
            if !(dof > 0.0) {
                return bad(format!("Student t degrees of freedom must be positive, got {dof}"));
            }
        }
        match &self.miscalibration {
            Some(Miscalibration::Uniform(t)) if !(*t > 0.0 && t.is_finite()) => {
                return bad(format!("miscalibration exponent {t} must be positive"));
            }
            Some(Miscalibration::PerModel(ts)) => {
                if ts.len() != self.n_models {
                    return bad(format!(
                        "{} miscalibration exponents for {} models",
                        ts.len(),
                        self.n_models
                    ));
                }
                if let Some(t) = ts.iter().find(|t| !(**t > 0.0 && t.is_finite())) {
                    return bad(format!("miscalibration exponent {t} must be positive"));
                }
            }
            _ => {}
        }
        match self.severity_levels {
            Some(l) if !(1..=5).contains(&l) => bad(format!("severity_levels {l} is outside 1..=5")),
            _ => Ok(()),
        }
    }

    pub fn model_ids(&self) -> Vec<String> {
        (0..self.n_models).map(|i| format!("model_{i:03}")).collect()
    }

    pub fn item_ids(&self) -> Vec<String> {
        (0..self.n_items).map(|j| format!("item_{j:05}")).collect()
    }

    /// Class index and 1-based severity of item `j`.
    pub fn item_group(&self, j: usize) -> (usize, Option<u8>) {
        let c = self.n_classes;
        let class = j % c;
        let severity = self.severity_levels.map(|l| ((j / c) % l as usize) as u8 + 1);
        (class, severity)
    }

    pub fn item_meta(&self) -> Vec<ItemMeta> {
        (0..self.n_items)
            .map(|j| {
                let (class, severity) = self.item_group(j);
                ItemMeta {
                    class_label: format!("class_{class:02}"),
                    severity,
                }
            })
            .collect()
    }
}

/// Severity-stratified guessing level: evenly spaced from 0.6 at level 1 down
/// to 0.05 at the top level.
fn guessing_center(severity: u8, levels: u8) -> f64 {
    if levels <= 1 {
        return 0.3;
    }
    0.6 - 0.55 * f64::from(severity - 1) / f64::from(levels - 1)
}

/// Mean difficulty at a severity level, rising from -1 to 1.
fn difficulty_center(severity: u8, levels: u8) -> f64 {
    if levels <= 1 {
        return 0.0;
    }
    -1.0 + 2.0 * f64::from(severity - 1) / f64::from(levels - 1)
}

/// Draws θ ~ N(0, 1) (or Student t), b ~ N(0, 1), γ ~ LogNormal(0, 0.5),
/// λ ~ U(0, 0.3) and per-model γ ~ LogNormal(0, 0.5), as the kind requires.
///
/// With severity levels, b centers rise with severity and λ centers fall.
/// Each class shares one λ offset across levels and per-item jitter is
/// bounded, so every class's true median λ strictly decreases with severity.
pub fn generate_parameters(spec: &GeneratorSpec, seed: u64) -> Result<ParameterSet> {
    spec.validate()?;
    let mut rng = rng_for(seed, STREAM_PARAMETERS);
    let d = spec.kind.dim();
    let (n, m) = (spec.n_models, spec.n_items);
    let std_normal = Normal::new(0.0, 1.0).expect("valid");
    let log_normal = LogNormal::new(0.0, 0.5).expect("valid");

    let theta: Vec<f64> = match spec.ability {
        AbilityDistribution::Normal => (0..n * d).map(|_| std_normal.sample(&mut rng)).collect(),
        AbilityDistribution::StudentT { dof } => {
            let t = StudentT::new(dof).map_err(|e| Error::InvalidArgument(e.to_string()))?;
            (0..n * d).map(|_| t.sample(&mut rng)).collect()
        }
    };
    let class_offsets: Vec<f64> = (0..spec.n_classes).map(|_| rng.random_range(-0.05..0.05)).collect();
    let mut b = Vec::with_capacity(m * d);
    for j in 0..m {
        let center = match spec.item_group(j).1 {
            Some(s) => difficulty_center(s, spec.severity_levels.unwrap_or(1)),
            None => 0.0,
        };
        let sd = if spec.severity_levels.is_some() { 0.75 } else { 1.0 };
        for _ in 0..d {
            b.push(center + sd * std_normal.sample(&mut rng));
        }
    }
    let gamma = spec
        .kind
        .has_item_gamma()
        .then(|| (0..m * d).map(|_| log_normal.sample(&mut rng)).collect());
    let lambda = spec.kind.has_guessing().then(|| {
        (0..m)
            .map(|j| match spec.item_group(j) {
                (class, Some(s)) => {
                    let levels = spec.severity_levels.unwrap_or(1);
                    let jitter = rng.random_range(-0.04..0.04);
                    (guessing_center(s, levels) + class_offsets[class] + jitter).clamp(0.0, 1.0)
                }
                _ => rng.random_range(0.0..0.3),
            })
            .collect()
    });
    let gamma_model = spec
        .kind
        .has_model_gamma()
        .then(|| (0..n).map(|_| log_normal.sample(&mut rng)).collect());
    let params = ParameterSet {
        kind: spec.kind,
        theta,
        b,
        gamma,
        lambda,
        gamma_model,
    };
    params.validate()?;
    Ok(params)
}

/// Bernoulli draws from each cell's response probability.
pub fn generate_responses(
    params: &ParameterSet,
    model_ids: Vec<String>,
    item_ids: Vec<String>,
    seed: u64,
) -> Result<ResponseMatrix> {
    params.validate()?;
    let mut rng = rng_for(seed, STREAM_RESPONSES);
    let (n, m) = (params.n_models(), params.n_items());
    let mut cells = Vec::with_capacity(n * m);
    for i in 0..n {
        for j in 0..m {
            let p = params.probability(i, j);
            cells.push(u8::from(rng.random::<f64>() < p));
        }
    }
    ResponseMatrix::new(model_ids, item_ids, cells)
}

/// Inverts every cell of `round(fraction · m)` uniformly chosen items. The
/// inverted items are reported as annotation errors.
pub fn inject_label_noise(matrix: &ResponseMatrix, fraction: f64, seed: u64) -> Result<(ResponseMatrix, ErrorFlags)> {
    if !(0.0..1.0).contains(&fraction) {
        return Err(Error::InvalidArgument(format!(
            "label noise {fraction} is outside [0, 1)"
        )));
    }
    let m = matrix.n_items();
    let k = (fraction * m as f64).round() as usize;
    let mut rng = rng_for(seed, STREAM_LABEL_NOISE);
    let mut flags = ErrorFlags::none(m);
    let mut chosen: Vec<usize> = sample(&mut rng, m, k).into_vec();
    chosen.sort_unstable();
    for &j in &chosen {
        flags.annotation_error[j] = true;
    }
    let cells = matrix
        .cells()
        .iter()
        .enumerate()
        .map(|(k, &z)| if flags.annotation_error[k % m] { 1 - z } else { z })
        .collect();
    let noisy = ResponseMatrix::new(matrix.model_ids().to_vec(), matrix.item_ids().to_vec(), cells)?;
    let noisy = match matrix.item_meta() {
        Some(meta) => noisy.with_item_meta(meta.to_vec())?,
        None => noisy,
    };
    Ok((noisy, flags))
}

/// Confidences `c ~ Beta(e^{a/2}, e^{-a/2})` with `a` from
/// [`ParameterSet::confidence_logit`], so the mean is `σ(a)`, then distorted as
/// `c^t` by the generator's miscalibration exponent. Drawn from the clean
/// parameters: on an inverted item a strong model stays confident while its
/// recorded response is wrong.
pub fn generate_confidences(
    params: &ParameterSet,
    spec: &GeneratorSpec,
    model_ids: Vec<String>,
    item_ids: Vec<String>,
    seed: u64,
) -> Result<ConfidenceMatrix> {
    params.validate()?;
    if matches!(params.kind, ModelKind::MultiDim2PL(_)) {
        return Err(Error::InvalidArgument(
            "confidences are not defined for MultiDim2PL".into(),
        ));
    }
    if params.n_models() != spec.n_models {
        return Err(Error::DimensionMismatch(format!(
            "spec has {} models, parameters have {}",
            spec.n_models,
            params.n_models()
        )));
    }
    let mut rng = rng_for(seed, STREAM_CONFIDENCES);
    let (n, m) = (params.n_models(), params.n_items());
    let mut cells = Vec::with_capacity(n * m);
    for i in 0..n {
        let t = spec.miscalibration.as_ref().map_or(1.0, |mc| mc.exponent(i));
        for j in 0..m {
            let a = params.confidence_logit(i, j).clamp(-SAMPLE_LOGIT_MAX, SAMPLE_LOGIT_MAX);
            let dist = Beta::new((0.5 * a).exp(), (-0.5 * a).exp()).expect("shapes are positive and finite");
            let c: f64 = dist.sample(&mut rng);
            let c = if c.is_finite() { c.clamp(0.0, 1.0) } else { sigmoid(a) };
            cells.push(c.powf(t));
        }
    }
    ConfidenceMatrix::new(model_ids, item_ids, cells)
}

/// Predicted labels consistent with `responses`: a correct cell predicts the
/// item's true class, a wrong cell a uniformly chosen other class. True
/// classes are uniform over `n_classes` labels `c00, c01, ...`.
pub fn generate_predictions(responses: &ResponseMatrix, n_classes: usize, seed: u64) -> Result<PredictionMatrix> {
    if n_classes < 2 {
        return Err(Error::InvalidArgument("predictions need at least 2 classes".into()));
    }
    let mut rng = rng_for(seed, STREAM_PREDICTIONS);
    let labels: Vec<String> = (0..n_classes).map(|c| format!("c{c:02}")).collect();
    let (n, m) = (responses.n_models(), responses.n_items());
    let truth_idx: Vec<usize> = (0..m).map(|_| rng.random_range(0..n_classes)).collect();
    let other = Uniform::new(0, n_classes - 1).expect("n_classes >= 2");
    let mut predicted = Vec::with_capacity(n * m);
    for i in 0..n {
        for j in 0..m {
            let t = truth_idx[j];
            let k = if responses.get(i, j) == 1 {
                t
            } else {
                let r = other.sample(&mut rng);
                if r >= t {
                    r + 1
                } else {
                    r
                }
            };
            predicted.push(labels[k].clone());
        }
    }
    let truth = truth_idx.iter().map(|&t| labels[t].clone()).collect();
    PredictionMatrix::new(
        responses.model_ids().to_vec(),
        responses.item_ids().to_vec(),
        predicted,
        truth,
    )
}

/// On items carrying an annotation error, a wrong recorded answer (response 0)
/// is paired with the model's confidence reflected to at least 0.5, so the
/// model looks confidently wrong against the corrupted label.
pub fn confident_on_flagged(
    confidences: &ConfidenceMatrix,
    responses: &ResponseMatrix,
    flags: &ErrorFlags,
) -> Result<ConfidenceMatrix> {
    confidences.check_aligned(responses)?;
    let m = responses.n_items();
    if flags.len() != m {
        return Err(Error::DimensionMismatch(format!("{} flags for {m} items", flags.len())));
    }
    let cells = confidences
        .cells()
        .iter()
        .zip(responses.cells())
        .enumerate()
        .map(|(k, (&c, &z))| {
            if flags.annotation_error[k % m] && z == 0 {
                c.max(1.0 - c)
            } else {
                c
            }
        })
        .collect();
    ConfidenceMatrix::new(confidences.model_ids().to_vec(), confidences.item_ids().to_vec(), cells)
}

/// Everything one generator run produces.
#[derive(Debug, Clone)]
pub struct SyntheticDataset {
    pub spec: GeneratorSpec,
    pub params: ParameterSet,
    pub responses: ResponseMatrix,
    pub confidences: Option<ConfidenceMatrix>,
    pub flags: ErrorFlags,
}

/// Parameters, responses (with label noise and item metadata) and, for kinds
/// with a confidence model, confidences.
pub fn simulate(spec: &GeneratorSpec, seed: u64) -> Result<SyntheticDataset> {
    let params = generate_parameters(spec, seed)?;
    let clean =
        generate_responses(&params, spec.model_ids(), spec.item_ids(), seed)?.with_item_meta(spec.item_meta())?;
    let (responses, flags) = inject_label_noise(&clean, spec.label_noise, seed)?;
    let confidences = match spec.kind {
        ModelKind::MultiDim2PL(_) => None,
        _ => {
            let c = generate_confidences(&params, spec, spec.model_ids(), spec.item_ids(), seed)?;
            Some(confident_on_flagged(&c, &responses, &flags)?)
        }
    };
    Ok(SyntheticDataset {
        spec: spec.clone(),
        params,
        responses,
        confidences,
        flags,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FamilyRecovery {
    pub family: String,
    pub count: usize,
    pub kendall_tau: f64,
    pub pearson_r: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RecoveryReport {
    pub families: Vec<FamilyRecovery>,
}

impl RecoveryReport {
    pub fn family(&self, name: &str) -> Option<&FamilyRecovery> {
        self.families.iter().find(|f| f.family == name)
    }
}

/// Rank and linear agreement between true parameters and posterior means,
/// for every family both sides carry. Families that are constant on either
/// side are skipped.
pub fn recovery_report(truth: &ParameterSet, fitted: &FittedPosterior) -> Result<RecoveryReport> {
    truth.validate()?;
    fitted.validate()?;
    let est = fitted.point_estimates();
    if truth.n_models() != est.n_models() || truth.n_items() != est.n_items() || truth.dim() != est.dim() {
        return Err(Error::DimensionMismatch(format!(
            "truth is {} × {} (d = {}), posterior is {} × {} (d = {})",
            truth.n_models(),
            truth.n_items(),
            truth.dim(),
            est.n_models(),
            est.n_items(),
            est.dim()
        )));
    }
    let pairs: [(&str, Option<&Vec<f64>>, Option<&Vec<f64>>); 5] = [
        ("ability", Some(&truth.theta), Some(&est.theta)),
        ("difficulty", Some(&truth.b), Some(&est.b)),
        ("discriminability", truth.gamma.as_ref(), est.gamma.as_ref()),
        ("guessing", truth.lambda.as_ref(), est.lambda.as_ref()),
        (
            "model_discriminability",
            truth.gamma_model.as_ref(),
            est.gamma_model.as_ref(),
        ),
    ];
    let mut families = Vec::new();
    for (name, t, e) in pairs {
        let (Some(t), Some(e)) = (t, e) else { continue };
        match (kendall_tau(t, e), pearson_r(t, e)) {
            (Ok(tau), Ok(r)) => families.push(FamilyRecovery {
                family: name.to_string(),
                count: t.len(),
                kendall_tau: tau,
                pearson_r: r,
            }),
            (Err(Error::Undefined(_)), _) | (_, Err(Error::Undefined(_))) => {}
            (Err(e), _) | (_, Err(e)) => return Err(e),
        }
    }
    Ok(RecoveryReport { families })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spec_validation() {
        assert!(GeneratorSpec::new(0, 5, ModelKind::OnePL).is_err());
        assert!(GeneratorSpec::new(5, 0, ModelKind::OnePL).is_err());
        let mut s = GeneratorSpec::new(3, 4, ModelKind::OnePL).unwrap();
        s.label_noise = 1.0;
        assert!(s.validate().is_err());
        s.label_noise = 0.0;
        s.miscalibration = Some(Miscalibration::Uniform(0.0));
        assert!(s.validate().is_err());
    }

    #[test]
    fn same_seed_same_parameters() {
        let s = GeneratorSpec::new(20, 30, ModelKind::ThreePL).unwrap();
        assert_eq!(generate_parameters(&s, 9).unwrap(), generate_parameters(&s, 9).unwrap());
        assert_ne!(
            generate_parameters(&s, 9).unwrap(),
            generate_parameters(&s, 10).unwrap()
        );
    }

    #[test]
    fn lambda_one_gives_all_ones() {
        let params = ParameterSet {
            kind: ModelKind::ThreePL,
            theta: vec![-3.0, 0.0, 2.0],
            b: vec![0.0, 5.0],
            gamma: Some(vec![1.0, 2.0]),
            lambda: Some(vec![1.0, 1.0]),
            gamma_model: None,
        };
        let ids = |p: &str, k: usize| (0..k).map(|i| format!("{p}{i}")).collect::<Vec<_>>();
        let r = generate_responses(&params, ids("m", 3), ids("i", 2), 4).unwrap();
        assert!(r.cells().iter().all(|&z| z == 1));
    }

    #[test]
    fn stratified_truth_medians_decrease() {
        let mut s = GeneratorSpec::new(5, 500, ModelKind::ThreePL).unwrap();
        s.severity_levels = Some(5);
        let p = generate_parameters(&s, 1).unwrap();
        let lambda = p.lambda.unwrap();
        for class in 0..s.n_classes {
            let mut prev = f64::INFINITY;
            for level in 1..=5u8 {
                let vals: Vec<f64> = (0..s.n_items)
                    .filter(|&j| s.item_group(j) == (class, Some(level)))
                    .map(|j| lambda[j])
                    .collect();
                let med = crate::analysis::median(&vals).unwrap();
                assert!(med < prev);
                prev = med;
            }
        }
    }

    #[test]
    fn label_noise_inverts_whole_columns() {
        let s = GeneratorSpec::new(6, 40, ModelKind::OnePL).unwrap();
        let p = generate_parameters(&s, 2).unwrap();
        let r = generate_responses(&p, s.model_ids(), s.item_ids(), 2).unwrap();
        let (noisy, flags) = inject_label_noise(&r, 0.1, 2).unwrap();
        assert_eq!(flags.annotation_error.iter().filter(|&&f| f).count(), 4);
        for j in 0..40 {
            for i in 0..6 {
                let flipped = noisy.get(i, j) != r.get(i, j);
                assert_eq!(flipped, flags.annotation_error[j]);
            }
        }
    }

    #[test]
    fn predictions_match_responses() {
        let s = GeneratorSpec::new(4, 25, ModelKind::OnePL).unwrap();
        let p = generate_parameters(&s, 3).unwrap();
        let r = generate_responses(&p, s.model_ids(), s.item_ids(), 3).unwrap();
        let pred = generate_predictions(&r, 5, 3).unwrap();
        assert_eq!(crate::matrix::derive_responses(&pred), r);
    }
}
