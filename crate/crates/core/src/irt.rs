//! Item characteristic curves and likelihoods.
//!
//! Every kernel accepts unconstrained real inputs and saturates numerically at
//! the extremes. The only rejected inputs are non-positive discriminability,
//! guessing outside `[0, 1]`, and mismatched vector dimensions.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use statrs::function::gamma::{digamma, ln_gamma};

use crate::error::{Error, Result};
use crate::matrix::ResponseMatrix;

/// Probabilities are clamped to `[PROB_CLAMP, 1 - PROB_CLAMP]` before taking logs.
pub const PROB_CLAMP: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ModelKind {
    OnePL,
    TwoPL,
    ThreePL,
    /// Multidimensional 2PL with the given number of latent dimensions.
    MultiDim2PL(usize),
    /// Continuous responses (confidences) under a Beta likelihood.
    Beta,
    /// Binary responses and confidences with a per-model confidence slope.
    JointConfidence,
}

impl ModelKind {
    pub fn dim(self) -> usize {
        match self {
            ModelKind::MultiDim2PL(d) => d,
            _ => 1,
        }
    }

    /// Per-item discriminability γ is part of the model.
    pub fn has_item_gamma(self) -> bool {
        matches!(self, ModelKind::TwoPL | ModelKind::ThreePL | ModelKind::MultiDim2PL(_))
    }

    pub fn has_guessing(self) -> bool {
        self == ModelKind::ThreePL
    }

    pub fn has_model_gamma(self) -> bool {
        self == ModelKind::JointConfidence
    }

    /// Kinds whose likelihood covers binary responses.
    pub fn uses_responses(self) -> bool {
        self != ModelKind::Beta
    }

    pub fn uses_confidences(self) -> bool {
        matches!(self, ModelKind::Beta | ModelKind::JointConfidence)
    }

    /// Kinds fitted from a response matrix alone.
    pub fn is_discrete(self) -> bool {
        matches!(
            self,
            ModelKind::OnePL | ModelKind::TwoPL | ModelKind::ThreePL | ModelKind::MultiDim2PL(_)
        )
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ModelKind::OnePL => f.write_str("OnePL"),
            ModelKind::TwoPL => f.write_str("TwoPL"),
            ModelKind::ThreePL => f.write_str("ThreePL"),
            ModelKind::MultiDim2PL(d) => write!(f, "MultiDim2PL({d})"),
            ModelKind::Beta => f.write_str("Beta"),
            ModelKind::JointConfidence => f.write_str("JointConfidence"),
        }
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    /// Accepts the display names and the short forms `1pl`, `2pl`, `3pl`,
    /// `md2pl:<d>`, `beta`, `joint`.
    fn from_str(s: &str) -> Result<Self> {
        let lower = s.trim().to_ascii_lowercase();
        let kind = match lower.as_str() {
            "onepl" | "1pl" => ModelKind::OnePL,
            "twopl" | "2pl" => ModelKind::TwoPL,
            "threepl" | "3pl" => ModelKind::ThreePL,
            "beta" => ModelKind::Beta,
            "jointconfidence" | "joint" => ModelKind::JointConfidence,
            _ => {
                let dim = lower
                    .strip_prefix("multidim2pl(")
                    .and_then(|r| r.strip_suffix(')'))
                    .or_else(|| lower.strip_prefix("md2pl:"))
                    .and_then(|d| d.parse::<usize>().ok())
                    .ok_or_else(|| Error::InvalidArgument(format!("unknown model kind `{s}`")))?;
                if dim == 0 {
                    return Err(Error::InvalidArgument("dimension must be at least 1".into()));
                }
                ModelKind::MultiDim2PL(dim)
            }
        };
        Ok(kind)
    }
}

impl Serialize for ModelKind {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for ModelKind {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `ln σ(x)` without overflow.
#[inline]
pub fn log_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        -(-x).exp().ln_1p()
    } else {
        x - x.exp().ln_1p()
    }
}

#[inline]
pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

fn check_gamma(gamma: f64) -> Result<()> {
    if gamma > 0.0 {
        Ok(())
    } else {
        Err(Error::Domain(format!("discriminability must be positive, got {gamma}")))
    }
}

fn check_lambda(lambda: f64) -> Result<()> {
    if (0.0..=1.0).contains(&lambda) {
        Ok(())
    } else {
        Err(Error::Domain(format!("guessing must lie in [0, 1], got {lambda}")))
    }
}

/// `1 / (1 + e^{-(θ - b)})`
pub fn icc_1pl(theta: f64, b: f64) -> f64 {
    sigmoid(theta - b)
}

/// `1 / (1 + e^{-γ(θ - b)})`
pub fn icc_2pl(theta: f64, b: f64, gamma: f64) -> Result<f64> {
    check_gamma(gamma)?;
    Ok(sigmoid(gamma * (theta - b)))
}

/// `λ + (1 - λ) / (1 + e^{-γ(θ - b)})`; lower asymptote λ.
pub fn icc_3pl(theta: f64, b: f64, gamma: f64, lambda: f64) -> Result<f64> {
    check_gamma(gamma)?;
    check_lambda(lambda)?;
    Ok(lambda + (1.0 - lambda) * sigmoid(gamma * (theta - b)))
}

/// `1 / (1 + e^{-Σ_d γ_d (θ_d - b_d)})`
pub fn icc_md2pl(theta: &[f64], b: &[f64], gamma: &[f64]) -> Result<f64> {
    if theta.is_empty() || theta.len() != b.len() || theta.len() != gamma.len() {
        return Err(Error::DimensionMismatch(format!(
            "ability has {} dimensions, difficulty {}, discriminability {}",
            theta.len(),
            b.len(),
            gamma.len()
        )));
    }
    for &g in gamma {
        check_gamma(g)?;
    }
    Ok(sigmoid(md_exponent(theta, b, gamma)))
}

#[inline]
fn md_exponent(theta: &[f64], b: &[f64], gamma: &[f64]) -> f64 {
    theta.iter().zip(b).zip(gamma).map(|((t, d), g)| g * (t - d)).sum()
}

/// Beta shapes `(m, n) = (e^{(θ-b)/2}, e^{-(θ-b)/2})`; the mean `m/(m+n)` is the 1PL curve.
pub fn beta_shape(theta: f64, b: f64) -> (f64, f64) {
    let half = 0.5 * (theta - b);
    (half.exp(), (-half).exp())
}

/// Log Beta(m, n) density at `y`, for `y` strictly inside `(0, 1)`.
pub fn beta_log_density(y: f64, m: f64, n: f64) -> Result<f64> {
    if !(y > 0.0 && y < 1.0) {
        return Err(Error::Domain(format!("Beta support is (0, 1), got {y}")));
    }
    if !(m > 0.0 && n > 0.0) {
        return Err(Error::Domain(format!("Beta shapes must be positive, got ({m}, {n})")));
    }
    Ok(beta_log_density_unchecked(y.ln(), (-y).ln_1p(), m, n))
}

/// Shapes above this use Stirling-series differences instead of subtracting
/// two large `ln Γ` values.
const LARGE_SHAPE: f64 = 1e3;

/// `ln Γ(x + h) - ln Γ(x)` for large `x` and small `h`.
fn ln_gamma_shift(x: f64, h: f64) -> f64 {
    let r = h / x;
    let xh = x + h;
    h * x.ln() + (xh - 0.5) * r.ln_1p() - h + 1.0 / (12.0 * xh) - 1.0 / (12.0 * x) - 1.0 / (360.0 * xh.powi(3))
        + 1.0 / (360.0 * x.powi(3))
}

/// `ψ(x + h) - ψ(x)` for large `x` and small `h`.
fn digamma_shift(x: f64, h: f64) -> f64 {
    let xh = x + h;
    (h / x).ln_1p() - 0.5 / xh + 0.5 / x - 1.0 / (12.0 * xh * xh) + 1.0 / (12.0 * x * x) + 1.0 / (120.0 * xh.powi(4))
        - 1.0 / (120.0 * x.powi(4))
}

/// `ln Γ(m + n) - ln Γ(m) - ln Γ(n)`, stable when one shape is huge.
fn ln_inv_beta(m: f64, n: f64) -> f64 {
    if m >= LARGE_SHAPE && n < m {
        ln_gamma_shift(m, n) - ln_gamma(n)
    } else if n >= LARGE_SHAPE {
        ln_gamma_shift(n, m) - ln_gamma(m)
    } else {
        ln_gamma(m + n) - ln_gamma(m) - ln_gamma(n)
    }
}

#[inline]
pub(crate) fn beta_log_density_unchecked(ln_y: f64, ln_1my: f64, m: f64, n: f64) -> f64 {
    ln_inv_beta(m, n) + (m - 1.0) * ln_y + (n - 1.0) * ln_1my
}

/// Logits beyond this are clamped in the Beta-IRT kernel (shapes up to `e^{30}`).
pub(crate) const BETA_LOGIT_MAX: f64 = 60.0;

/// Log Beta density with shapes `m = e^{a/2}`, `n = e^{-a/2}` and its
/// derivative with respect to `a`.
pub(crate) fn beta_irt_cell(a: f64, ln_y: f64, ln_1my: f64) -> (f64, f64) {
    let clamped = a.clamp(-BETA_LOGIT_MAX, BETA_LOGIT_MAX);
    let m = (0.5 * clamped).exp();
    let n = (-0.5 * clamped).exp();
    let ll = beta_log_density_unchecked(ln_y, ln_1my, m, n);
    if clamped != a {
        return (ll, 0.0);
    }
    // ψ(m+n) - ψ(m) and ψ(m+n) - ψ(n)
    let (dpm, dpn) = if m >= LARGE_SHAPE {
        let dpm = digamma_shift(m, n);
        (dpm, dpm + digamma(m) - digamma(n))
    } else if n >= LARGE_SHAPE {
        let dpn = digamma_shift(n, m);
        (dpn + digamma(n) - digamma(m), dpn)
    } else {
        let ps = digamma(m + n);
        (ps - digamma(m), ps - digamma(n))
    };
    let d = 0.5 * m * (dpm + ln_y) - 0.5 * n * (dpn + ln_1my);
    (ll, d)
}

/// Point values of the latent parameters for one model kind.
///
/// Multi-dimensional blocks are stored row-major: `theta[i * d + k]`,
/// `b[j * d + k]`, `gamma[j * d + k]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ParameterSet {
    pub kind: ModelKind,
    pub theta: Vec<f64>,
    pub b: Vec<f64>,
    pub gamma: Option<Vec<f64>>,
    pub lambda: Option<Vec<f64>>,
    pub gamma_model: Option<Vec<f64>>,
}

impl ParameterSet {
    pub fn dim(&self) -> usize {
        self.kind.dim()
    }

    pub fn n_models(&self) -> usize {
        self.theta.len() / self.dim()
    }

    pub fn n_items(&self) -> usize {
        self.b.len() / self.dim()
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.dim();
        if d == 0 {
            return Err(Error::InvalidArgument("dimension must be at least 1".into()));
        }
        if !self.theta.len().is_multiple_of(d) || !self.b.len().is_multiple_of(d) {
            return Err(Error::DimensionMismatch(format!(
                "ability/difficulty lengths {} / {} are not multiples of d = {d}",
                self.theta.len(),
                self.b.len()
            )));
        }
        let (n, m) = (self.n_models(), self.n_items());
        let block = |name: &str, present: bool, v: &Option<Vec<f64>>, len: usize| -> Result<()> {
            match (present, v) {
                (true, Some(v)) if v.len() == len => Ok(()),
                (true, Some(v)) => Err(Error::DimensionMismatch(format!(
                    "{name} has {} entries, expected {len}",
                    v.len()
                ))),
                (true, None) => Err(Error::InvalidArgument(format!("{} requires {name}", self.kind))),
                (false, Some(_)) => Err(Error::InvalidArgument(format!("{} does not use {name}", self.kind))),
                (false, None) => Ok(()),
            }
        };
        block("discriminability", self.kind.has_item_gamma(), &self.gamma, m * d)?;
        block("guessing", self.kind.has_guessing(), &self.lambda, m)?;
        block(
            "model discriminability",
            self.kind.has_model_gamma(),
            &self.gamma_model,
            n,
        )?;
        for g in self.gamma.iter().chain(&self.gamma_model).flatten() {
            check_gamma(*g)?;
        }
        for l in self.lambda.iter().flatten() {
            check_lambda(*l)?;
        }
        Ok(())
    }

    pub fn theta_of(&self, model: usize) -> &[f64] {
        let d = self.dim();
        &self.theta[model * d..(model + 1) * d]
    }

    pub fn b_of(&self, item: usize) -> &[f64] {
        let d = self.dim();
        &self.b[item * d..(item + 1) * d]
    }

    /// Probability that `model` answers `item` correctly. Beta and joint
    /// kinds use the 1PL curve.
    pub fn probability(&self, model: usize, item: usize) -> f64 {
        match self.kind {
            ModelKind::OnePL | ModelKind::Beta | ModelKind::JointConfidence => {
                sigmoid(self.theta[model] - self.b[item])
            }
            ModelKind::TwoPL => {
                let g = self.gamma.as_ref().expect("validated")[item];
                sigmoid(g * (self.theta[model] - self.b[item]))
            }
            ModelKind::ThreePL => {
                let g = self.gamma.as_ref().expect("validated")[item];
                let l = self.lambda.as_ref().expect("validated")[item];
                l + (1.0 - l) * sigmoid(g * (self.theta[model] - self.b[item]))
            }
            ModelKind::MultiDim2PL(d) => {
                let g = &self.gamma.as_ref().expect("validated")[item * d..(item + 1) * d];
                sigmoid(md_exponent(self.theta_of(model), self.b_of(item), g))
            }
        }
    }

    /// Logit of the Beta mean used for confidences: `γ_i(θ_i - b_j)` for the
    /// joint kind, the logit of the response probability otherwise.
    pub fn confidence_logit(&self, model: usize, item: usize) -> f64 {
        match self.kind {
            ModelKind::OnePL | ModelKind::Beta => self.theta[model] - self.b[item],
            ModelKind::JointConfidence => {
                self.gamma_model.as_ref().expect("validated")[model] * (self.theta[model] - self.b[item])
            }
            ModelKind::TwoPL => self.gamma.as_ref().expect("validated")[item] * (self.theta[model] - self.b[item]),
            ModelKind::MultiDim2PL(d) => {
                let g = &self.gamma.as_ref().expect("validated")[item * d..(item + 1) * d];
                md_exponent(self.theta_of(model), self.b_of(item), g)
            }
            ModelKind::ThreePL => {
                let p = self.probability(model, item).clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
                logit(p)
            }
        }
    }

    /// Full n × m probability matrix, row-major.
    pub fn probability_matrix(&self) -> Vec<f64> {
        let (n, m) = (self.n_models(), self.n_items());
        let mut out = Vec::with_capacity(n * m);
        for i in 0..n {
            out.extend((0..m).map(|j| self.probability(i, j)));
        }
        out
    }
}

/// Bernoulli log-likelihood of `matrix` under `params`, with probabilities
/// clamped to `[1e-12, 1 - 1e-12]`.
pub fn log_likelihood(params: &ParameterSet, matrix: &ResponseMatrix) -> Result<f64> {
    if !params.kind.uses_responses() {
        return Err(Error::InvalidArgument(format!(
            "{} does not model binary responses",
            params.kind
        )));
    }
    params.validate()?;
    if params.n_models() != matrix.n_models() || params.n_items() != matrix.n_items() {
        return Err(Error::DimensionMismatch(format!(
            "parameters cover {} × {}, matrix is {} × {}",
            params.n_models(),
            params.n_items(),
            matrix.n_models(),
            matrix.n_items()
        )));
    }
    let mut total = 0.0;
    for i in 0..matrix.n_models() {
        let row = matrix.row(i);
        for (j, &z) in row.iter().enumerate() {
            let p = params.probability(i, j).clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
            total += if z == 1 { p.ln() } else { (1.0 - p).ln() };
        }
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    #[test]
    fn one_pl_reference_points() {
        assert_eq!(icc_1pl(0.3, 0.3), 0.5);
        assert_abs_diff_eq!(icc_1pl(3f64.ln(), 0.0), 0.75, epsilon = 1e-15);
        // e^{-20} / (1 + e^{-20}) ≈ 2.06e-9
        let p = icc_1pl(-20.0, 0.0);
        assert!(p < 1e-8 && p > 0.0);
        assert_abs_diff_eq!(p, 2.061_153_618_190_204_4e-9, epsilon = 1e-22);
    }

    #[test]
    fn two_pl_reference_points() {
        assert_eq!(icc_2pl(1.5, 1.5, 3.7).unwrap(), 0.5);
        assert_abs_diff_eq!(
            icc_2pl(1.0, 0.0, 2.0).unwrap(),
            0.880_797_077_977_882_4,
            epsilon = 1e-15
        );
        assert!(icc_2pl(0.0, 0.0, 0.0).is_err());
        assert!(icc_2pl(0.0, 0.0, -1.0).is_err());
    }

    #[test]
    fn three_pl_reference_points() {
        assert_abs_diff_eq!(icc_3pl(0.0, 0.0, 1.0, 0.2).unwrap(), 0.6, epsilon = 1e-15);
        assert_abs_diff_eq!(icc_3pl(-30.0, 0.0, 1.0, 0.3).unwrap(), 0.3, epsilon = 1e-8);
        assert!(icc_3pl(0.0, 0.0, 1.0, 1.1).is_err());
    }

    #[test]
    fn md2pl_reference_points() {
        // exponent 1*1 + 2*(-0.5) = 0
        let p = icc_md2pl(&[1.0, -0.5], &[0.0, 0.0], &[1.0, 2.0]).unwrap();
        assert_eq!(p, 0.5);
        assert!(icc_md2pl(&[1.0], &[0.0, 0.0], &[1.0]).is_err());
        assert_eq!(icc_md2pl(&[0.4, -2.0], &[0.4, -2.0], &[1.0, 3.0]).unwrap(), 0.5);
    }

    #[test]
    fn beta_reference_points() {
        assert_eq!(beta_shape(0.7, 0.7), (1.0, 1.0));
        let (m, n) = beta_shape(2.0, 0.0);
        assert_abs_diff_eq!(m / (m + n), 0.880_797_077_977_882_4, epsilon = 1e-15);
        assert_abs_diff_eq!(beta_log_density(0.37, 1.0, 1.0).unwrap(), 0.0, epsilon = 1e-14);
        // density 2y at y = 0.5
        assert_abs_diff_eq!(beta_log_density(0.5, 2.0, 1.0).unwrap(), 0.0, epsilon = 1e-14);
        assert!(beta_log_density(0.0, 1.0, 1.0).is_err());
        assert!(beta_log_density(1.0, 1.0, 1.0).is_err());
    }

    #[test]
    fn large_shape_branch_is_continuous() {
        // Both sides of the switch agree with the direct formula.
        for &(m, n) in &[(999.0, 1.0 / 999.0), (1001.0, 1.0 / 1001.0), (5e3, 2e-4)] {
            let direct = ln_gamma(m + n) - ln_gamma(m) - ln_gamma(n);
            assert_abs_diff_eq!(ln_inv_beta(m, n), direct, epsilon = 1e-9);
            assert_abs_diff_eq!(ln_inv_beta(n, m), direct, epsilon = 1e-9);
        }
    }

    #[test]
    fn beta_cell_derivative_matches_finite_difference() {
        let (ly, l1y) = (0.83f64.ln(), 0.17f64.ln());
        for &a in &[-20.0, -14.0, -3.0, 0.0, 0.7, 13.5, 14.2, 25.0] {
            let h = 1e-6;
            let fd = (beta_irt_cell(a + h, ly, l1y).0 - beta_irt_cell(a - h, ly, l1y).0) / (2.0 * h);
            let (_, d) = beta_irt_cell(a, ly, l1y);
            assert!((fd - d).abs() < 1e-5 * d.abs().max(1.0), "a = {a}: {fd} vs {d}");
        }
    }

    #[test]
    fn slope_at_difficulty_is_quarter_gamma() {
        let h = 1e-5;
        for &g in &[0.3, 1.0, 2.5] {
            let fd = (icc_2pl(h, 0.0, g).unwrap() - icc_2pl(-h, 0.0, g).unwrap()) / (2.0 * h);
            assert_abs_diff_eq!(fd, g / 4.0, epsilon = 1e-6);
        }
    }

    #[test]
    fn kind_parse_and_display() {
        for k in [
            ModelKind::OnePL,
            ModelKind::TwoPL,
            ModelKind::ThreePL,
            ModelKind::MultiDim2PL(3),
            ModelKind::Beta,
            ModelKind::JointConfidence,
        ] {
            assert_eq!(k.to_string().parse::<ModelKind>().unwrap(), k);
        }
        assert_eq!("md2pl:2".parse::<ModelKind>().unwrap(), ModelKind::MultiDim2PL(2));
        assert!("md2pl:0".parse::<ModelKind>().is_err());
        assert!("4pl".parse::<ModelKind>().is_err());
    }

    #[test]
    fn log_likelihood_single_cell() {
        let params = ParameterSet {
            kind: ModelKind::OnePL,
            theta: vec![0.2],
            b: vec![0.2],
            gamma: None,
            lambda: None,
            gamma_model: None,
        };
        let r = ResponseMatrix::new(vec!["m".into()], vec!["i".into()], vec![1]).unwrap();
        assert_abs_diff_eq!(log_likelihood(&params, &r).unwrap(), 0.5f64.ln(), epsilon = 1e-15);
    }

    proptest! {
        #[test]
        fn icc_monotone_and_bounded(
            // |γ(θ - b)| stays below ~30 so the curve is not yet saturated in f64
            b in -3.0f64..3.0, g in 0.1f64..2.5, l in 0.0f64..0.9,
            t1 in -4.0f64..4.0, dt in 0.01f64..2.0,
        ) {
            let t2 = t1 + dt;
            prop_assert!(icc_1pl(t1, b) < icc_1pl(t2, b));
            prop_assert!(icc_1pl(b, t1) > icc_1pl(b, t2));
            prop_assert!(icc_2pl(t1, b, g).unwrap() < icc_2pl(t2, b, g).unwrap());
            let p1 = icc_3pl(t1, b, g, l).unwrap();
            let p2 = icc_3pl(t2, b, g, l).unwrap();
            prop_assert!(p1 < p2);
            prop_assert!(p1 > l && p2 < 1.0);
            let p = icc_2pl(t1, b, g).unwrap();
            prop_assert!(p > 0.0 && p < 1.0);
        }

        #[test]
        fn beta_mean_is_one_pl(t in -10.0f64..10.0, b in -10.0f64..10.0) {
            let (m, n) = beta_shape(t, b);
            prop_assert!((m * n - 1.0).abs() < 1e-12);
            prop_assert!((m / (m + n) - icc_1pl(t, b)).abs() < 1e-12);
        }
    }
}
