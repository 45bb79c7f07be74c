//! Log joint densities (with gradients) over unconstrained latents.

use std::ops::Range;

use rayon::prelude::*;
use statrs::function::gamma::ln_gamma;

use crate::irt::{beta_irt_cell, log_sigmoid, sigmoid, ModelKind};
use crate::posterior::HyperFamily;

use super::{FamilyPrior, HyperPriors, CONFIDENCE_CLAMP};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Rows per parallel work unit. Fixed so that the reduction order, and hence
/// every floating-point result, is independent of the thread count.
const ROW_CHUNK: usize = 8;

pub(crate) trait Objective: Sync {
    fn dim(&self) -> usize;

    /// Returns `ln p(data, z)` including change-of-variable terms and adds
    /// `∂/∂z` into `grad`.
    fn log_joint(&self, z: &[f64], grad: &mut [f64]) -> f64;
}

#[derive(Debug, Clone)]
pub(crate) struct HyperSlot {
    pub family: HyperFamily,
    pub mean: usize,
    pub log_precision: usize,
    pub values: Range<usize>,
}

/// Positions of each latent block inside the flat latent vector.
#[derive(Debug, Clone)]
pub(crate) struct Layout {
    pub kind: ModelKind,
    pub n: usize,
    pub m: usize,
    pub d: usize,
    pub theta: Range<usize>,
    pub b: Range<usize>,
    pub log_gamma: Option<Range<usize>>,
    pub logit_lambda: Option<Range<usize>>,
    pub log_gamma_model: Option<Range<usize>>,
    pub hyper: Vec<HyperSlot>,
    pub total: usize,
}

impl Layout {
    pub fn new(kind: ModelKind, n: usize, m: usize) -> Self {
        let d = kind.dim();
        let mut next = 0;
        let mut take = |len: usize| {
            let r = next..next + len;
            next += len;
            r
        };
        let theta = take(n * d);
        let b = take(m * d);
        let log_gamma = kind.has_item_gamma().then(|| take(m * d));
        let logit_lambda = kind.has_guessing().then(|| take(m));
        let log_gamma_model = kind.has_model_gamma().then(|| take(n));
        let mut hyper = Vec::new();
        for family in HyperFamily::for_kind(kind) {
            let values = match family {
                HyperFamily::Ability => theta.clone(),
                HyperFamily::Difficulty => b.clone(),
                HyperFamily::LogDiscriminability => log_gamma.clone().expect("kind has γ"),
                HyperFamily::LogModelDiscriminability => log_gamma_model.clone().expect("kind has model γ"),
            };
            let mean = take(1).start;
            let log_precision = take(1).start;
            hyper.push(HyperSlot {
                family,
                mean,
                log_precision,
                values,
            });
        }
        Layout {
            kind,
            n,
            m,
            d,
            theta,
            b,
            log_gamma,
            logit_lambda,
            log_gamma_model,
            hyper,
            total: next,
        }
    }
}

/// Clamps a confidence into `[CONFIDENCE_CLAMP, 1 - CONFIDENCE_CLAMP]` and
/// returns `(ln y, ln(1 - y))`.
pub(crate) fn confidence_logs(c: f64) -> [f64; 2] {
    let y = c.clamp(CONFIDENCE_CLAMP, 1.0 - CONFIDENCE_CLAMP);
    [y.ln(), (-y).ln_1p()]
}

/// `ln N(v; μ, τ⁻¹)` summed over the family members, the Normal hyperprior on
/// μ and the Gamma hyperprior on τ = e^u (with its log-Jacobian `u`).
pub(crate) fn family_log_prior(slot: &HyperSlot, prior: &FamilyPrior, z: &[f64], grad: &mut [f64]) -> f64 {
    let mu = z[slot.mean];
    let u = z[slot.log_precision];
    let tau = u.exp();
    let count = slot.values.len() as f64;
    let mut sum_sq = 0.0;
    let mut sum_dev = 0.0;
    for k in slot.values.clone() {
        let dev = z[k] - mu;
        sum_sq += dev * dev;
        sum_dev += dev;
        grad[k] -= tau * dev;
    }
    let mut lp = count * (0.5 * u - 0.5 * LN_2PI) - 0.5 * tau * sum_sq;
    grad[slot.mean] += tau * sum_dev;
    grad[slot.log_precision] += 0.5 * count - 0.5 * tau * sum_sq;

    let s0 = prior.mean_scale;
    let zm = (mu - prior.mean_loc) / s0;
    lp += -0.5 * zm * zm - s0.ln() - 0.5 * LN_2PI;
    grad[slot.mean] -= zm / s0;

    let (a, r) = (prior.precision_shape, prior.precision_rate);
    lp += a * r.ln() - ln_gamma(a) + (a - 1.0) * u - r * tau + u;
    grad[slot.log_precision] += a - r * tau;
    lp
}

#[inline]
fn bernoulli(x: f64, z: u8) -> (f64, f64) {
    if z == 1 {
        (log_sigmoid(x), sigmoid(-x))
    } else {
        (log_sigmoid(-x), -sigmoid(x))
    }
}

/// Gradient contributions of one block of rows.
struct ChunkOut {
    ll: f64,
    rows: Range<usize>,
    theta: Vec<f64>,
    gamma_model: Vec<f64>,
    b: Vec<f64>,
    log_gamma: Vec<f64>,
    logit_lambda: Vec<f64>,
}

/// Hierarchical IRT model over binary responses and/or confidences.
pub(crate) struct IrtObjective<'a> {
    pub layout: Layout,
    responses: Option<&'a [u8]>,
    confidences: Option<Vec<[f64; 2]>>,
    priors: HyperPriors,
}

impl<'a> IrtObjective<'a> {
    pub fn new(
        kind: ModelKind,
        n: usize,
        m: usize,
        responses: Option<&'a [u8]>,
        confidences: Option<&[f64]>,
        priors: HyperPriors,
    ) -> Self {
        IrtObjective {
            layout: Layout::new(kind, n, m),
            responses,
            confidences: confidences.map(|c| c.iter().map(|&v| confidence_logs(v)).collect()),
            priors,
        }
    }

    fn chunk(&self, z: &[f64], rows: Range<usize>, gamma: &[f64], lambda: &[(f64, f64)], gm: &[f64]) -> ChunkOut {
        let lay = &self.layout;
        let (m, d) = (lay.m, lay.d);
        let nr = rows.len();
        let mut out = ChunkOut {
            ll: 0.0,
            rows: rows.clone(),
            theta: vec![0.0; nr * d],
            gamma_model: vec![0.0; if lay.log_gamma_model.is_some() { nr } else { 0 }],
            b: vec![0.0; m * d],
            log_gamma: vec![0.0; gamma.len()],
            logit_lambda: vec![0.0; lambda.len()],
        };
        let b = &z[lay.b.clone()];
        let theta = &z[lay.theta.clone()];
        let mut ll = 0.0;
        for i in rows.clone() {
            let li = i - rows.start;
            let resp = self.responses.map(|r| &r[i * m..(i + 1) * m]);
            let conf = self.confidences.as_ref().map(|c| &c[i * m..(i + 1) * m]);
            match lay.kind {
                ModelKind::OnePL => {
                    let resp = resp.expect("responses");
                    let t = theta[i];
                    let mut gt = 0.0;
                    for j in 0..m {
                        let (l, r) = bernoulli(t - b[j], resp[j]);
                        ll += l;
                        gt += r;
                        out.b[j] -= r;
                    }
                    out.theta[li] += gt;
                }
                ModelKind::TwoPL => {
                    let resp = resp.expect("responses");
                    let t = theta[i];
                    let mut gt = 0.0;
                    for j in 0..m {
                        let x = gamma[j] * (t - b[j]);
                        let (l, r) = bernoulli(x, resp[j]);
                        ll += l;
                        gt += r * gamma[j];
                        out.b[j] -= r * gamma[j];
                        out.log_gamma[j] += r * x;
                    }
                    out.theta[li] += gt;
                }
                ModelKind::ThreePL => {
                    let resp = resp.expect("responses");
                    let t = theta[i];
                    let mut gt = 0.0;
                    for j in 0..m {
                        let x = gamma[j] * (t - b[j]);
                        let (lam, lam_c) = lambda[j];
                        let (dx, dv) = if resp[j] == 1 {
                            let sx = sigmoid(x);
                            let sxc = sigmoid(-x);
                            let p = lam + lam_c * sx;
                            ll += p.ln();
                            (lam_c * sx * sxc / p, sxc * lam * lam_c / p)
                        } else {
                            // 1 - p = (1 - λ)(1 - σ(x))
                            ll += log_sigmoid(-x) + lam_c.ln();
                            (-sigmoid(x), -lam)
                        };
                        gt += dx * gamma[j];
                        out.b[j] -= dx * gamma[j];
                        out.log_gamma[j] += dx * x;
                        out.logit_lambda[j] += dv;
                    }
                    out.theta[li] += gt;
                }
                ModelKind::MultiDim2PL(_) => {
                    let resp = resp.expect("responses");
                    let t = &theta[i * d..(i + 1) * d];
                    for j in 0..m {
                        let bj = &b[j * d..(j + 1) * d];
                        let gj = &gamma[j * d..(j + 1) * d];
                        let x: f64 = (0..d).map(|k| gj[k] * (t[k] - bj[k])).sum();
                        let (l, r) = bernoulli(x, resp[j]);
                        ll += l;
                        for k in 0..d {
                            let diff = t[k] - bj[k];
                            out.theta[li * d + k] += r * gj[k];
                            out.b[j * d + k] -= r * gj[k];
                            out.log_gamma[j * d + k] += r * gj[k] * diff;
                        }
                    }
                }
                ModelKind::Beta => {
                    let conf = conf.expect("confidences");
                    let t = theta[i];
                    let mut gt = 0.0;
                    for j in 0..m {
                        let [ly, l1y] = conf[j];
                        let (l, da) = beta_irt_cell(t - b[j], ly, l1y);
                        ll += l;
                        gt += da;
                        out.b[j] -= da;
                    }
                    out.theta[li] += gt;
                }
                ModelKind::JointConfidence => {
                    let resp = resp.expect("responses");
                    let conf = conf.expect("confidences");
                    let t = theta[i];
                    let g = gm[i];
                    let mut gt = 0.0;
                    let mut gg = 0.0;
                    for j in 0..m {
                        let diff = t - b[j];
                        let (lb, r) = bernoulli(diff, resp[j]);
                        let [ly, l1y] = conf[j];
                        let a = g * diff;
                        let (lc, da) = beta_irt_cell(a, ly, l1y);
                        ll += lb + lc;
                        let dd = r + da * g;
                        gt += dd;
                        out.b[j] -= dd;
                        gg += da * a;
                    }
                    out.theta[li] += gt;
                    out.gamma_model[li] += gg;
                }
            }
        }
        out.ll = ll;
        out
    }
}

impl Objective for IrtObjective<'_> {
    fn dim(&self) -> usize {
        self.layout.total
    }

    fn log_joint(&self, z: &[f64], grad: &mut [f64]) -> f64 {
        let lay = &self.layout;
        let gamma: Vec<f64> = lay
            .log_gamma
            .as_ref()
            .map(|r| z[r.clone()].iter().map(|v| v.exp()).collect())
            .unwrap_or_default();
        let lambda: Vec<(f64, f64)> = lay
            .logit_lambda
            .as_ref()
            .map(|r| z[r.clone()].iter().map(|&v| (sigmoid(v), sigmoid(-v))).collect())
            .unwrap_or_default();
        let gm: Vec<f64> = lay
            .log_gamma_model
            .as_ref()
            .map(|r| z[r.clone()].iter().map(|v| v.exp()).collect())
            .unwrap_or_default();

        let n_chunks = lay.n.div_ceil(ROW_CHUNK);
        let parts: Vec<ChunkOut> = (0..n_chunks)
            .into_par_iter()
            .map(|c| {
                let rows = c * ROW_CHUNK..((c + 1) * ROW_CHUNK).min(lay.n);
                self.chunk(z, rows, &gamma, &lambda, &gm)
            })
            .collect();

        let mut lp = 0.0;
        let d = lay.d;
        for part in &parts {
            lp += part.ll;
            let t0 = lay.theta.start + part.rows.start * d;
            for (k, g) in part.theta.iter().enumerate() {
                grad[t0 + k] += g;
            }
            if let Some(r) = &lay.log_gamma_model {
                for (k, g) in part.gamma_model.iter().enumerate() {
                    grad[r.start + part.rows.start + k] += g;
                }
            }
            for (k, g) in part.b.iter().enumerate() {
                grad[lay.b.start + k] += g;
            }
            if let Some(r) = &lay.log_gamma {
                for (k, g) in part.log_gamma.iter().enumerate() {
                    grad[r.start + k] += g;
                }
            }
            if let Some(r) = &lay.logit_lambda {
                for (k, g) in part.logit_lambda.iter().enumerate() {
                    grad[r.start + k] += g;
                }
            }
        }

        for slot in &lay.hyper {
            let prior = self.priors.for_family(slot.family);
            lp += family_log_prior(slot, prior, z, grad);
        }

        // λ = σ(v) under a Uniform[0, 1] prior: density 1 times the Jacobian σ(v)σ(-v).
        if let Some(r) = &lay.logit_lambda {
            for k in r.clone() {
                let v = z[k];
                lp += log_sigmoid(v) + log_sigmoid(-v);
                grad[k] += 1.0 - 2.0 * sigmoid(v);
            }
        }
        lp
    }
}

/// Beta-likelihood objective over new-item difficulties with abilities and
/// per-model slopes held fixed.
pub(crate) struct FrozenDifficultyObjective {
    pub theta: Vec<f64>,
    pub gamma_model: Vec<f64>,
    pub confidences: Vec<[f64; 2]>,
    pub n: usize,
    pub m: usize,
    pub prior_mean: f64,
    pub prior_precision: f64,
}

impl Objective for FrozenDifficultyObjective {
    fn dim(&self) -> usize {
        self.m
    }

    fn log_joint(&self, z: &[f64], grad: &mut [f64]) -> f64 {
        let tau = self.prior_precision;
        let mut lp = 0.0;
        for (j, &b) in z.iter().enumerate() {
            let dev = b - self.prior_mean;
            lp += 0.5 * tau.ln() - 0.5 * LN_2PI - 0.5 * tau * dev * dev;
            grad[j] -= tau * dev;
        }
        for i in 0..self.n {
            let (t, g) = (self.theta[i], self.gamma_model[i]);
            for j in 0..self.m {
                let [ly, l1y] = self.confidences[i * self.m + j];
                let (l, da) = beta_irt_cell(g * (t - z[j]), ly, l1y);
                lp += l;
                grad[j] -= da * g;
            }
        }
        lp
    }
}
