//! Mean-field variational inference for every supported model kind.
//!
//! Latents live in unconstrained space: θ and b as-is, γ in log space, λ in
//! logit space, and each hierarchical precision τ as `ln τ`. The variational
//! family is an independent Normal per latent, scale parameterized through
//! softplus. Gradients are reparameterized and hand-derived; see
//! [`gradient_check`] for the finite-difference gate.

mod objective;
mod svi;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::irt::ModelKind;
use crate::matrix::{ConfidenceMatrix, ResponseMatrix};
use crate::posterior::{FitMeta, FittedPosterior, HyperFamily, HyperPosterior, NormalBlock, ScalarNormal};

use objective::{confidence_logs, FrozenDifficultyObjective, IrtObjective, Layout};
use svi::{softplus_inv, VariationalState};

/// Confidences are clamped into `[CONFIDENCE_CLAMP, 1 - CONFIDENCE_CLAMP]`
/// before entering a Beta likelihood.
pub const CONFIDENCE_CLAMP: f64 = 1e-6;

const INIT_SCALE_POSITION: f64 = 1.0;
const INIT_SCALE_TRANSFORMED: f64 = 0.5;
const INIT_SCALE_HYPER: f64 = 0.5;

/// Early stop when the mean ELBO over the last `window` steps differs from
/// the preceding window's mean by less than `rel_tol` (relative).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Convergence {
    pub window: usize,
    pub rel_tol: f64,
}

impl Default for Convergence {
    fn default() -> Self {
        Convergence {
            window: 50,
            rel_tol: 1e-5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitConfig {
    pub seed: u64,
    pub epochs: usize,
    pub learning_rate: f64,
    pub mc_samples: usize,
    pub convergence: Option<Convergence>,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig {
            seed: 0,
            epochs: 1500,
            learning_rate: 0.1,
            mc_samples: 1,
            convergence: None,
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::InvalidArgument("epochs must be positive".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "learning_rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if self.mc_samples == 0 {
            return Err(Error::InvalidArgument("mc_samples must be positive".into()));
        }
        if let Some(c) = &self.convergence {
            if c.window == 0 || !(c.rel_tol > 0.0) {
                return Err(Error::InvalidArgument(
                    "convergence window and tolerance must be positive".into(),
                ));
            }
        }
        Ok(())
    }
}

/// Hyperpriors of one parameter family: `μ ~ N(mean_loc, mean_scale²)`,
/// `τ ~ Gamma(precision_shape, precision_rate)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FamilyPrior {
    pub mean_loc: f64,
    pub mean_scale: f64,
    pub precision_shape: f64,
    pub precision_rate: f64,
}

impl Default for FamilyPrior {
    fn default() -> Self {
        FamilyPrior {
            mean_loc: 0.0,
            mean_scale: 1.0,
            precision_shape: 1.0,
            precision_rate: 1.0,
        }
    }
}

impl FamilyPrior {
    fn validate(&self, name: &str) -> Result<()> {
        let ok = self.mean_loc.is_finite()
            && self.mean_scale > 0.0
            && self.precision_shape > 0.0
            && self.precision_rate > 0.0
            && self.mean_scale.is_finite()
            && self.precision_shape.is_finite()
            && self.precision_rate.is_finite();
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!(
                "invalid hyperprior for {name}: {self:?}"
            )))
        }
    }
}

/// Hyperpriors for θ, b and log γ. The per-model log γ of the joint model
/// shares the log γ hyperprior; λ is always Uniform[0, 1].
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct HyperPriors {
    pub theta: FamilyPrior,
    pub b: FamilyPrior,
    pub log_gamma: FamilyPrior,
}

impl HyperPriors {
    pub fn validate(&self) -> Result<()> {
        self.theta.validate("theta")?;
        self.b.validate("b")?;
        self.log_gamma.validate("log_gamma")
    }

    pub(crate) fn for_family(&self, family: HyperFamily) -> &FamilyPrior {
        match family {
            HyperFamily::Ability => &self.theta,
            HyperFamily::Difficulty => &self.b,
            HyperFamily::LogDiscriminability | HyperFamily::LogModelDiscriminability => &self.log_gamma,
        }
    }
}

/// Data a posterior is scored against.
#[derive(Debug, Clone, Copy, Default)]
pub struct Observations<'a> {
    pub responses: Option<&'a ResponseMatrix>,
    pub confidences: Option<&'a ConfidenceMatrix>,
}

#[derive(Debug, Clone)]
pub struct FitOutput {
    pub posterior: FittedPosterior,
    /// Per-step single-sample ELBO estimates.
    pub elbo_trace: Vec<f64>,
}

/// Difficulty posteriors for items fitted against frozen model parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct DifficultyPosterior {
    pub item_ids: Vec<String>,
    pub difficulty: NormalBlock,
    pub elbo_trace: Vec<f64>,
}

fn check_kind_data(kind: ModelKind, obs: &Observations) -> Result<(usize, usize, Vec<String>, Vec<String>)> {
    if let ModelKind::MultiDim2PL(0) = kind {
        return Err(Error::InvalidArgument("MultiDim2PL needs d >= 1".into()));
    }
    let (n, m, models, items) = match (obs.responses, obs.confidences) {
        (Some(r), _) => (r.n_models(), r.n_items(), r.model_ids().to_vec(), r.item_ids().to_vec()),
        (None, Some(c)) => (c.n_models(), c.n_items(), c.model_ids().to_vec(), c.item_ids().to_vec()),
        (None, None) => return Err(Error::InvalidArgument("no observations supplied".into())),
    };
    if kind.uses_responses() && obs.responses.is_none() {
        return Err(Error::InvalidArgument(format!("{kind} requires a response matrix")));
    }
    if kind.uses_confidences() {
        let c = obs
            .confidences
            .ok_or_else(|| Error::InvalidArgument(format!("{kind} requires a confidence matrix")))?;
        if let Some(r) = obs.responses {
            c.check_aligned(r)?;
        }
    }
    Ok((n, m, models, items))
}

fn build_objective<'a>(kind: ModelKind, obs: &Observations<'a>, priors: HyperPriors) -> Result<IrtObjective<'a>> {
    let (n, m, _, _) = check_kind_data(kind, obs)?;
    let responses = if kind.uses_responses() {
        obs.responses.map(|r| r.cells())
    } else {
        None
    };
    let confidences = if kind.uses_confidences() {
        obs.confidences.map(|c| c.cells())
    } else {
        None
    };
    Ok(IrtObjective::new(kind, n, m, responses, confidences, priors))
}

fn initial_state(layout: &Layout) -> VariationalState {
    let mut raw = vec![softplus_inv(INIT_SCALE_POSITION); layout.total];
    let transformed = [&layout.log_gamma, &layout.logit_lambda, &layout.log_gamma_model];
    for r in transformed.into_iter().flatten() {
        raw[r.clone()].fill(softplus_inv(INIT_SCALE_TRANSFORMED));
    }
    for h in &layout.hyper {
        raw[h.mean] = softplus_inv(INIT_SCALE_HYPER);
        raw[h.log_precision] = softplus_inv(INIT_SCALE_HYPER);
    }
    VariationalState {
        loc: vec![0.0; layout.total],
        raw,
    }
}

fn block(state: &VariationalState, r: &std::ops::Range<usize>) -> NormalBlock {
    NormalBlock::new(
        state.loc[r.clone()].to_vec(),
        r.clone().map(|k| state.scale(k)).collect(),
    )
}

fn state_to_posterior(
    layout: &Layout,
    state: &VariationalState,
    model_ids: Vec<String>,
    item_ids: Vec<String>,
    fit: FitMeta,
) -> FittedPosterior {
    let mut hyper = BTreeMap::new();
    for h in &layout.hyper {
        hyper.insert(
            h.family.key().to_string(),
            HyperPosterior {
                mean: ScalarNormal {
                    loc: state.loc[h.mean],
                    scale: state.scale(h.mean),
                },
                log_precision: ScalarNormal {
                    loc: state.loc[h.log_precision],
                    scale: state.scale(h.log_precision),
                },
            },
        );
    }
    FittedPosterior {
        kind: layout.kind,
        model_ids,
        item_ids,
        ability: block(state, &layout.theta),
        difficulty: block(state, &layout.b),
        discriminability: layout.log_gamma.as_ref().map(|r| block(state, r)),
        guessing: layout.logit_lambda.as_ref().map(|r| block(state, r)),
        model_discriminability: layout.log_gamma_model.as_ref().map(|r| block(state, r)),
        hyper,
        fit,
    }
}

fn posterior_to_state(layout: &Layout, post: &FittedPosterior) -> Result<VariationalState> {
    post.validate()?;
    if post.kind != layout.kind || post.n_models() != layout.n || post.n_items() != layout.m {
        return Err(Error::DimensionMismatch(format!(
            "posterior is {} over {} × {}, data is {} × {}",
            post.kind,
            post.n_models(),
            post.n_items(),
            layout.n,
            layout.m
        )));
    }
    let mut state = initial_state(layout);
    let mut put = |r: &std::ops::Range<usize>, b: &NormalBlock| {
        for (off, k) in r.clone().enumerate() {
            state.loc[k] = b.loc[off];
            state.raw[k] = softplus_inv(b.scale[off]);
        }
    };
    put(&layout.theta, &post.ability);
    put(&layout.b, &post.difficulty);
    let pairs = [
        (&layout.log_gamma, &post.discriminability),
        (&layout.logit_lambda, &post.guessing),
        (&layout.log_gamma_model, &post.model_discriminability),
    ];
    for (r, b) in pairs {
        if let (Some(r), Some(b)) = (r, b) {
            put(r, b);
        }
    }
    for h in &layout.hyper {
        // Absent hyper entries keep their initial values.
        if let Some(hp) = post.hyper.get(h.family.key()) {
            state.loc[h.mean] = hp.mean.loc;
            state.raw[h.mean] = softplus_inv(hp.mean.scale);
            state.loc[h.log_precision] = hp.log_precision.loc;
            state.raw[h.log_precision] = softplus_inv(hp.log_precision.scale);
        }
    }
    Ok(state)
}

fn fit_observations(kind: ModelKind, obs: Observations, config: &FitConfig, priors: &HyperPriors) -> Result<FitOutput> {
    config.validate()?;
    priors.validate()?;
    let (_, _, model_ids, item_ids) = check_kind_data(kind, &obs)?;
    let mut flagged_models = Vec::new();
    let mut flagged_items = Vec::new();
    if let Some(r) = obs.responses.filter(|_| kind.uses_responses()) {
        let total = r.total_correct();
        if total == 0 || total == r.cells().len() {
            return Err(Error::DegenerateMatrix(format!(
                "every response is {}; abilities and difficulties are not identifiable",
                if total == 0 { 0 } else { 1 }
            )));
        }
        flagged_models = r
            .degenerate_models()
            .into_iter()
            .map(|i| model_ids[i].clone())
            .collect();
        flagged_items = r.degenerate_items().into_iter().map(|j| item_ids[j].clone()).collect();
    }
    let obj = build_objective(kind, &obs, *priors)?;
    let init = initial_state(&obj.layout);
    let out = svi::optimize(&obj, init, config)?;
    let fit = FitMeta {
        seed: config.seed,
        epochs: config.epochs,
        epochs_run: out.trace.len(),
        learning_rate: config.learning_rate,
        mc_samples: config.mc_samples,
        final_elbo: out.trace.last().copied(),
        flagged_models,
        flagged_items,
    };
    let posterior = state_to_posterior(&obj.layout, &out.state, model_ids, item_ids, fit);
    Ok(FitOutput {
        posterior,
        elbo_trace: out.trace,
    })
}

/// Fits a discrete-response kind (1PL, 2PL, 3PL, MultiDim2PL) to a response
/// matrix.
///
/// Refuses matrices with no 0 or no 1 at all. Models or items that are
/// all-correct or all-wrong are fitted (the hierarchical prior bounds them)
/// and listed in the fit metadata.
pub fn fit(matrix: &ResponseMatrix, kind: ModelKind, config: &FitConfig, priors: &HyperPriors) -> Result<FitOutput> {
    if !kind.is_discrete() {
        return Err(Error::InvalidArgument(format!(
            "{kind} is not a discrete-response kind; use fit_joint or fit_beta"
        )));
    }
    let obs = Observations {
        responses: Some(matrix),
        confidences: None,
    };
    fit_observations(kind, obs, config, priors)
}

/// Joint fit of responses (1PL Bernoulli) and confidences (Beta with a per-model
/// slope on the logit).
pub fn fit_joint(
    matrix: &ResponseMatrix,
    conf: &ConfidenceMatrix,
    config: &FitConfig,
    priors: &HyperPriors,
) -> Result<FitOutput> {
    let obs = Observations {
        responses: Some(matrix),
        confidences: Some(conf),
    };
    fit_observations(ModelKind::JointConfidence, obs, config, priors)
}

/// Fits the continuous Beta model to confidences alone.
pub fn fit_beta(conf: &ConfidenceMatrix, config: &FitConfig, priors: &HyperPriors) -> Result<FitOutput> {
    let obs = Observations {
        responses: None,
        confidences: Some(conf),
    };
    fit_observations(ModelKind::Beta, obs, config, priors)
}

/// The variational starting point a fit of `kind` would use.
pub fn initial_posterior(kind: ModelKind, model_ids: Vec<String>, item_ids: Vec<String>) -> FittedPosterior {
    let layout = Layout::new(kind, model_ids.len(), item_ids.len());
    let state = initial_state(&layout);
    state_to_posterior(&layout, &state, model_ids, item_ids, FitMeta::unfitted(0))
}

/// Monte-Carlo ELBO estimate with `mc_samples` reparameterized draws.
pub fn elbo_estimate(
    posterior: &FittedPosterior,
    obs: Observations,
    priors: &HyperPriors,
    mc_samples: usize,
    seed: u64,
) -> Result<f64> {
    use rand::SeedableRng;
    if mc_samples == 0 {
        return Err(Error::InvalidArgument("mc_samples must be positive".into()));
    }
    let obj = build_objective(posterior.kind, &obs, *priors)?;
    let state = posterior_to_state(&obj.layout, posterior)?;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let eps = svi::draw_noise(&mut rng, state.len() * mc_samples);
    let v = svi::elbo_value(&obj, &state, &eps);
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::NonFiniteElbo { step: 0 })
    }
}

/// Worst relative deviation between the analytic ELBO gradient and central
/// finite differences (step 1e-5) over every variational parameter.
pub fn gradient_check(posterior: &FittedPosterior, obs: Observations, priors: &HyperPriors, seed: u64) -> Result<f64> {
    let obj = build_objective(posterior.kind, &obs, *priors)?;
    let state = posterior_to_state(&obj.layout, posterior)?;
    Ok(svi::gradient_deviation(&obj, &state, seed, 1e-5))
}

/// Fits difficulties of new items against confidences only, holding each
/// model's ability and (for the joint model) slope at the frozen posterior
/// means. The prior on each new b is the frozen difficulty hyperposterior.
pub fn fit_difficulty_from_confidences(
    frozen: &FittedPosterior,
    conf_new: &ConfidenceMatrix,
    config: &FitConfig,
) -> Result<DifficultyPosterior> {
    config.validate()?;
    if !matches!(frozen.kind, ModelKind::JointConfidence | ModelKind::Beta) {
        return Err(Error::InvalidArgument(format!(
            "frozen posterior must be JointConfidence or Beta, got {}",
            frozen.kind
        )));
    }
    let index: BTreeMap<&str, usize> = frozen
        .model_ids
        .iter()
        .enumerate()
        .map(|(i, id)| (id.as_str(), i))
        .collect();
    let gm = frozen.model_discriminability.as_ref().map(NormalBlock::lognormal_means);
    let mut theta = Vec::with_capacity(conf_new.n_models());
    let mut gamma_model = Vec::with_capacity(conf_new.n_models());
    for id in conf_new.model_ids() {
        let &i = index.get(id.as_str()).ok_or_else(|| Error::UnknownId {
            axis: "model",
            id: id.clone(),
        })?;
        theta.push(frozen.ability.loc[i]);
        gamma_model.push(gm.as_ref().map_or(1.0, |g| g[i]));
    }
    let (prior_mean, prior_precision) = frozen
        .hyper
        .get(HyperFamily::Difficulty.key())
        .map_or((0.0, 1.0), |h| (h.mean.loc, h.precision_mean()));
    let m = conf_new.n_items();
    let obj = FrozenDifficultyObjective {
        theta,
        gamma_model,
        confidences: conf_new.cells().iter().map(|&c| confidence_logs(c)).collect(),
        n: conf_new.n_models(),
        m,
        prior_mean,
        prior_precision,
    };
    let init = VariationalState {
        loc: vec![0.0; m],
        raw: vec![softplus_inv(INIT_SCALE_POSITION); m],
    };
    let out = svi::optimize(&obj, init, config)?;
    Ok(DifficultyPosterior {
        item_ids: conf_new.item_ids().to_vec(),
        difficulty: NormalBlock::new(out.state.loc.clone(), out.state.scales()),
        elbo_trace: out.trace,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::irt::{beta_log_density, beta_shape, log_sigmoid};
    use objective::Objective;

    fn ids(prefix: &str, k: usize) -> Vec<String> {
        (0..k).map(|i| format!("{prefix}{i}")).collect()
    }

    fn small_responses() -> ResponseMatrix {
        let cells = vec![1, 0, 1, 1, 0, 0, 1, 0, 1, 1, 1, 0];
        ResponseMatrix::new(ids("m", 3), ids("i", 4), cells).unwrap()
    }

    fn small_confidences() -> ConfidenceMatrix {
        let cells = vec![0.9, 0.2, 0.7, 1.0, 0.1, 0.3, 0.6, 0.0, 0.8, 0.95, 0.55, 0.4];
        ConfidenceMatrix::new(ids("m", 3), ids("i", 4), cells).unwrap()
    }

    /// Direct log joint of the 1PL model at a point, summed term by term.
    #[test]
    fn one_pl_log_joint_matches_direct_sum() {
        let r = small_responses();
        let obj = IrtObjective::new(ModelKind::OnePL, 3, 4, Some(r.cells()), None, HyperPriors::default());
        let lay = &obj.layout;
        let z: Vec<f64> = (0..lay.total).map(|k| 0.1 * k as f64 - 0.6).collect();
        let mut grad = vec![0.0; lay.total];
        let got = obj.log_joint(&z, &mut grad);

        let mut want = 0.0;
        for i in 0..3 {
            for j in 0..4 {
                let x = z[lay.theta.start + i] - z[lay.b.start + j];
                want += if r.get(i, j) == 1 {
                    log_sigmoid(x)
                } else {
                    log_sigmoid(-x)
                };
            }
        }
        let norm = |x: f64, mu: f64, tau: f64| {
            0.5 * tau.ln() - 0.5 * (2.0 * std::f64::consts::PI).ln() - 0.5 * tau * (x - mu).powi(2)
        };
        for h in &lay.hyper {
            let (mu, u) = (z[h.mean], z[h.log_precision]);
            for k in h.values.clone() {
                want += norm(z[k], mu, u.exp());
            }
            want += norm(mu, 0.0, 1.0);
            // Gamma(1, 1) density of τ = e^u plus the Jacobian u
            want += -u.exp() + u;
        }
        assert!((got - want).abs() < 1e-10, "{got} vs {want}");
    }

    #[test]
    fn joint_cell_matches_beta_density() {
        let r = ResponseMatrix::new(ids("m", 1), ids("i", 1), vec![1]).unwrap();
        let c = ConfidenceMatrix::new(ids("m", 1), ids("i", 1), vec![0.7]).unwrap();
        let obj = IrtObjective::new(
            ModelKind::JointConfidence,
            1,
            1,
            Some(r.cells()),
            Some(c.cells()),
            HyperPriors::default(),
        );
        let lay = obj.layout.clone();
        let mut z = vec![0.0; lay.total];
        z[lay.theta.start] = 0.8;
        z[lay.b.start] = -0.3;
        z[lay.log_gamma_model.as_ref().unwrap().start] = 0.4f64.ln();
        let mut g = vec![0.0; lay.total];
        let with_data = obj.log_joint(&z, &mut g);
        // same point with the data terms removed via a data-free prior sum
        let (m, n) = beta_shape(0.4 * 1.1, 0.0);
        let cell = log_sigmoid(1.1) + beta_log_density(0.7, m, n).unwrap();
        let mut prior_only = 0.0;
        let mut g2 = vec![0.0; lay.total];
        for h in &lay.hyper {
            prior_only += objective::family_log_prior(h, &FamilyPrior::default(), &z, &mut g2);
        }
        assert!((with_data - prior_only - cell).abs() < 1e-10);
    }

    #[test]
    fn gradient_check_every_kind() {
        let r = small_responses();
        let c = small_confidences();
        let kinds = [
            ModelKind::OnePL,
            ModelKind::TwoPL,
            ModelKind::ThreePL,
            ModelKind::MultiDim2PL(2),
            ModelKind::Beta,
            ModelKind::JointConfidence,
        ];
        for kind in kinds {
            let mut post = initial_posterior(kind, ids("m", 3), ids("i", 4));
            // move off the symmetric start
            for (k, v) in post.ability.loc.iter_mut().enumerate() {
                *v = 0.3 * k as f64 - 0.4;
            }
            for (k, v) in post.difficulty.loc.iter_mut().enumerate() {
                *v = 0.5 - 0.2 * k as f64;
            }
            let obs = Observations {
                responses: Some(&r),
                confidences: Some(&c),
            };
            for seed in 0..2 {
                let dev = gradient_check(&post, obs, &HyperPriors::default(), seed).unwrap();
                assert!(dev < 1e-4, "{kind}: {dev}");
            }
        }
    }

    #[test]
    fn degenerate_matrix_refused() {
        let all_ones = ResponseMatrix::new(ids("m", 2), ids("i", 2), vec![1; 4]).unwrap();
        let err = fit(
            &all_ones,
            ModelKind::OnePL,
            &FitConfig::default(),
            &HyperPriors::default(),
        )
        .unwrap_err();
        assert!(matches!(err, Error::DegenerateMatrix(_)));
    }

    #[test]
    fn fit_is_deterministic_and_flags_degenerate_rows() {
        let cells = vec![1, 1, 1, 1, 0, 1, 0, 0, 0, 1, 1, 0];
        let r = ResponseMatrix::new(ids("m", 3), ids("i", 4), cells).unwrap();
        let config = FitConfig {
            seed: 11,
            epochs: 200,
            ..FitConfig::default()
        };
        let a = fit(&r, ModelKind::TwoPL, &config, &HyperPriors::default()).unwrap();
        let b = fit(&r, ModelKind::TwoPL, &config, &HyperPriors::default()).unwrap();
        assert_eq!(a.posterior, b.posterior);
        assert_eq!(a.elbo_trace, b.elbo_trace);
        assert_eq!(a.posterior.fit.flagged_models, vec!["m0".to_string()]);
        assert!(a.posterior.ability.loc[0] > a.posterior.ability.loc[2]);
    }

    #[test]
    fn frozen_fit_rejects_unknown_model() {
        let post = initial_posterior(ModelKind::JointConfidence, ids("m", 2), ids("i", 1));
        let conf = ConfidenceMatrix::new(vec!["m0".into(), "zz".into()], ids("n", 1), vec![0.5, 0.5]).unwrap();
        let err = fit_difficulty_from_confidences(&post, &conf, &FitConfig::default()).unwrap_err();
        assert!(matches!(err, Error::UnknownId { .. }));
    }
}
