use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context, Result};
use clap::{ArgAction, Args};
use serde::{Deserialize, Serialize};

use irt_core::analysis::{
    calibrate_confidences, classwise_median, ece, error_rate_by_overconfidence, overconfidence, reliability_report,
    select_discriminable_subset, subset_ranking_fidelity, ErrorFlags, ItemParameter, OverconfidenceBin,
    DEFAULT_BIN_WIDTH, DEFAULT_ECE_BINS,
};
use irt_core::ensemble::ensemble_report;
use irt_core::io::{self, MatrixFormat};
use irt_core::irt::ModelKind;
use irt_core::matrix::{ConfidenceMatrix, ResponseMatrix};
use irt_core::posterior::{load_posterior, load_truth, save_json, save_posterior, save_truth, TruthFile};
use irt_core::synth::{
    self, generate_predictions, recovery_report, AbilityDistribution, GeneratorSpec, Miscalibration,
};
use irt_core::vi::{self, Convergence, FitConfig, HyperPriors};

use crate::settings::{Common, Outputs, Settings};

fn load_responses(path: &Path) -> Result<ResponseMatrix> {
    io::load_response_matrix(path, MatrixFormat::from_path(path))
        .with_context(|| format!("reading responses {}", path.display()))
}

fn load_confidences(path: &Path) -> Result<ConfidenceMatrix> {
    io::load_confidence_matrix(path, MatrixFormat::from_path(path))
        .with_context(|| format!("reading confidences {}", path.display()))
}

fn load_fitted(path: &Path) -> Result<irt_core::posterior::FittedPosterior> {
    load_posterior(path).with_context(|| format!("reading posterior {}", path.display()))
}

fn required<'a, T>(value: &'a Option<T>, flag: &str) -> Result<&'a T> {
    value.as_ref().with_context(|| format!("--{flag} is required"))
}

fn parse_kind(s: &str) -> Result<ModelKind> {
    Ok(s.parse::<ModelKind>()?)
}

macro_rules! settings {
    ($ty:ty, $name:literal) => {
        impl Settings for $ty {
            const COMMAND: &'static str = $name;

            fn common(&self) -> &Common {
                &self.common
            }

            fn common_mut(&mut self) -> &mut Common {
                &mut self.common
            }

            fn fill_own_defaults(&mut self) {
                self.defaults();
            }
        }
    };
}

// simulate ------------------------------------------------------------------

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(default)]
pub struct SimulateArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub common: Common,
    /// Number of models [default: 100]
    #[arg(long)]
    pub n_models: Option<usize>,
    /// Number of items [default: 2000]
    #[arg(long)]
    pub n_items: Option<usize>,
    /// Generating model: 1pl, 2pl, 3pl, md2pl:<d>, beta, joint [default: 2pl]
    #[arg(long)]
    pub kind: Option<String>,
    /// Draw abilities from a Student t with this many degrees of freedom
    /// instead of N(0, 1)
    #[arg(long)]
    pub ability_dof: Option<f64>,
    /// Confidence distortion exponent t in c^t (t < 1 inflates)
    #[arg(long)]
    pub miscalibration: Option<f64>,
    /// Fraction of items whose responses are inverted [default: 0]
    #[arg(long)]
    pub label_noise: Option<f64>,
    /// Severity levels (1 to 5) for stratified item parameters
    #[arg(long)]
    pub severity_levels: Option<u8>,
    /// Number of classes in item metadata and predictions [default: 10]
    #[arg(long)]
    pub n_classes: Option<usize>,
}

impl SimulateArgs {
    fn defaults(&mut self) {
        self.n_models.get_or_insert(100);
        self.n_items.get_or_insert(2000);
        self.kind.get_or_insert_with(|| "2pl".into());
        self.label_noise.get_or_insert(0.0);
        self.n_classes.get_or_insert(10);
    }

    fn spec(&self) -> Result<GeneratorSpec> {
        let mut spec = GeneratorSpec::new(
            self.n_models.unwrap_or(100),
            self.n_items.unwrap_or(2000),
            parse_kind(self.kind.as_deref().unwrap_or("2pl"))?,
        )?;
        if let Some(dof) = self.ability_dof {
            spec.ability = AbilityDistribution::StudentT { dof };
        }
        spec.miscalibration = self.miscalibration.map(Miscalibration::Uniform);
        spec.label_noise = self.label_noise.unwrap_or(0.0);
        spec.severity_levels = self.severity_levels;
        spec.n_classes = self.n_classes.unwrap_or(10);
        spec.validate()?;
        Ok(spec)
    }
}

settings!(SimulateArgs, "simulate");

pub fn simulate(args: &SimulateArgs) -> Result<()> {
    let spec = args.spec()?;
    let seed = args.common.seed();
    let data = synth::simulate(&spec, seed)?;
    let out = Outputs::create(args.common.out()?)?;
    out.run_echo(args)?;
    let r = &data.responses;
    let (models, items) = (r.model_ids().to_vec(), r.item_ids().to_vec());
    out.write(
        "responses.csv",
        format_args!("{} × {} responses", r.n_models(), r.n_items()),
        |p| io::save_response_matrix(r, p, MatrixFormat::Csv),
    )?;
    if let Some(c) = &data.confidences {
        out.write("confidences.csv", "confidences", |p| {
            io::save_confidence_matrix(c, p, MatrixFormat::Csv)
        })?;
    }
    let truth = TruthFile {
        params: data.params.clone(),
        model_ids: models,
        item_ids: items.clone(),
        seed,
    };
    out.write("truth.json", format_args!("true {} parameters", spec.kind), |p| {
        save_truth(&truth, p)
    })?;
    out.write("item_meta.csv", "class and severity per item", |p| {
        io::save_item_meta(&items, &spec.item_meta(), p)
    })?;
    let flagged = data.flags.annotation_error.iter().filter(|f| **f).count();
    out.write("flags.csv", format_args!("{flagged} inverted items"), |p| {
        io::save_error_flags(&items, &data.flags, p)
    })?;
    let pred = generate_predictions(r, spec.n_classes, seed)?;
    out.write("predictions.csv", format_args!("{} classes", spec.n_classes), |p| {
        io::save_prediction_matrix(&pred, p, MatrixFormat::Csv)
    })
}

// fit -----------------------------------------------------------------------

/// Optimizer flags shared by `fit` and `calibrate`.
#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(default)]
pub struct OptimizerArgs {
    /// Optimizer steps [default: 1500]
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Adam step size [default: 0.1]
    #[arg(long)]
    pub learning_rate: Option<f64>,
    /// Monte-Carlo draws per step [default: 1]
    #[arg(long)]
    pub mc_samples: Option<usize>,
    /// Enable early stopping with this moving-average window
    #[arg(long)]
    pub early_stop_window: Option<usize>,
    /// Relative ELBO change that triggers early stopping [default with a window: 1e-5]
    #[arg(long)]
    pub early_stop_tol: Option<f64>,
    /// Write the per-step ELBO trace as `elbo.csv` [default: true]
    #[arg(long, action = ArgAction::Set)]
    pub elbo_trace: Option<bool>,
}

impl OptimizerArgs {
    fn defaults(&mut self) {
        let d = FitConfig::default();
        self.epochs.get_or_insert(d.epochs);
        self.learning_rate.get_or_insert(d.learning_rate);
        self.mc_samples.get_or_insert(d.mc_samples);
        if self.early_stop_window.is_some() || self.early_stop_tol.is_some() {
            let c = Convergence::default();
            self.early_stop_window.get_or_insert(c.window);
            self.early_stop_tol.get_or_insert(c.rel_tol);
        }
        self.elbo_trace.get_or_insert(true);
    }

    fn config(&self, seed: u64) -> Result<FitConfig> {
        let d = FitConfig::default();
        let convergence = match (self.early_stop_window, self.early_stop_tol) {
            (None, None) => None,
            (w, t) => Some(Convergence {
                window: w.unwrap_or(Convergence::default().window),
                rel_tol: t.unwrap_or(Convergence::default().rel_tol),
            }),
        };
        let config = FitConfig {
            seed,
            epochs: self.epochs.unwrap_or(d.epochs),
            learning_rate: self.learning_rate.unwrap_or(d.learning_rate),
            mc_samples: self.mc_samples.unwrap_or(d.mc_samples),
            convergence,
        };
        config.validate()?;
        Ok(config)
    }

    fn write_trace(&self, out: &Outputs, trace: &[f64]) -> Result<()> {
        if self.elbo_trace.unwrap_or(true) {
            out.write("elbo.csv", format_args!("{} steps", trace.len()), |p| {
                io::save_elbo_trace(trace, p)
            })?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(default)]
pub struct FitArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub common: Common,
    /// Response matrix (CSV or TSV)
    #[arg(long)]
    pub responses: Option<PathBuf>,
    /// Confidence matrix, for the beta and joint kinds
    #[arg(long)]
    pub confidences: Option<PathBuf>,
    /// Model kind: 1pl, 2pl, 3pl, md2pl:<d>, beta, joint [default: 2pl]
    #[arg(long)]
    pub kind: Option<String>,
    #[command(flatten)]
    #[serde(flatten)]
    pub optimizer: OptimizerArgs,
    /// Hyperpriors; settable through the config file only
    #[arg(skip)]
    pub priors: Option<HyperPriors>,
}

impl FitArgs {
    fn defaults(&mut self) {
        self.kind.get_or_insert_with(|| "2pl".into());
        self.optimizer.defaults();
        self.priors.get_or_insert_with(HyperPriors::default);
    }
}

settings!(FitArgs, "fit");

pub fn fit(args: &FitArgs) -> Result<()> {
    let kind = parse_kind(required(&args.kind, "kind")?)?;
    let config = args.optimizer.config(args.common.seed())?;
    let priors = args.priors.unwrap_or_default();
    priors.validate()?;
    let output = match kind {
        ModelKind::Beta => {
            let c = load_confidences(required(&args.confidences, "confidences")?)?;
            vi::fit_beta(&c, &config, &priors)?
        }
        ModelKind::JointConfidence => {
            let r = load_responses(required(&args.responses, "responses")?)?;
            let c = load_confidences(required(&args.confidences, "confidences")?)?;
            vi::fit_joint(&r, &c, &config, &priors)?
        }
        _ => {
            let r = load_responses(required(&args.responses, "responses")?)?;
            vi::fit(&r, kind, &config, &priors)?
        }
    };
    let out = Outputs::create(args.common.out()?)?;
    out.run_echo(args)?;
    let post = &output.posterior;
    let elbo = post.fit.final_elbo.map_or("n/a".to_string(), |e| format!("{e:.3}"));
    out.write(
        "posterior.json",
        format_args!(
            "{kind} posterior over {} × {}, final ELBO {elbo}",
            post.n_models(),
            post.n_items()
        ),
        |p| save_posterior(post, p),
    )?;
    args.optimizer.write_trace(&out, &output.elbo_trace)
}

// recover -------------------------------------------------------------------

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(default)]
pub struct RecoverArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub common: Common,
    /// Ground-truth parameters written by `simulate`
    #[arg(long)]
    pub truth: Option<PathBuf>,
    /// Posterior written by `fit`
    #[arg(long)]
    pub posterior: Option<PathBuf>,
}

impl RecoverArgs {
    fn defaults(&mut self) {}
}

settings!(RecoverArgs, "recover");

pub fn recover(args: &RecoverArgs) -> Result<()> {
    let path = required(&args.truth, "truth")?;
    let truth = load_truth(path).with_context(|| format!("reading truth {}", path.display()))?;
    let post = load_fitted(required(&args.posterior, "posterior")?)?;
    ensure!(
        truth.model_ids == post.model_ids && truth.item_ids == post.item_ids,
        "truth and posterior cover different models or items"
    );
    let report = recovery_report(&truth.params, &post)?;
    let out = Outputs::create(args.common.out()?)?;
    out.run_echo(args)?;
    let summary = report
        .families
        .iter()
        .map(|f| format!("{} τ {:.3}", f.family, f.kendall_tau))
        .collect::<Vec<_>>()
        .join(", ");
    out.write("recovery.json", summary, |p| save_json(&report, p))
}

// analyze -------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Analysis {
    Reliability,
    Overconfidence,
    Complexity,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(default)]
pub struct AnalyzeArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub common: Common,
    /// Which analysis to run
    #[arg(long, value_enum)]
    pub what: Option<Analysis>,
    /// Posterior written by `fit`
    #[arg(long)]
    pub posterior: Option<PathBuf>,
    /// Response matrix (reliability)
    #[arg(long)]
    pub responses: Option<PathBuf>,
    /// Confidence matrix (overconfidence)
    #[arg(long)]
    pub confidences: Option<PathBuf>,
    /// Per-item error flags; adds error rates per overconfidence bin
    #[arg(long)]
    pub flags: Option<PathBuf>,
    /// Restrict the binned error rates to this model id
    #[arg(long)]
    pub model: Option<String>,
    /// Overconfidence bin width [default: 0.1]
    #[arg(long)]
    pub bin_width: Option<f64>,
    /// Per-item class and severity (complexity)
    #[arg(long)]
    pub item_meta: Option<PathBuf>,
    /// Item parameter summarized by complexity: guessing, difficulty,
    /// discriminability [default: guessing]
    #[arg(long)]
    pub parameter: Option<ItemParameter>,
}

impl AnalyzeArgs {
    fn defaults(&mut self) {
        match self.what {
            Some(Analysis::Overconfidence) => {
                self.bin_width.get_or_insert(DEFAULT_BIN_WIDTH);
            }
            Some(Analysis::Complexity) => {
                self.parameter.get_or_insert(ItemParameter::Guessing);
            }
            _ => {}
        }
    }
}

settings!(AnalyzeArgs, "analyze");

#[derive(Serialize)]
struct ModelBins {
    model_id: String,
    bins: Vec<OverconfidenceBin>,
}

pub fn analyze(args: &AnalyzeArgs) -> Result<()> {
    let what = *required(&args.what, "what")?;
    let post = load_fitted(required(&args.posterior, "posterior")?)?;
    let out = Outputs::create(args.common.out()?)?;
    match what {
        Analysis::Reliability => {
            let r = load_responses(required(&args.responses, "responses")?)?;
            let report = reliability_report(&r, &post)?;
            out.run_echo(args)?;
            out.write(
                "reliability.json",
                format_args!(
                    "ability/accuracy τ {:.3}, difficulty/score τ {:.3}, expected-correct RMSE {:.2}",
                    report.ability_accuracy_tau, report.difficulty_score_tau, report.expected_correct_rmse
                ),
                |p| save_json(&report, p),
            )
        }
        Analysis::Overconfidence => {
            let c = load_confidences(required(&args.confidences, "confidences")?)?;
            let o = overconfidence(&post, &c)?;
            out.run_echo(args)?;
            out.write("overconfidence.csv", "p* - c per cell", |p| {
                io::save_value_matrix(&o.model_ids, &o.item_ids, &o.cells, p, MatrixFormat::Csv)
            })?;
            let Some(flags_path) = &args.flags else {
                return Ok(());
            };
            let flags: ErrorFlags = io::load_error_flags(flags_path, &o.item_ids)
                .with_context(|| format!("reading flags {}", flags_path.display()))?;
            let width = args.bin_width.unwrap_or(DEFAULT_BIN_WIDTH);
            let rows: Vec<usize> = match &args.model {
                Some(id) => vec![o
                    .model_ids
                    .iter()
                    .position(|m| m == id)
                    .with_context(|| format!("unknown model `{id}`"))?],
                None => (0..o.model_ids.len()).collect(),
            };
            let per_model = rows
                .into_iter()
                .map(|i| {
                    Ok(ModelBins {
                        model_id: o.model_ids[i].clone(),
                        bins: error_rate_by_overconfidence(&o, i, &flags, width)?,
                    })
                })
                .collect::<irt_core::Result<Vec<_>>>()?;
            out.write(
                "overconfidence_bins.json",
                format_args!("error rates by bin for {} models", per_model.len()),
                |p| save_json(&per_model, p),
            )
        }
        Analysis::Complexity => {
            let meta_path = required(&args.item_meta, "item-meta")?;
            let meta = io::load_item_meta(meta_path, &post.item_ids)
                .with_context(|| format!("reading item metadata {}", meta_path.display()))?;
            let parameter = args.parameter.unwrap_or(ItemParameter::Guessing);
            let groups = classwise_median(&post, &meta, parameter)?;
            out.run_echo(args)?;
            out.write(
                "complexity.json",
                format_args!("median {parameter} for {} groups", groups.len()),
                |p| save_json(&groups, p),
            )
        }
    }
}

// select --------------------------------------------------------------------

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(default)]
pub struct SelectArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub common: Common,
    /// Posterior with item discriminabilities
    #[arg(long)]
    pub posterior: Option<PathBuf>,
    /// Subset size [default: 10]
    #[arg(long)]
    pub k: Option<usize>,
    /// Lower end of the admissible difficulty window
    #[arg(long, requires = "window_high")]
    pub window_low: Option<f64>,
    /// Upper end of the admissible difficulty window
    #[arg(long, requires = "window_low")]
    pub window_high: Option<f64>,
    /// Response matrix; adds the subset's ranking fidelity
    #[arg(long)]
    pub responses: Option<PathBuf>,
}

impl SelectArgs {
    fn defaults(&mut self) {
        self.k.get_or_insert(10);
    }
}

settings!(SelectArgs, "select");

#[derive(Serialize)]
struct Fidelity {
    k: usize,
    ranking_fidelity: f64,
}

pub fn select(args: &SelectArgs) -> Result<()> {
    let post = load_fitted(required(&args.posterior, "posterior")?)?;
    let k = args.k.unwrap_or(10);
    let window = match (args.window_low, args.window_high) {
        (Some(lo), Some(hi)) => Some((lo, hi)),
        (None, None) => None,
        _ => bail!("--window-low and --window-high go together"),
    };
    let subset = select_discriminable_subset(&post, k, window)?;
    let fidelity = match &args.responses {
        Some(path) => Some(subset_ranking_fidelity(&load_responses(path)?, &subset)?),
        None => None,
    };
    let out = Outputs::create(args.common.out()?)?;
    out.run_echo(args)?;
    out.write("selected.txt", format_args!("{} item ids", subset.len()), |p| {
        io::save_id_list(&subset, p)
    })?;
    if let Some(f) = fidelity {
        let report = Fidelity { k, ranking_fidelity: f };
        out.write("fidelity.json", format_args!("ranking fidelity τ {f:.3}"), |p| {
            save_json(&report, p)
        })?;
    }
    Ok(())
}

// ensemble ------------------------------------------------------------------

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(default)]
pub struct EnsembleArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub common: Common,
    /// Prediction matrix with a ground-truth row
    #[arg(long)]
    pub predictions: Option<PathBuf>,
    /// Posterior supplying abilities (and, by default, success probabilities)
    #[arg(long)]
    pub posterior: Option<PathBuf>,
    /// Per-cell success probabilities for probability-weighted voting
    #[arg(long)]
    pub probabilities: Option<PathBuf>,
}

impl EnsembleArgs {
    fn defaults(&mut self) {}
}

settings!(EnsembleArgs, "ensemble");

pub fn ensemble(args: &EnsembleArgs) -> Result<()> {
    let path = required(&args.predictions, "predictions")?;
    let pred = io::load_prediction_matrix(path, MatrixFormat::from_path(path))
        .with_context(|| format!("reading predictions {}", path.display()))?;
    let post = load_fitted(required(&args.posterior, "posterior")?)?;
    let probs = match &args.probabilities {
        Some(p) => {
            let m = load_confidences(p)?;
            ensure!(
                m.model_ids() == pred.model_ids() && m.item_ids() == pred.item_ids(),
                "probabilities and predictions cover different models or items"
            );
            Some(m)
        }
        None => None,
    };
    let report = ensemble_report(&pred, &post, probs.as_ref().map(|m| m.cells()))?;
    for notice in &report.notices {
        eprintln!("note: {notice}");
    }
    let out = Outputs::create(args.common.out()?)?;
    out.run_echo(args)?;
    let summary = report
        .accuracies
        .iter()
        .map(|(s, a)| format!("{s} {a:.4}"))
        .collect::<Vec<_>>()
        .join(", ");
    out.write("ensemble.json", summary, |p| save_json(&report, p))
}

// calibrate -----------------------------------------------------------------

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(default)]
pub struct CalibrateArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub common: Common,
    /// Joint (or beta) posterior whose abilities are frozen
    #[arg(long)]
    pub posterior: Option<PathBuf>,
    /// Confidences on the items to calibrate
    #[arg(long)]
    pub confidences: Option<PathBuf>,
    /// Responses on the same items; adds raw and calibrated ECE
    #[arg(long)]
    pub responses: Option<PathBuf>,
    /// Equal-width ECE bins [default: 15]
    #[arg(long)]
    pub bins: Option<usize>,
    #[command(flatten)]
    #[serde(flatten)]
    pub optimizer: OptimizerArgs,
}

impl CalibrateArgs {
    fn defaults(&mut self) {
        self.bins.get_or_insert(DEFAULT_ECE_BINS);
        self.optimizer.defaults();
    }
}

settings!(CalibrateArgs, "calibrate");

#[derive(Serialize)]
struct Difficulties<'a> {
    item_ids: &'a [String],
    loc: &'a [f64],
    scale: &'a [f64],
}

#[derive(Serialize)]
struct CalibrationReport {
    n_bins: usize,
    ece_raw: f64,
    ece_calibrated: f64,
}

pub fn calibrate(args: &CalibrateArgs) -> Result<()> {
    let post = load_fitted(required(&args.posterior, "posterior")?)?;
    let conf = load_confidences(required(&args.confidences, "confidences")?)?;
    let responses = match &args.responses {
        Some(p) => {
            let r = load_responses(p)?;
            conf.check_aligned(&r)?;
            Some(r)
        }
        None => None,
    };
    let config = args.optimizer.config(args.common.seed())?;
    let diff = vi::fit_difficulty_from_confidences(&post, &conf, &config)?;
    let cal = calibrate_confidences(&post, &conf, &diff)?;
    let bins = args.bins.unwrap_or(DEFAULT_ECE_BINS);
    let report = match &responses {
        Some(r) => Some(CalibrationReport {
            n_bins: bins,
            ece_raw: ece(conf.cells(), r.cells(), bins)?,
            ece_calibrated: ece(&cal.probabilities, r.cells(), bins)?,
        }),
        None => None,
    };
    let out = Outputs::create(args.common.out()?)?;
    out.run_echo(args)?;
    let d = Difficulties {
        item_ids: &diff.item_ids,
        loc: &diff.difficulty.loc,
        scale: &diff.difficulty.scale,
    };
    out.write(
        "difficulties.json",
        format_args!("{} item difficulties", d.item_ids.len()),
        |p| save_json(&d, p),
    )?;
    let calibrated = ConfidenceMatrix::new(cal.model_ids.clone(), cal.item_ids.clone(), cal.probabilities.clone())?;
    out.write("calibrated.csv", "calibrated success probabilities", |p| {
        io::save_confidence_matrix(&calibrated, p, MatrixFormat::Csv)
    })?;
    if let Some(rep) = &report {
        out.write(
            "calibration.json",
            format_args!("ECE raw {:.4}, calibrated {:.4}", rep.ece_raw, rep.ece_calibrated),
            |p| save_json(rep, p),
        )?;
    }
    args.optimizer.write_trace(&out, &diff.elbo_trace)
}
