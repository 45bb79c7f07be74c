//! Fitted variational posteriors and their JSON persistence.
//!
//! A posterior file is one JSON document with top-level keys
//! `schema_version`, `model_kind`, `models`, `items`, `hyper` and `fit`.
//! Floating-point values are written with 17 significant digits so that a
//! save/load round trip is exact.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{self, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::irt::{sigmoid, ModelKind, ParameterSet};

pub const SCHEMA_VERSION: u32 = 1;

/// Independent Normal factors, one `(loc, scale)` pair per latent scalar.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalBlock {
    pub loc: Vec<f64>,
    pub scale: Vec<f64>,
}

impl NormalBlock {
    pub fn new(loc: Vec<f64>, scale: Vec<f64>) -> Self {
        Self { loc, scale }
    }

    pub fn point(loc: Vec<f64>, scale: f64) -> Self {
        let scale = vec![scale; loc.len()];
        Self { loc, scale }
    }

    pub fn len(&self) -> usize {
        self.loc.len()
    }

    pub fn is_empty(&self) -> bool {
        self.loc.is_empty()
    }

    /// Mean of `exp(x)` for `x ~ N(loc, scale²)`.
    pub fn lognormal_means(&self) -> Vec<f64> {
        self.loc
            .iter()
            .zip(&self.scale)
            .map(|(&l, &s)| (l + 0.5 * s * s).exp())
            .collect()
    }

    /// Mean of `σ(x)` for `x ~ N(loc, scale²)`.
    pub fn logit_normal_means(&self) -> Vec<f64> {
        self.loc
            .iter()
            .zip(&self.scale)
            .map(|(&l, &s)| logit_normal_mean(l, s))
            .collect()
    }

    fn check(&self, name: &str, len: usize, allow_zero_scale: bool) -> Result<()> {
        if self.loc.len() != len || self.scale.len() != len {
            return Err(Error::Schema(format!(
                "{name}: expected {len} entries, found {} locations and {} scales",
                self.loc.len(),
                self.scale.len()
            )));
        }
        if let Some(k) = self.loc.iter().position(|v| !v.is_finite()) {
            return Err(Error::Schema(format!("{name}: non-finite location at index {k}")));
        }
        let bad_scale = |s: &f64| !(s.is_finite() && (*s > 0.0 || (allow_zero_scale && *s == 0.0)));
        if let Some(k) = self.scale.iter().position(bad_scale) {
            return Err(Error::Schema(format!(
                "{name}: scale {} at index {k} is not strictly positive",
                self.scale[k]
            )));
        }
        Ok(())
    }
}

/// `E[σ(x)]`, `x ~ N(loc, scale²)`, by the trapezoid rule on the standard
/// normal density over ±8 standard deviations.
pub fn logit_normal_mean(loc: f64, scale: f64) -> f64 {
    if scale == 0.0 {
        return sigmoid(loc);
    }
    const HALF_WIDTH: f64 = 8.0;
    const STEPS: usize = 320;
    let h = 2.0 * HALF_WIDTH / STEPS as f64;
    let norm = (2.0 * std::f64::consts::PI).sqrt();
    let mut acc = 0.0;
    for k in 0..=STEPS {
        let z = -HALF_WIDTH + k as f64 * h;
        let w = if k == 0 || k == STEPS { 0.5 } else { 1.0 };
        acc += w * (-0.5 * z * z).exp() * sigmoid(loc + scale * z);
    }
    acc * h / norm
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScalarNormal {
    pub loc: f64,
    pub scale: f64,
}

/// Posterior over a family's prior mean μ and log-precision `ln τ`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HyperPosterior {
    pub mean: ScalarNormal,
    pub log_precision: ScalarNormal,
}

impl HyperPosterior {
    /// Posterior mean of τ (log-normal mean).
    pub fn precision_mean(&self) -> f64 {
        let s = self.log_precision.scale;
        (self.log_precision.loc + 0.5 * s * s).exp()
    }
}

/// Hyperparameter families, keyed in the `hyper` section by [`HyperFamily::key`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum HyperFamily {
    Ability,
    Difficulty,
    LogDiscriminability,
    LogModelDiscriminability,
}

impl HyperFamily {
    pub fn key(self) -> &'static str {
        match self {
            HyperFamily::Ability => "theta",
            HyperFamily::Difficulty => "b",
            HyperFamily::LogDiscriminability => "log_gamma",
            HyperFamily::LogModelDiscriminability => "log_gamma_model",
        }
    }

    pub fn for_kind(kind: ModelKind) -> Vec<HyperFamily> {
        let mut out = vec![HyperFamily::Ability, HyperFamily::Difficulty];
        if kind.has_item_gamma() {
            out.push(HyperFamily::LogDiscriminability);
        }
        if kind.has_model_gamma() {
            out.push(HyperFamily::LogModelDiscriminability);
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitMeta {
    pub seed: u64,
    pub epochs: usize,
    /// Steps actually taken; smaller than `epochs` after an early stop.
    pub epochs_run: usize,
    pub learning_rate: f64,
    pub mc_samples: usize,
    pub final_elbo: Option<f64>,
    /// Models that answered every item correctly or none at all.
    #[serde(default)]
    pub flagged_models: Vec<String>,
    /// Items every model answered correctly, or none did.
    #[serde(default)]
    pub flagged_items: Vec<String>,
}

impl FitMeta {
    /// Metadata for a point posterior that was not produced by a fit.
    pub fn unfitted(seed: u64) -> Self {
        FitMeta {
            seed,
            epochs: 0,
            epochs_run: 0,
            learning_rate: 0.0,
            mc_samples: 0,
            final_elbo: None,
            flagged_models: Vec::new(),
            flagged_items: Vec::new(),
        }
    }
}

/// Mean-field variational posterior.
///
/// `discriminability` and `model_discriminability` are Normal in log space,
/// `guessing` is Normal in logit space; every other block is Normal in the
/// parameter's own space.
#[derive(Debug, Clone, PartialEq)]
pub struct FittedPosterior {
    pub kind: ModelKind,
    pub model_ids: Vec<String>,
    pub item_ids: Vec<String>,
    pub ability: NormalBlock,
    pub difficulty: NormalBlock,
    pub discriminability: Option<NormalBlock>,
    pub guessing: Option<NormalBlock>,
    pub model_discriminability: Option<NormalBlock>,
    pub hyper: BTreeMap<String, HyperPosterior>,
    pub fit: FitMeta,
}

impl FittedPosterior {
    pub fn n_models(&self) -> usize {
        self.model_ids.len()
    }

    pub fn n_items(&self) -> usize {
        self.item_ids.len()
    }

    pub fn validate(&self) -> Result<()> {
        self.validate_inner(false)
    }

    fn validate_inner(&self, allow_zero_scale: bool) -> Result<()> {
        let (n, m, d) = (self.model_ids.len(), self.item_ids.len(), self.kind.dim());
        self.ability.check("models.ability", n * d, allow_zero_scale)?;
        self.difficulty.check("items.difficulty", m * d, allow_zero_scale)?;
        let block = |name: &str, wanted: bool, b: &Option<NormalBlock>, len: usize| -> Result<()> {
            match (wanted, b) {
                (true, Some(b)) => b.check(name, len, allow_zero_scale),
                (true, None) => Err(Error::Schema(format!("{} requires a `{name}` block", self.kind))),
                (false, Some(_)) => Err(Error::Schema(format!("{} must not carry `{name}`", self.kind))),
                (false, None) => Ok(()),
            }
        };
        block(
            "items.discriminability",
            self.kind.has_item_gamma(),
            &self.discriminability,
            m * d,
        )?;
        block("items.guessing", self.kind.has_guessing(), &self.guessing, m)?;
        block(
            "models.discriminability",
            self.kind.has_model_gamma(),
            &self.model_discriminability,
            n,
        )?;
        for (key, h) in &self.hyper {
            for (what, v) in [("mean", h.mean), ("log_precision", h.log_precision)] {
                if !v.loc.is_finite() || !(v.scale > 0.0 && v.scale.is_finite()) {
                    return Err(Error::Schema(format!("hyper.{key}.{what} is invalid")));
                }
            }
        }
        Ok(())
    }

    /// Posterior-mean point estimates: θ and b are the Normal locations, γ the
    /// log-normal means, λ the logit-normal means.
    pub fn point_estimates(&self) -> ParameterSet {
        ParameterSet {
            kind: self.kind,
            theta: self.ability.loc.clone(),
            b: self.difficulty.loc.clone(),
            gamma: self.discriminability.as_ref().map(NormalBlock::lognormal_means),
            lambda: self.guessing.as_ref().map(NormalBlock::logit_normal_means),
            gamma_model: self.model_discriminability.as_ref().map(NormalBlock::lognormal_means),
        }
    }

    /// Wraps point values as a posterior with a common `scale` on every factor.
    pub fn from_point(
        params: &ParameterSet,
        model_ids: Vec<String>,
        item_ids: Vec<String>,
        scale: f64,
    ) -> Result<Self> {
        params.validate()?;
        if model_ids.len() != params.n_models() || item_ids.len() != params.n_items() {
            return Err(Error::DimensionMismatch(format!(
                "{} model ids / {} item ids for parameters of {} × {}",
                model_ids.len(),
                item_ids.len(),
                params.n_models(),
                params.n_items()
            )));
        }
        let post = FittedPosterior {
            kind: params.kind,
            model_ids,
            item_ids,
            ability: NormalBlock::point(params.theta.clone(), scale),
            difficulty: NormalBlock::point(params.b.clone(), scale),
            discriminability: params
                .gamma
                .as_ref()
                .map(|g| NormalBlock::point(g.iter().map(|v| v.ln()).collect(), scale)),
            guessing: params
                .lambda
                .as_ref()
                .map(|l| NormalBlock::point(l.iter().map(|&v| crate::irt::logit(v)).collect(), scale)),
            model_discriminability: params
                .gamma_model
                .as_ref()
                .map(|g| NormalBlock::point(g.iter().map(|v| v.ln()).collect(), scale)),
            hyper: BTreeMap::new(),
            fit: FitMeta::unfitted(0),
        };
        post.validate_inner(scale == 0.0)?;
        Ok(post)
    }

    fn to_document(&self) -> PosteriorDocument {
        PosteriorDocument {
            schema_version: SCHEMA_VERSION,
            model_kind: self.kind,
            models: ModelsSection {
                ids: self.model_ids.clone(),
                ability: self.ability.clone(),
                discriminability: self.model_discriminability.clone(),
            },
            items: ItemsSection {
                ids: self.item_ids.clone(),
                difficulty: self.difficulty.clone(),
                discriminability: self.discriminability.clone(),
                guessing: self.guessing.clone(),
            },
            hyper: self.hyper.clone(),
            fit: self.fit.clone(),
        }
    }

    fn from_document(doc: PosteriorDocument) -> Result<Self> {
        if doc.schema_version != SCHEMA_VERSION {
            return Err(Error::Schema(format!(
                "schema_version {} is not supported (expected {SCHEMA_VERSION})",
                doc.schema_version
            )));
        }
        Ok(FittedPosterior {
            kind: doc.model_kind,
            model_ids: doc.models.ids,
            item_ids: doc.items.ids,
            ability: doc.models.ability,
            difficulty: doc.items.difficulty,
            discriminability: doc.items.discriminability,
            guessing: doc.items.guessing,
            model_discriminability: doc.models.discriminability,
            hyper: doc.hyper,
            fit: doc.fit,
        })
    }
}

#[derive(Serialize, Deserialize)]
struct ModelsSection {
    ids: Vec<String>,
    ability: NormalBlock,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    discriminability: Option<NormalBlock>,
}

#[derive(Serialize, Deserialize)]
struct ItemsSection {
    ids: Vec<String>,
    difficulty: NormalBlock,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    discriminability: Option<NormalBlock>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    guessing: Option<NormalBlock>,
}

#[derive(Serialize, Deserialize)]
struct PosteriorDocument {
    schema_version: u32,
    model_kind: ModelKind,
    models: ModelsSection,
    items: ItemsSection,
    hyper: BTreeMap<String, HyperPosterior>,
    fit: FitMeta,
}

/// Pretty JSON whose floats carry 17 significant digits.
struct PreciseFormatter(serde_json::ser::PrettyFormatter<'static>);

impl serde_json::ser::Formatter for PreciseFormatter {
    fn write_f64<W: ?Sized + Write>(&mut self, writer: &mut W, value: f64) -> io::Result<()> {
        write!(writer, "{value:.16e}")
    }

    fn write_f32<W: ?Sized + Write>(&mut self, writer: &mut W, value: f32) -> io::Result<()> {
        write!(writer, "{value:.8e}")
    }

    fn begin_array<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.begin_array(w)
    }

    fn end_array<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.end_array(w)
    }

    fn begin_array_value<W: ?Sized + Write>(&mut self, w: &mut W, first: bool) -> io::Result<()> {
        self.0.begin_array_value(w, first)
    }

    fn end_array_value<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.end_array_value(w)
    }

    fn begin_object<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.begin_object(w)
    }

    fn end_object<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.end_object(w)
    }

    fn begin_object_key<W: ?Sized + Write>(&mut self, w: &mut W, first: bool) -> io::Result<()> {
        self.0.begin_object_key(w, first)
    }

    fn begin_object_value<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.begin_object_value(w)
    }

    fn end_object_value<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.end_object_value(w)
    }
}

/// Serializes any value as pretty JSON with full-precision floats.
pub fn write_json<W: Write, T: Serialize>(writer: W, value: &T) -> Result<()> {
    let mut ser =
        serde_json::Serializer::with_formatter(writer, PreciseFormatter(serde_json::ser::PrettyFormatter::new()));
    value.serialize(&mut ser)?;
    let mut w = ser.into_inner();
    w.write_all(b"\n").map_err(|e| Error::io("output", e))?;
    Ok(())
}

pub fn save_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    write_json(&mut w, value)?;
    w.flush().map_err(|e| Error::io(path, e))
}

fn parse_document<R: Read>(reader: R) -> Result<PosteriorDocument> {
    serde_json::from_reader(reader).map_err(|e| Error::Parse {
        location: format!("line {}, column {}", e.line(), e.column()),
        message: e.to_string(),
    })
}

pub fn write_posterior<W: Write>(p: &FittedPosterior, writer: W) -> Result<()> {
    p.validate()?;
    write_json(writer, &p.to_document())
}

pub fn read_posterior<R: Read>(reader: R) -> Result<FittedPosterior> {
    let post = FittedPosterior::from_document(parse_document(reader)?)?;
    post.validate()?;
    Ok(post)
}

pub fn save_posterior(p: &FittedPosterior, path: &Path) -> Result<()> {
    p.validate()?;
    save_json(&p.to_document(), path)
}

pub fn load_posterior(path: &Path) -> Result<FittedPosterior> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_posterior(io::BufReader::new(file))
}

/// Ground-truth parameters in the posterior layout with zero scales.
#[derive(Debug, Clone, PartialEq)]
pub struct TruthFile {
    pub params: ParameterSet,
    pub model_ids: Vec<String>,
    pub item_ids: Vec<String>,
    pub seed: u64,
}

pub fn save_truth(truth: &TruthFile, path: &Path) -> Result<()> {
    let mut post = FittedPosterior::from_point(&truth.params, truth.model_ids.clone(), truth.item_ids.clone(), 0.0)?;
    post.fit = FitMeta::unfitted(truth.seed);
    save_json(&post.to_document(), path)
}

pub fn load_truth(path: &Path) -> Result<TruthFile> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let post = FittedPosterior::from_document(parse_document(io::BufReader::new(file))?)?;
    post.validate_inner(true)?;
    let params = ParameterSet {
        kind: post.kind,
        theta: post.ability.loc.clone(),
        b: post.difficulty.loc.clone(),
        gamma: post
            .discriminability
            .as_ref()
            .map(|b| b.loc.iter().map(|v| v.exp()).collect()),
        lambda: post
            .guessing
            .as_ref()
            .map(|b| b.loc.iter().map(|&v| sigmoid(v)).collect()),
        gamma_model: post
            .model_discriminability
            .as_ref()
            .map(|b| b.loc.iter().map(|v| v.exp()).collect()),
    };
    Ok(TruthFile {
        params,
        model_ids: post.model_ids,
        item_ids: post.item_ids,
        seed: post.fit.seed,
    })
}
