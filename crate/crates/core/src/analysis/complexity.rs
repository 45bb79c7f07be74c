use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::irt::ModelKind;
use crate::matrix::ItemMeta;
use crate::posterior::FittedPosterior;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ItemParameter {
    Guessing,
    Difficulty,
    Discriminability,
}

impl fmt::Display for ItemParameter {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ItemParameter::Guessing => "guessing",
            ItemParameter::Difficulty => "difficulty",
            ItemParameter::Discriminability => "discriminability",
        })
    }
}

impl FromStr for ItemParameter {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "guessing" | "lambda" => Ok(ItemParameter::Guessing),
            "difficulty" | "b" => Ok(ItemParameter::Difficulty),
            "discriminability" | "gamma" => Ok(ItemParameter::Discriminability),
            other => Err(Error::InvalidArgument(format!("unknown item parameter `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GroupMedian {
    pub class_label: String,
    pub severity: Option<u8>,
    pub count: usize,
    pub median: f64,
}

/// Median of a non-empty slice; the mean of the middle pair for even lengths.
pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let k = v.len() / 2;
    Some(if v.len() % 2 == 1 {
        v[k]
    } else {
        0.5 * (v[k - 1] + v[k])
    })
}

/// Median posterior-mean parameter per (class label, severity), sorted by
/// class label then severity. `meta` is aligned with the posterior's items.
pub fn classwise_median(
    fitted: &FittedPosterior,
    meta: &[ItemMeta],
    parameter: ItemParameter,
) -> Result<Vec<GroupMedian>> {
    if fitted.kind != ModelKind::ThreePL {
        return Err(Error::InvalidArgument(format!(
            "class-wise medians need a ThreePL posterior, got {}",
            fitted.kind
        )));
    }
    if meta.len() != fitted.n_items() {
        return Err(Error::DimensionMismatch(format!(
            "item metadata covers {} items, posterior has {}",
            meta.len(),
            fitted.n_items()
        )));
    }
    let params = fitted.point_estimates();
    let values = match parameter {
        ItemParameter::Guessing => params.lambda.expect("ThreePL has guessing"),
        ItemParameter::Difficulty => params.b,
        ItemParameter::Discriminability => params.gamma.expect("ThreePL has discriminability"),
    };
    let mut groups: BTreeMap<(&str, Option<u8>), Vec<f64>> = BTreeMap::new();
    for (item, v) in meta.iter().zip(values) {
        groups
            .entry((item.class_label.as_str(), item.severity))
            .or_default()
            .push(v);
    }
    Ok(groups
        .into_iter()
        .map(|((class, severity), vals)| GroupMedian {
            class_label: class.to_string(),
            severity,
            count: vals.len(),
            median: median(&vals).expect("groups are non-empty"),
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn medians() {
        assert_eq!(median(&[0.9, 0.1, 0.2]), Some(0.2));
        assert_eq!(median(&[4.0, 1.0, 3.0, 2.0]), Some(2.5));
        assert_eq!(median(&[]), None);
    }

    #[test]
    fn parameter_names() {
        for p in [
            ItemParameter::Guessing,
            ItemParameter::Difficulty,
            ItemParameter::Discriminability,
        ] {
            assert_eq!(p.to_string().parse::<ItemParameter>().unwrap(), p);
        }
        assert!("slope".parse::<ItemParameter>().is_err());
    }
}
