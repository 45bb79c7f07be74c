//! Dense model × item matrices.
//!
//! Rows are models (classifiers), columns are items (images). Identifier
//! order is authoritative: every index used elsewhere in the crate refers to
//! the order in which identifiers were supplied.

use std::collections::{HashMap, HashSet};

use crate::error::{Error, Result};

/// Per-item annotations used by the complexity analyses.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ItemMeta {
    pub class_label: String,
    /// Corruption severity, 1 through 5.
    pub severity: Option<u8>,
}

fn check_unique(ids: &[String], axis: &'static str) -> Result<()> {
    let mut seen = HashSet::with_capacity(ids.len());
    for id in ids {
        if !seen.insert(id.as_str()) {
            return Err(Error::DuplicateId { axis, id: id.clone() });
        }
    }
    Ok(())
}

fn check_shape(n: usize, m: usize, len: usize, what: &str) -> Result<()> {
    if n * m != len {
        return Err(Error::DimensionMismatch(format!(
            "{what}: {n} models × {m} items needs {} cells, got {len}",
            n * m
        )));
    }
    Ok(())
}

fn index_of(ids: &[String]) -> HashMap<&str, usize> {
    ids.iter().enumerate().map(|(i, s)| (s.as_str(), i)).collect()
}

/// Binary correctness matrix: `cell(i, j) == 1` iff model `i` classified item `j` correctly.
#[derive(Debug, Clone, PartialEq)]
pub struct ResponseMatrix {
    model_ids: Vec<String>,
    item_ids: Vec<String>,
    cells: Vec<u8>,
    item_meta: Option<Vec<ItemMeta>>,
}

impl ResponseMatrix {
    /// Builds a matrix from row-major cells.
    pub fn new(model_ids: Vec<String>, item_ids: Vec<String>, cells: Vec<u8>) -> Result<Self> {
        check_unique(&model_ids, "model")?;
        check_unique(&item_ids, "item")?;
        let (n, m) = (model_ids.len(), item_ids.len());
        check_shape(n, m, cells.len(), "response matrix")?;
        if let Some(pos) = cells.iter().position(|&c| c > 1) {
            let (row, column) = (pos / m, pos % m);
            return Err(Error::InvalidCell {
                row,
                column,
                model: model_ids[row].clone(),
                item: item_ids[column].clone(),
                message: format!("value {} is not 0 or 1", cells[pos]),
            });
        }
        Ok(Self {
            model_ids,
            item_ids,
            cells,
            item_meta: None,
        })
    }

    /// Builds a matrix from row vectors of booleans.
    pub fn from_rows(model_ids: Vec<String>, item_ids: Vec<String>, rows: &[Vec<bool>]) -> Result<Self> {
        let m = item_ids.len();
        let mut cells = Vec::with_capacity(rows.len() * m);
        for (r, row) in rows.iter().enumerate() {
            if row.len() != m {
                return Err(Error::RaggedRow {
                    row: r,
                    expected: m,
                    found: row.len(),
                });
            }
            cells.extend(row.iter().map(|&b| b as u8));
        }
        Self::new(model_ids, item_ids, cells)
    }

    pub fn with_item_meta(mut self, meta: Vec<ItemMeta>) -> Result<Self> {
        if meta.len() != self.item_ids.len() {
            return Err(Error::DimensionMismatch(format!(
                "item metadata covers {} items, matrix has {}",
                meta.len(),
                self.item_ids.len()
            )));
        }
        self.item_meta = Some(meta);
        Ok(self)
    }

    pub fn n_models(&self) -> usize {
        self.model_ids.len()
    }

    pub fn n_items(&self) -> usize {
        self.item_ids.len()
    }

    pub fn model_ids(&self) -> &[String] {
        &self.model_ids
    }

    pub fn item_ids(&self) -> &[String] {
        &self.item_ids
    }

    pub fn item_meta(&self) -> Option<&[ItemMeta]> {
        self.item_meta.as_deref()
    }

    pub fn cells(&self) -> &[u8] {
        &self.cells
    }

    #[inline]
    pub fn get(&self, model: usize, item: usize) -> u8 {
        self.cells[model * self.item_ids.len() + item]
    }

    pub fn row(&self, model: usize) -> &[u8] {
        let m = self.item_ids.len();
        &self.cells[model * m..(model + 1) * m]
    }

    pub fn total_correct(&self) -> usize {
        self.cells.iter().map(|&c| c as usize).sum()
    }

    /// Row mean: fraction of items model `model` got right.
    pub fn accuracy(&self, model: usize) -> Result<f64> {
        if model >= self.n_models() {
            return Err(Error::IndexOutOfRange {
                axis: "model",
                index: model,
                len: self.n_models(),
            });
        }
        let correct: usize = self.row(model).iter().map(|&c| c as usize).sum();
        Ok(correct as f64 / self.n_items() as f64)
    }

    /// Column mean: fraction of models that got item `item` right.
    pub fn mean_item_score(&self, item: usize) -> Result<f64> {
        if item >= self.n_items() {
            return Err(Error::IndexOutOfRange {
                axis: "item",
                index: item,
                len: self.n_items(),
            });
        }
        let m = self.n_items();
        let correct: usize = (0..self.n_models()).map(|i| self.cells[i * m + item] as usize).sum();
        Ok(correct as f64 / self.n_models() as f64)
    }

    pub fn accuracies(&self) -> Vec<f64> {
        (0..self.n_models()).map(|i| self.accuracy(i).unwrap()).collect()
    }

    pub fn mean_item_scores(&self) -> Vec<f64> {
        let (n, m) = (self.n_models(), self.n_items());
        let mut sums = vec![0usize; m];
        for i in 0..n {
            for (s, &c) in sums.iter_mut().zip(self.row(i)) {
                *s += c as usize;
            }
        }
        sums.into_iter().map(|s| s as f64 / n as f64).collect()
    }

    /// Items × models view. Item metadata does not survive the transpose.
    pub fn transposed(&self) -> ResponseMatrix {
        let (n, m) = (self.n_models(), self.n_items());
        let mut cells = vec![0u8; n * m];
        for i in 0..n {
            for j in 0..m {
                cells[j * n + i] = self.cells[i * m + j];
            }
        }
        ResponseMatrix {
            model_ids: self.item_ids.clone(),
            item_ids: self.model_ids.clone(),
            cells,
            item_meta: None,
        }
    }

    /// Column subset in the order given by `ids`.
    pub fn select_items(&self, ids: &[String]) -> Result<ResponseMatrix> {
        let lookup = index_of(&self.item_ids);
        let cols = ids
            .iter()
            .map(|id| {
                lookup.get(id.as_str()).copied().ok_or_else(|| Error::UnknownId {
                    axis: "item",
                    id: id.clone(),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let m = self.n_items();
        let mut cells = Vec::with_capacity(self.n_models() * cols.len());
        for i in 0..self.n_models() {
            cells.extend(cols.iter().map(|&j| self.cells[i * m + j]));
        }
        let mut out = ResponseMatrix::new(self.model_ids.clone(), ids.to_vec(), cells)?;
        if let Some(meta) = &self.item_meta {
            out.item_meta = Some(cols.iter().map(|&j| meta[j].clone()).collect());
        }
        Ok(out)
    }

    /// Models that answered every item correctly or none at all.
    pub fn degenerate_models(&self) -> Vec<usize> {
        let m = self.n_items();
        (0..self.n_models())
            .filter(|&i| {
                let s: usize = self.row(i).iter().map(|&c| c as usize).sum();
                s == 0 || s == m
            })
            .collect()
    }

    /// Items that every model got right, or that no model got right.
    pub fn degenerate_items(&self) -> Vec<usize> {
        self.mean_item_scores()
            .iter()
            .enumerate()
            .filter(|(_, &s)| s == 0.0 || s == 1.0)
            .map(|(j, _)| j)
            .collect()
    }
}

/// Per-cell values in `[0, 1]`: maximum softmax confidences, or any other
/// per-cell probability (ICC probabilities, calibrated confidences).
#[derive(Debug, Clone, PartialEq)]
pub struct ConfidenceMatrix {
    model_ids: Vec<String>,
    item_ids: Vec<String>,
    cells: Vec<f64>,
}

impl ConfidenceMatrix {
    pub fn new(model_ids: Vec<String>, item_ids: Vec<String>, cells: Vec<f64>) -> Result<Self> {
        check_unique(&model_ids, "model")?;
        check_unique(&item_ids, "item")?;
        let (n, m) = (model_ids.len(), item_ids.len());
        check_shape(n, m, cells.len(), "confidence matrix")?;
        if let Some(pos) = cells.iter().position(|c| !(0.0..=1.0).contains(c)) {
            let (row, column) = (pos / m, pos % m);
            return Err(Error::InvalidCell {
                row,
                column,
                model: model_ids[row].clone(),
                item: item_ids[column].clone(),
                message: format!("value {} is outside [0, 1]", cells[pos]),
            });
        }
        Ok(Self {
            model_ids,
            item_ids,
            cells,
        })
    }

    pub fn n_models(&self) -> usize {
        self.model_ids.len()
    }

    pub fn n_items(&self) -> usize {
        self.item_ids.len()
    }

    pub fn model_ids(&self) -> &[String] {
        &self.model_ids
    }

    pub fn item_ids(&self) -> &[String] {
        &self.item_ids
    }

    pub fn cells(&self) -> &[f64] {
        &self.cells
    }

    #[inline]
    pub fn get(&self, model: usize, item: usize) -> f64 {
        self.cells[model * self.item_ids.len() + item]
    }

    pub fn row(&self, model: usize) -> &[f64] {
        let m = self.item_ids.len();
        &self.cells[model * m..(model + 1) * m]
    }

    /// Errors unless shape and identifier order match `responses` exactly.
    pub fn check_aligned(&self, responses: &ResponseMatrix) -> Result<()> {
        check_aligned_ids(
            &self.model_ids,
            &self.item_ids,
            responses.model_ids(),
            responses.item_ids(),
        )
    }

    pub fn select_items(&self, ids: &[String]) -> Result<ConfidenceMatrix> {
        let lookup = index_of(&self.item_ids);
        let cols = ids
            .iter()
            .map(|id| {
                lookup.get(id.as_str()).copied().ok_or_else(|| Error::UnknownId {
                    axis: "item",
                    id: id.clone(),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let m = self.n_items();
        let mut cells = Vec::with_capacity(self.n_models() * cols.len());
        for i in 0..self.n_models() {
            cells.extend(cols.iter().map(|&j| self.cells[i * m + j]));
        }
        ConfidenceMatrix::new(self.model_ids.clone(), ids.to_vec(), cells)
    }
}

pub(crate) fn check_aligned_ids(
    models_a: &[String],
    items_a: &[String],
    models_b: &[String],
    items_b: &[String],
) -> Result<()> {
    if models_a != models_b {
        return Err(Error::DimensionMismatch(format!(
            "model identifiers differ ({} vs {} models, or different order)",
            models_a.len(),
            models_b.len()
        )));
    }
    if items_a != items_b {
        return Err(Error::DimensionMismatch(format!(
            "item identifiers differ ({} vs {} items, or different order)",
            items_a.len(),
            items_b.len()
        )));
    }
    Ok(())
}

/// Predicted class labels per cell plus one ground-truth label per item.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionMatrix {
    model_ids: Vec<String>,
    item_ids: Vec<String>,
    predicted: Vec<String>,
    truth: Vec<String>,
}

impl PredictionMatrix {
    pub fn new(
        model_ids: Vec<String>,
        item_ids: Vec<String>,
        predicted: Vec<String>,
        truth: Vec<String>,
    ) -> Result<Self> {
        check_unique(&model_ids, "model")?;
        check_unique(&item_ids, "item")?;
        check_shape(model_ids.len(), item_ids.len(), predicted.len(), "prediction matrix")?;
        if truth.len() != item_ids.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} truth labels for {} items",
                truth.len(),
                item_ids.len()
            )));
        }
        Ok(Self {
            model_ids,
            item_ids,
            predicted,
            truth,
        })
    }

    pub fn n_models(&self) -> usize {
        self.model_ids.len()
    }

    pub fn n_items(&self) -> usize {
        self.item_ids.len()
    }

    pub fn model_ids(&self) -> &[String] {
        &self.model_ids
    }

    pub fn item_ids(&self) -> &[String] {
        &self.item_ids
    }

    pub fn truth(&self) -> &[String] {
        &self.truth
    }

    #[inline]
    pub fn get(&self, model: usize, item: usize) -> &str {
        &self.predicted[model * self.item_ids.len() + item]
    }

    /// Reorders rows; used to check permutation equivariance of voting.
    pub fn permute_models(&self, order: &[usize]) -> Result<PredictionMatrix> {
        let m = self.n_items();
        let mut predicted = Vec::with_capacity(self.predicted.len());
        let mut ids = Vec::with_capacity(order.len());
        for &i in order {
            if i >= self.n_models() {
                return Err(Error::IndexOutOfRange {
                    axis: "model",
                    index: i,
                    len: self.n_models(),
                });
            }
            ids.push(self.model_ids[i].clone());
            predicted.extend_from_slice(&self.predicted[i * m..(i + 1) * m]);
        }
        PredictionMatrix::new(ids, self.item_ids.clone(), predicted, self.truth.clone())
    }
}

/// Correctness matrix: 1 where the prediction equals the item's truth label.
pub fn derive_responses(pred: &PredictionMatrix) -> ResponseMatrix {
    let m = pred.n_items();
    let cells = pred
        .predicted
        .iter()
        .enumerate()
        .map(|(k, label)| (*label == pred.truth[k % m]) as u8)
        .collect();
    ResponseMatrix {
        model_ids: pred.model_ids.clone(),
        item_ids: pred.item_ids.clone(),
        cells,
        item_meta: None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ids(prefix: &str, n: usize) -> Vec<String> {
        (0..n).map(|i| format!("{prefix}{i}")).collect()
    }

    #[test]
    fn rejects_non_binary_cell_with_location() {
        let err = ResponseMatrix::new(ids("m", 2), ids("i", 2), vec![1, 0, 2, 1]).unwrap_err();
        match err {
            Error::InvalidCell { row, column, .. } => assert_eq!((row, column), (1, 0)),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn rejects_duplicate_ids() {
        let dup = vec!["a".to_string(), "a".to_string()];
        assert!(matches!(
            ResponseMatrix::new(dup, ids("i", 1), vec![0, 1]),
            Err(Error::DuplicateId { axis: "model", .. })
        ));
    }

    #[test]
    fn accuracy_and_item_score() {
        let r = ResponseMatrix::new(ids("m", 2), ids("i", 4), vec![1, 1, 1, 1, 1, 0, 1, 0]).unwrap();
        assert_eq!(r.accuracy(0).unwrap(), 1.0);
        assert_eq!(r.accuracy(1).unwrap(), 0.5);
        assert_eq!(r.mean_item_score(1).unwrap(), 0.5);
        assert!(matches!(r.accuracy(2), Err(Error::IndexOutOfRange { .. })));
        assert!(matches!(r.mean_item_score(4), Err(Error::IndexOutOfRange { .. })));
    }

    #[test]
    fn derive_responses_hand_checked() {
        // 3 models × 2 items; truth (cat, dog).
        let pred = PredictionMatrix::new(
            ids("m", 3),
            ids("i", 2),
            ["cat", "dog", "dog", "dog", "cat", "cat"].map(String::from).to_vec(),
            vec!["cat".into(), "dog".into()],
        )
        .unwrap();
        let r = derive_responses(&pred);
        assert_eq!(r.cells(), &[1, 1, 0, 1, 1, 0]);
    }

    #[test]
    fn derive_responses_identity_and_zero() {
        let truth: Vec<String> = vec!["a".into(), "b".into()];
        let all_right = PredictionMatrix::new(
            ids("m", 2),
            ids("i", 2),
            [truth.clone(), truth.clone()].concat(),
            truth.clone(),
        )
        .unwrap();
        assert!(derive_responses(&all_right).cells().iter().all(|&c| c == 1));
        let all_wrong = PredictionMatrix::new(ids("m", 1), ids("i", 2), vec!["b".into(), "a".into()], truth).unwrap();
        assert!(derive_responses(&all_wrong).cells().iter().all(|&c| c == 0));
    }

    #[test]
    fn confidence_bounds_enforced() {
        assert!(ConfidenceMatrix::new(ids("m", 1), ids("i", 2), vec![0.5, 1.2]).is_err());
        assert!(ConfidenceMatrix::new(ids("m", 1), ids("i", 2), vec![0.0, 1.0]).is_ok());
    }

    #[test]
    fn degenerate_rows_and_columns() {
        let r = ResponseMatrix::new(ids("m", 2), ids("i", 3), vec![1, 1, 1, 0, 1, 0]).unwrap();
        assert_eq!(r.degenerate_models(), vec![0]);
        assert_eq!(r.degenerate_items(), vec![1]);
    }
}
