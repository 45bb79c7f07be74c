//! Delimited-text persistence for matrices and per-item tables.
//!
//! Matrix layout: a header row `model_id,<item ids...>` followed by one row
//! per model, `<model id>,<cells...>`. Prediction files carry one extra row
//! whose model id is [`TRUTH_ROW_ID`] holding the ground-truth labels.

use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use crate::analysis::ErrorFlags;
use crate::error::{Error, Result};
use crate::matrix::{ConfidenceMatrix, ItemMeta, PredictionMatrix, ResponseMatrix};

pub const MODEL_ID_HEADER: &str = "model_id";
pub const TRUTH_ROW_ID: &str = "__truth__";

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub enum MatrixFormat {
    #[default]
    Csv,
    Tsv,
}

impl MatrixFormat {
    fn delimiter(self) -> u8 {
        match self {
            MatrixFormat::Csv => b',',
            MatrixFormat::Tsv => b'\t',
        }
    }

    /// Picks TSV for `.tsv`/`.tab` paths, CSV otherwise.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some("tsv") | Some("tab") => MatrixFormat::Tsv,
            _ => MatrixFormat::Csv,
        }
    }
}

struct RawMatrix {
    model_ids: Vec<String>,
    item_ids: Vec<String>,
    cells: Vec<String>,
}

fn open(path: &Path) -> Result<File> {
    File::open(path).map_err(|e| Error::io(path, e))
}

fn create(path: &Path) -> Result<File> {
    File::create(path).map_err(|e| Error::io(path, e))
}

fn csv_error(e: csv::Error) -> Error {
    let location = e
        .position()
        .map(|p| format!("line {}", p.line()))
        .unwrap_or_else(|| "input".to_string());
    Error::Parse {
        location,
        message: e.to_string(),
    }
}

fn write_error(e: csv::Error) -> Error {
    Error::Parse {
        location: "output".into(),
        message: e.to_string(),
    }
}

fn read_raw<R: Read>(reader: R, format: MatrixFormat) -> Result<RawMatrix> {
    let mut rdr = csv::ReaderBuilder::new()
        .delimiter(format.delimiter())
        .has_headers(false)
        .flexible(true)
        .from_reader(reader);
    let mut records = rdr.records();
    let header = match records.next() {
        Some(h) => h.map_err(csv_error)?,
        None => {
            return Err(Error::Parse {
                location: "line 1".into(),
                message: "empty file".into(),
            })
        }
    };
    if header.get(0) != Some(MODEL_ID_HEADER) {
        return Err(Error::Parse {
            location: "line 1, column 0".into(),
            message: format!("header must start with `{MODEL_ID_HEADER}`"),
        });
    }
    let item_ids: Vec<String> = header.iter().skip(1).map(str::to_string).collect();
    let m = item_ids.len();
    let mut model_ids = Vec::new();
    let mut cells = Vec::new();
    for (row, rec) in records.enumerate() {
        let rec = rec.map_err(csv_error)?;
        if rec.len() != m + 1 {
            return Err(Error::RaggedRow {
                row,
                expected: m,
                found: rec.len().saturating_sub(1),
            });
        }
        model_ids.push(rec[0].to_string());
        cells.extend(rec.iter().skip(1).map(|c| c.trim().to_string()));
    }
    Ok(RawMatrix {
        model_ids,
        item_ids,
        cells,
    })
}

fn invalid_cell(raw: &RawMatrix, pos: usize, message: String) -> Error {
    let m = raw.item_ids.len();
    let (row, column) = (pos / m, pos % m);
    Error::InvalidCell {
        row,
        column,
        model: raw.model_ids[row].clone(),
        item: raw.item_ids[column].clone(),
        message,
    }
}

fn write_matrix<W: Write, T>(
    writer: W,
    format: MatrixFormat,
    model_ids: &[String],
    item_ids: &[String],
    cell: impl Fn(usize, usize) -> T,
    extra_row: Option<(&str, &[String])>,
) -> Result<()>
where
    T: ToString,
{
    let mut w = csv::WriterBuilder::new()
        .delimiter(format.delimiter())
        .from_writer(writer);
    let header = std::iter::once(MODEL_ID_HEADER).chain(item_ids.iter().map(String::as_str));
    w.write_record(header).map_err(write_error)?;
    let mut record = Vec::with_capacity(item_ids.len() + 1);
    for (i, id) in model_ids.iter().enumerate() {
        record.clear();
        record.push(id.clone());
        record.extend((0..item_ids.len()).map(|j| cell(i, j).to_string()));
        w.write_record(&record).map_err(write_error)?;
    }
    if let Some((id, row)) = extra_row {
        w.write_record(std::iter::once(id).chain(row.iter().map(String::as_str)))
            .map_err(write_error)?;
    }
    w.flush().map_err(|e| Error::io("output", e))?;
    Ok(())
}

pub fn read_response_matrix<R: Read>(reader: R, format: MatrixFormat) -> Result<ResponseMatrix> {
    let raw = read_raw(reader, format)?;
    let mut cells = Vec::with_capacity(raw.cells.len());
    for (pos, c) in raw.cells.iter().enumerate() {
        match c.as_str() {
            "0" => cells.push(0),
            "1" => cells.push(1),
            other => return Err(invalid_cell(&raw, pos, format!("`{other}` is not 0 or 1"))),
        }
    }
    ResponseMatrix::new(raw.model_ids, raw.item_ids, cells)
}

/// Loads a response matrix, preserving identifier order from the file.
pub fn load_response_matrix(path: &Path, format: MatrixFormat) -> Result<ResponseMatrix> {
    read_response_matrix(open(path)?, format)
}

pub fn write_response_matrix<W: Write>(r: &ResponseMatrix, writer: W, format: MatrixFormat) -> Result<()> {
    write_matrix(writer, format, r.model_ids(), r.item_ids(), |i, j| r.get(i, j), None)
}

pub fn save_response_matrix(r: &ResponseMatrix, path: &Path, format: MatrixFormat) -> Result<()> {
    write_response_matrix(r, create(path)?, format)
}

pub fn read_confidence_matrix<R: Read>(reader: R, format: MatrixFormat) -> Result<ConfidenceMatrix> {
    let raw = read_raw(reader, format)?;
    let mut cells = Vec::with_capacity(raw.cells.len());
    for (pos, c) in raw.cells.iter().enumerate() {
        let v: f64 = c
            .parse()
            .map_err(|_| invalid_cell(&raw, pos, format!("`{c}` is not a number")))?;
        if !(0.0..=1.0).contains(&v) {
            return Err(invalid_cell(&raw, pos, format!("{v} is outside [0, 1]")));
        }
        cells.push(v);
    }
    ConfidenceMatrix::new(raw.model_ids, raw.item_ids, cells)
}

pub fn load_confidence_matrix(path: &Path, format: MatrixFormat) -> Result<ConfidenceMatrix> {
    read_confidence_matrix(open(path)?, format)
}

pub fn write_confidence_matrix<W: Write>(c: &ConfidenceMatrix, writer: W, format: MatrixFormat) -> Result<()> {
    write_matrix(writer, format, c.model_ids(), c.item_ids(), |i, j| c.get(i, j), None)
}

pub fn save_confidence_matrix(c: &ConfidenceMatrix, path: &Path, format: MatrixFormat) -> Result<()> {
    write_confidence_matrix(c, create(path)?, format)
}

pub fn read_prediction_matrix<R: Read>(reader: R, format: MatrixFormat) -> Result<PredictionMatrix> {
    let raw = read_raw(reader, format)?;
    let m = raw.item_ids.len();
    let truth_rows: Vec<usize> = raw
        .model_ids
        .iter()
        .enumerate()
        .filter(|(_, id)| *id == TRUTH_ROW_ID)
        .map(|(i, _)| i)
        .collect();
    let truth_row = match truth_rows.as_slice() {
        [r] => *r,
        [] => {
            return Err(Error::Parse {
                location: "prediction file".into(),
                message: format!("missing `{TRUTH_ROW_ID}` row"),
            })
        }
        _ => {
            return Err(Error::DuplicateId {
                axis: "model",
                id: TRUTH_ROW_ID.into(),
            })
        }
    };
    let mut model_ids = Vec::with_capacity(raw.model_ids.len() - 1);
    let mut predicted = Vec::with_capacity(raw.cells.len() - m);
    let mut truth = Vec::new();
    for (i, id) in raw.model_ids.iter().enumerate() {
        let row = &raw.cells[i * m..(i + 1) * m];
        if i == truth_row {
            truth = row.to_vec();
        } else {
            model_ids.push(id.clone());
            predicted.extend_from_slice(row);
        }
    }
    PredictionMatrix::new(model_ids, raw.item_ids, predicted, truth)
}

pub fn load_prediction_matrix(path: &Path, format: MatrixFormat) -> Result<PredictionMatrix> {
    read_prediction_matrix(open(path)?, format)
}

pub fn write_prediction_matrix<W: Write>(p: &PredictionMatrix, writer: W, format: MatrixFormat) -> Result<()> {
    write_matrix(
        writer,
        format,
        p.model_ids(),
        p.item_ids(),
        |i, j| p.get(i, j).to_string(),
        Some((TRUTH_ROW_ID, p.truth())),
    )
}

pub fn save_prediction_matrix(p: &PredictionMatrix, path: &Path, format: MatrixFormat) -> Result<()> {
    write_prediction_matrix(p, create(path)?, format)
}

/// Reads `item_id,class_label,severity` rows and orders them to match `item_ids`.
pub fn read_item_meta<R: Read>(reader: R, item_ids: &[String]) -> Result<Vec<ItemMeta>> {
    let mut rdr = csv::ReaderBuilder::new().from_reader(reader);
    let headers = rdr.headers().map_err(csv_error)?.clone();
    let expected = ["item_id", "class_label", "severity"];
    if headers.iter().collect::<Vec<_>>() != expected {
        return Err(Error::Parse {
            location: "line 1".into(),
            message: format!("item metadata header must be `{}`", expected.join(",")),
        });
    }
    let mut by_id = std::collections::HashMap::new();
    for (row, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(csv_error)?;
        let location = format!("item metadata row {row}");
        let severity = match rec[2].trim() {
            "" => None,
            s => {
                let v: u8 = s.parse().map_err(|_| Error::Parse {
                    location: location.clone(),
                    message: format!("severity `{s}` is not an integer"),
                })?;
                if !(1..=5).contains(&v) {
                    return Err(Error::Parse {
                        location,
                        message: format!("severity {v} outside 1..=5"),
                    });
                }
                Some(v)
            }
        };
        let meta = ItemMeta {
            class_label: rec[1].to_string(),
            severity,
        };
        if by_id.insert(rec[0].to_string(), meta).is_some() {
            return Err(Error::DuplicateId {
                axis: "item",
                id: rec[0].to_string(),
            });
        }
    }
    item_ids
        .iter()
        .map(|id| {
            by_id.remove(id).ok_or_else(|| Error::Parse {
                location: "item metadata".into(),
                message: format!("no entry for item `{id}`"),
            })
        })
        .collect()
}

pub fn load_item_meta(path: &Path, item_ids: &[String]) -> Result<Vec<ItemMeta>> {
    read_item_meta(open(path)?, item_ids)
}

pub fn write_item_meta<W: Write>(item_ids: &[String], meta: &[ItemMeta], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["item_id", "class_label", "severity"])
        .map_err(write_error)?;
    for (id, m) in item_ids.iter().zip(meta) {
        let sev = m.severity.map(|s| s.to_string()).unwrap_or_default();
        w.write_record([id.as_str(), m.class_label.as_str(), sev.as_str()])
            .map_err(write_error)?;
    }
    w.flush().map_err(|e| Error::io("output", e))?;
    Ok(())
}

pub fn save_item_meta(item_ids: &[String], meta: &[ItemMeta], path: &Path) -> Result<()> {
    write_item_meta(item_ids, meta, create(path)?)
}

/// Reads `item_id,annotation_error,class_overlap` rows (0/1 flags) ordered to match `item_ids`.
pub fn read_error_flags<R: Read>(reader: R, item_ids: &[String]) -> Result<ErrorFlags> {
    let mut rdr = csv::ReaderBuilder::new().from_reader(reader);
    let mut by_id = std::collections::HashMap::new();
    for (row, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(csv_error)?;
        let flag = |k: usize| -> Result<bool> {
            match rec.get(k).map(str::trim) {
                Some("0") => Ok(false),
                Some("1") => Ok(true),
                other => Err(Error::Parse {
                    location: format!("flags row {row}, column {k}"),
                    message: format!("expected 0 or 1, found {other:?}"),
                }),
            }
        };
        by_id.insert(rec[0].to_string(), (flag(1)?, flag(2)?));
    }
    let mut annotation_error = Vec::with_capacity(item_ids.len());
    let mut class_overlap = Vec::with_capacity(item_ids.len());
    for id in item_ids {
        let (a, c) = by_id.get(id).copied().ok_or_else(|| Error::Parse {
            location: "flags".into(),
            message: format!("no entry for item `{id}`"),
        })?;
        annotation_error.push(a);
        class_overlap.push(c);
    }
    Ok(ErrorFlags {
        annotation_error,
        class_overlap,
    })
}

pub fn load_error_flags(path: &Path, item_ids: &[String]) -> Result<ErrorFlags> {
    read_error_flags(open(path)?, item_ids)
}

pub fn save_error_flags(item_ids: &[String], flags: &ErrorFlags, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_writer(create(path)?);
    w.write_record(["item_id", "annotation_error", "class_overlap"])
        .map_err(write_error)?;
    for (k, id) in item_ids.iter().enumerate() {
        let a = (flags.annotation_error[k] as u8).to_string();
        let c = (flags.class_overlap[k] as u8).to_string();
        w.write_record([id.as_str(), a.as_str(), c.as_str()])
            .map_err(write_error)?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

/// Writes an arbitrary real-valued model × item table (e.g. overconfidence)
/// in the matrix layout.
pub fn save_value_matrix(
    model_ids: &[String],
    item_ids: &[String],
    cells: &[f64],
    path: &Path,
    format: MatrixFormat,
) -> Result<()> {
    let m = item_ids.len();
    if cells.len() != model_ids.len() * m {
        return Err(Error::DimensionMismatch(format!(
            "{} cells for {} × {m}",
            cells.len(),
            model_ids.len()
        )));
    }
    write_matrix(
        create(path)?,
        format,
        model_ids,
        item_ids,
        |i, j| cells[i * m + j],
        None,
    )
}

/// `step,elbo` rows, steps counted from 1.
pub fn save_elbo_trace(trace: &[f64], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_writer(create(path)?);
    w.write_record(["step", "elbo"]).map_err(write_error)?;
    for (k, v) in trace.iter().enumerate() {
        w.write_record([(k + 1).to_string(), v.to_string()])
            .map_err(write_error)?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

/// One id per line.
pub fn save_id_list(ids: &[String], path: &Path) -> Result<()> {
    let mut f = std::io::BufWriter::new(create(path)?);
    for id in ids {
        writeln!(f, "{id}").map_err(|e| Error::io(path, e))?;
    }
    f.flush().map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reads_small_csv() {
        let text = "model_id,a,b\nm1,1,0\nm2,0,1\n";
        let r = read_response_matrix(text.as_bytes(), MatrixFormat::Csv).unwrap();
        assert_eq!((r.n_models(), r.n_items()), (2, 2));
        assert_eq!(r.cells(), &[1, 0, 0, 1]);
        assert_eq!(r.item_ids(), &["a", "b"]);
    }

    #[test]
    fn non_binary_cell_names_location() {
        let text = "model_id,a,b\nm1,1,0\nm2,0,2\n";
        let err = read_response_matrix(text.as_bytes(), MatrixFormat::Csv).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("row 1"), "{msg}");
        assert!(msg.contains("column 1"), "{msg}");
        assert!(msg.contains("`b`"), "{msg}");
    }

    #[test]
    fn ragged_row_rejected() {
        let text = "model_id,a,b\nm1,1\n";
        assert!(matches!(
            read_response_matrix(text.as_bytes(), MatrixFormat::Csv),
            Err(Error::RaggedRow { row: 0, .. })
        ));
    }

    #[test]
    fn empty_file_is_parse_error() {
        assert!(matches!(
            read_response_matrix("".as_bytes(), MatrixFormat::Csv),
            Err(Error::Parse { .. })
        ));
    }

    #[test]
    fn tsv_format() {
        let text = "model_id\ta\nm1\t1\n";
        let r = read_response_matrix(text.as_bytes(), MatrixFormat::Tsv).unwrap();
        assert_eq!(r.cells(), &[1]);
    }

    #[test]
    fn prediction_truth_row() {
        let text = "model_id,a,b\nm1,cat,dog\n__truth__,cat,cat\n";
        let p = read_prediction_matrix(text.as_bytes(), MatrixFormat::Csv).unwrap();
        assert_eq!(p.n_models(), 1);
        assert_eq!(p.truth(), &["cat", "cat"]);
        let mut out = Vec::new();
        write_prediction_matrix(&p, &mut out, MatrixFormat::Csv).unwrap();
        assert_eq!(String::from_utf8(out).unwrap(), text);
    }

    #[test]
    fn item_meta_reordered_and_blank_severity() {
        let text = "item_id,class_label,severity\nb,dog,\na,cat,3\n";
        let ids = vec!["a".to_string(), "b".to_string()];
        let meta = read_item_meta(text.as_bytes(), &ids).unwrap();
        assert_eq!(meta[0].class_label, "cat");
        assert_eq!(meta[0].severity, Some(3));
        assert_eq!(meta[1].severity, None);
    }
}
