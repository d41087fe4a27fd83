//! On-disk formats: data CSV, sequence CSV, model and truth JSON.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use vebm::{
    sinkhorn, Dataset, EventSequence, FittedModel, Label, MixtureParams, ModelConfig, ScoreMatrix,
};

use crate::failure::Failure;

pub const DATA_FILE: &str = "data.csv";
pub const TRUTH_FILE: &str = "truth.json";
pub const SPEC_FILE: &str = "simulate.json";
pub const MODEL_FILE: &str = "model.json";
pub const SEQUENCE_FILE: &str = "sequence.csv";
pub const STAGES_FILE: &str = "stages.csv";
pub const METRICS_FILE: &str = "metrics.json";
pub const VARIANCE_FILE: &str = "positional_variance.csv";
pub const BENCHMARK_FILE: &str = "benchmark.csv";

/// A dataset with the row identifiers from its file.
pub struct Table {
    pub ids: Vec<String>,
    pub data: Dataset,
}

fn label_name(l: Label) -> &'static str {
    match l {
        Label::Control => "control",
        Label::Patient => "patient",
        Label::Unlabelled => "unknown",
    }
}

fn parse_label(s: &str) -> Option<Label> {
    match s.trim().to_ascii_lowercase().as_str() {
        "control" => Some(Label::Control),
        "patient" => Some(Label::Patient),
        "unknown" | "" => Some(Label::Unlabelled),
        _ => None,
    }
}

pub fn read_table(path: &Path) -> Result<Table, Failure> {
    let shown = path.display();
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| Failure::io(format!("cannot read {shown}: {e}")))?;
    let headers = rdr
        .headers()
        .map_err(|e| Failure::parse(format!("{shown}: {e}")))?
        .clone();
    for (col, want) in ["id", "label"].into_iter().enumerate() {
        if headers.get(col).map(str::trim) != Some(want) {
            return Err(Failure::parse(format!(
                "{shown}: column {} must be headed '{want}' (required header: id,label,<features...>)",
                col + 1
            )));
        }
    }
    let names: Vec<String> = headers
        .iter()
        .skip(2)
        .map(|h| h.trim().to_string())
        .collect();
    if names.is_empty() {
        return Err(Failure::parse(format!("{shown}: no feature columns")));
    }
    let mut ids = Vec::new();
    let mut labels = Vec::new();
    let mut values = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| Failure::parse(format!("{shown}: {e}")))?;
        let line = rec.position().map_or(0, |p| p.line());
        if rec.len() != names.len() + 2 {
            return Err(Failure::parse(format!(
                "{shown} line {line}: expected {} fields, found {}",
                names.len() + 2,
                rec.len()
            )));
        }
        ids.push(rec[0].trim().to_string());
        labels.push(parse_label(&rec[1]).ok_or_else(|| {
            Failure::parse(format!(
                "{shown} line {line}, column 2: unknown label '{}' (expected control, patient or unknown)",
                &rec[1]
            ))
        })?);
        for (j, cell) in rec.iter().skip(2).enumerate() {
            let cell = cell.trim();
            let v = if cell.is_empty() {
                f64::NAN
            } else {
                cell.parse::<f64>().map_err(|_| {
                    Failure::parse(format!(
                        "{shown} line {line}, column {} ({}): cannot parse '{cell}' as a number",
                        j + 3,
                        names[j]
                    ))
                })?
            };
            if cell.eq_ignore_ascii_case("nan") {
                return Err(Failure::parse(format!(
                    "{shown} line {line}, column {}: write missing values as empty cells",
                    j + 3
                )));
            }
            values.push(v);
        }
    }
    if ids.is_empty() {
        return Err(Failure::parse(format!("{shown}: no data rows")));
    }
    let values = Array2::from_shape_vec((ids.len(), names.len()), values)
        .expect("row lengths checked above");
    let data = Dataset::from_nan_missing(values, labels, names)?;
    Ok(Table { ids, data })
}

pub fn write_table(path: &Path, ids: &[String], d: &Dataset) -> Result<(), Failure> {
    let mut w = csv_writer(path)?;
    let mut header = vec!["id".to_string(), "label".to_string()];
    header.extend(d.feature_names().iter().cloned());
    w.write_record(&header).map_err(|e| io_err(path, e))?;
    for (i, id) in ids.iter().enumerate() {
        let mut row = vec![id.clone(), label_name(d.labels()[i]).to_string()];
        row.extend((0..d.n_features()).map(|j| d.get(i, j).map_or(String::new(), fmt_f64)));
        w.write_record(&row).map_err(|e| io_err(path, e))?;
    }
    w.flush().map_err(|e| io_err(path, e))
}

/// Shortest round-trip text, switching to exponent form for very small or
/// large magnitudes.
pub fn fmt_f64(v: f64) -> String {
    let a = v.abs();
    if a == 0.0 || (1e-5..1e16).contains(&a) || !a.is_finite() {
        v.to_string()
    } else {
        format!("{v:e}")
    }
}

pub fn csv_writer(path: &Path) -> Result<csv::Writer<File>, Failure> {
    csv::Writer::from_path(path)
        .map_err(|e| Failure::io(format!("cannot write {}: {e}", path.display())))
}

pub fn io_err(path: &Path, e: impl std::fmt::Display) -> Failure {
    Failure::io(format!("{}: {e}", path.display()))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), Failure> {
    let f = File::create(path).map_err(|e| io_err(path, e))?;
    let mut w = BufWriter::new(f);
    serde_json::to_writer_pretty(&mut w, value).map_err(|e| io_err(path, e))?;
    writeln!(w).map_err(|e| io_err(path, e))?;
    w.flush().map_err(|e| io_err(path, e))
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, Failure> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Failure::io(format!("cannot read {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| Failure::parse(format!("{}: {e}", path.display())))
}

pub fn out_path(dir: &Path, name: &str) -> PathBuf {
    dir.join(name)
}

#[derive(Debug, Serialize, Deserialize)]
pub struct Truth {
    pub sequence: Vec<usize>,
    pub feature_names: Vec<String>,
    pub stages: Vec<usize>,
    pub patient_means: Vec<f64>,
}

/// Persisted fit. The soft permutation is recomputed from the scores on
/// load, so it is not stored.
#[derive(Debug, Serialize, Deserialize)]
pub struct ModelFile {
    pub feature_names: Vec<String>,
    pub sequence: Vec<usize>,
    pub x_scores: Vec<Vec<f64>>,
    pub mixtures: MixtureParams,
    pub config: ModelConfig,
    pub elbo_trace: Vec<f64>,
}

impl ModelFile {
    pub fn from_fit(fm: &FittedModel, feature_names: &[String]) -> Self {
        Self {
            feature_names: feature_names.to_vec(),
            sequence: fm.sequence.order().to_vec(),
            x_scores: fm.x_scores.outer_iter().map(|r| r.to_vec()).collect(),
            mixtures: fm.mixtures.clone(),
            config: fm.config.clone(),
            elbo_trace: fm.elbo_trace.clone(),
        }
    }

    pub fn into_fit(self, path: &Path) -> Result<FittedModel, Failure> {
        let n = self.sequence.len();
        let bad = |m: String| Failure::parse(format!("{}: {m}", path.display()));
        if self.x_scores.len() != n || self.x_scores.iter().any(|r| r.len() != n) {
            return Err(bad(format!("x_scores must be {n}x{n}")));
        }
        if self.feature_names.len() != n || self.mixtures.len() != n {
            return Err(bad(format!(
                "{} feature names and {} mixtures for {n} events",
                self.feature_names.len(),
                self.mixtures.len()
            )));
        }
        let x = Array2::from_shape_vec((n, n), self.x_scores.concat()).expect("checked");
        let scores = ScoreMatrix::new(x.clone())?;
        let soft_perm = sinkhorn(&scores, self.config.tau, self.config.n_s)?;
        Ok(FittedModel {
            x_scores: x,
            soft_perm,
            sequence: EventSequence::new(self.sequence)?,
            mixtures: self.mixtures,
            elbo_trace: self.elbo_trace,
            config: self.config,
        })
    }
}

/// Writes `position,event,feature` rows.
pub fn write_sequence(path: &Path, seq: &EventSequence, names: &[String]) -> Result<(), Failure> {
    let mut w = csv_writer(path)?;
    w.write_record(["position", "event", "feature"])
        .map_err(|e| io_err(path, e))?;
    for (pos, &e) in seq.order().iter().enumerate() {
        w.write_record([pos.to_string(), e.to_string(), names[e].clone()])
            .map_err(|e| io_err(path, e))?;
    }
    w.flush().map_err(|e| io_err(path, e))
}

/// Reads a sequence from a sequence CSV, or from the `sequence` field of a
/// model or truth JSON.
pub fn read_sequence(path: &Path) -> Result<EventSequence, Failure> {
    let shown = path.display();
    if path
        .extension()
        .is_some_and(|e| e.eq_ignore_ascii_case("json"))
    {
        #[derive(Deserialize)]
        struct HasSequence {
            sequence: Vec<usize>,
        }
        let s: HasSequence = read_json(path)?;
        return Ok(EventSequence::new(s.sequence)?);
    }
    let mut rdr = csv::Reader::from_path(path)
        .map_err(|e| Failure::io(format!("cannot read {shown}: {e}")))?;
    let headers = rdr
        .headers()
        .map_err(|e| Failure::parse(format!("{shown}: {e}")))?
        .clone();
    let col = headers
        .iter()
        .position(|h| h.trim() == "event")
        .ok_or_else(|| Failure::parse(format!("{shown}: missing required header 'event'")))?;
    let mut order = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| Failure::parse(format!("{shown}: {e}")))?;
        let line = rec.position().map_or(0, |p| p.line());
        let cell = rec.get(col).unwrap_or("").trim();
        order.push(cell.parse::<usize>().map_err(|_| {
            Failure::parse(format!(
                "{shown} line {line}, column {}: cannot parse '{cell}' as an event index",
                col + 1
            ))
        })?);
    }
    Ok(EventSequence::new(order)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn labels_round_trip() {
        for l in [Label::Control, Label::Patient, Label::Unlabelled] {
            assert_eq!(parse_label(label_name(l)), Some(l));
        }
        assert_eq!(parse_label(" Patient "), Some(Label::Patient));
        assert_eq!(parse_label("case"), None);
    }

    #[test]
    fn float_text_round_trips() {
        for v in [0.0, 1.5, -2.25e-300, 3.4e-20, 1e17, 0.1 + 0.2] {
            let s = fmt_f64(v);
            assert!(s.len() < 30, "{s}");
            assert_eq!(s.parse::<f64>().unwrap(), v);
        }
    }
}
