//! CSV ingestion and feature/target standardization.

use serde::{Deserialize, Serialize};
use std::path::Path;

use crate::data::{Dataset, Labels, Task};
use crate::error::{invalid, Error, Result};

/// Which column holds the label.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum LabelColumn {
    Index(usize),
    Name(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CsvSchema {
    pub label_column: LabelColumn,
    pub task: Task,
    #[serde(default = "yes")]
    pub has_header: bool,
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq)]
pub struct LoadedCsv {
    pub dataset: Dataset,
    /// Rows dropped for a missing or non-finite value.
    pub skipped_rows: usize,
}

enum Cell {
    Value(f64),
    Missing,
}

fn parse_cell(raw: &str) -> std::result::Result<Cell, String> {
    let t = raw.trim();
    if t.is_empty() {
        return Ok(Cell::Missing);
    }
    match t.parse::<f64>() {
        Ok(v) if v.is_finite() => Ok(Cell::Value(v)),
        Ok(_) => Ok(Cell::Missing),
        Err(_) => Err(format!("{t:?} is not a number")),
    }
}

/// Reads a numeric CSV. Rows with an empty or non-finite cell are skipped
/// and counted; any other unparseable cell is an error naming its location.
/// For classification the class count is the largest label plus one.
pub fn load_csv(path: &Path, schema: &CsvSchema) -> Result<LoadedCsv> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(schema.has_header)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    let names: Vec<String> = if schema.has_header {
        reader
            .headers()
            .map_err(|e| Error::Io(e.to_string()))?
            .iter()
            .map(str::to_owned)
            .collect()
    } else {
        Vec::new()
    };
    let label_idx = match &schema.label_column {
        LabelColumn::Index(i) => *i,
        LabelColumn::Name(n) => names
            .iter()
            .position(|h| h == n)
            .ok_or_else(|| invalid(format!("no column named {n:?}")))?,
    };
    let column_name = |j: usize| names.get(j).cloned().unwrap_or_else(|| j.to_string());

    let mut features = Vec::new();
    let mut classes = Vec::new();
    let mut targets = Vec::new();
    let mut width: Option<usize> = None;
    let mut skipped = 0;
    for (i, rec) in reader.records().enumerate() {
        let row = i + 1 + usize::from(schema.has_header);
        let rec = rec.map_err(|e| Error::Parse {
            row,
            column: String::new(),
            detail: e.to_string(),
        })?;
        if label_idx >= rec.len() {
            return Err(Error::Parse {
                row,
                column: column_name(label_idx),
                detail: "label column missing".into(),
            });
        }
        match width {
            None => width = Some(rec.len()),
            Some(w) if w != rec.len() => {
                return Err(Error::Parse {
                    row,
                    column: String::new(),
                    detail: format!("expected {w} fields, found {}", rec.len()),
                })
            }
            _ => {}
        }
        let mut values = Vec::with_capacity(rec.len());
        let mut missing = false;
        for (j, raw) in rec.iter().enumerate() {
            match parse_cell(raw).map_err(|detail| Error::Parse {
                row,
                column: column_name(j),
                detail,
            })? {
                Cell::Value(v) => values.push(v),
                Cell::Missing => missing = true,
            }
        }
        if missing {
            skipped += 1;
            continue;
        }
        let y = values.remove(label_idx);
        match schema.task {
            Task::Classification => {
                if y < 0.0 || y.fract() != 0.0 {
                    return Err(Error::Parse {
                        row,
                        column: column_name(label_idx),
                        detail: format!("class label {y} is not a nonnegative integer"),
                    });
                }
                classes.push(y as usize);
            }
            Task::Regression => targets.push(y),
        }
        features.extend(values);
    }
    let dim = width.map_or(0, |w| w - 1);
    if classes.is_empty() && targets.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let labels = match schema.task {
        Task::Classification => {
            let num_classes = classes.iter().max().map_or(0, |m| m + 1);
            Labels::Classes {
                values: classes,
                num_classes,
            }
        }
        Task::Regression => Labels::Targets(targets),
    };
    Ok(LoadedCsv {
        dataset: Dataset::new(features, dim, labels)?,
        skipped_rows: skipped,
    })
}

/// Per-column affine maps fitted on a training split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StandardizationStats {
    pub feature_mean: Vec<f64>,
    pub feature_sd: Vec<f64>,
    /// Regression only.
    pub target_mean: Option<f64>,
    pub target_sd: Option<f64>,
    /// Columns with zero spread, left at unit scale.
    pub degenerate: Vec<usize>,
}

fn mean_sd(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

pub fn fit_standardizer(train: &Dataset) -> Result<StandardizationStats> {
    if train.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let d = train.dim();
    let mut feature_mean = Vec::with_capacity(d);
    let mut feature_sd = Vec::with_capacity(d);
    let mut degenerate = Vec::new();
    for j in 0..d {
        let col: Vec<f64> = train.rows().map(|(x, _)| x[j]).collect();
        let (m, s) = mean_sd(&col);
        feature_mean.push(m);
        if s > 1e-12 * m.abs().max(1.0) {
            feature_sd.push(s);
        } else {
            feature_sd.push(1.0);
            degenerate.push(j);
        }
    }
    let (target_mean, target_sd) = match train.labels() {
        Labels::Targets(t) => {
            let (m, s) = mean_sd(t);
            (
                Some(m),
                Some(if s > 1e-12 * m.abs().max(1.0) { s } else { 1.0 }),
            )
        }
        Labels::Classes { .. } => (None, None),
    };
    Ok(StandardizationStats {
        feature_mean,
        feature_sd,
        target_mean,
        target_sd,
        degenerate,
    })
}

impl StandardizationStats {
    /// Standardizes features, and targets for regression data.
    pub fn apply(&self, data: &Dataset) -> Result<Dataset> {
        if data.dim() != self.feature_mean.len() {
            return Err(Error::DimensionMismatch {
                expected: self.feature_mean.len(),
                got: data.dim(),
            });
        }
        let out = data.map_features(|j, v| (v - self.feature_mean[j]) / self.feature_sd[j]);
        Ok(match (data.labels(), self.target_mean, self.target_sd) {
            (Labels::Targets(t), Some(m), Some(s)) => {
                out.with_labels(Labels::Targets(t.iter().map(|y| (y - m) / s).collect()))
            }
            _ => out,
        })
    }

    /// Maps a standardized target back to the original scale.
    pub fn inverse_target(&self, y: f64) -> f64 {
        match (self.target_mean, self.target_sd) {
            (Some(m), Some(s)) => y * s + m,
            _ => y,
        }
    }

    /// Factor converting standardized target distances to original units.
    pub fn target_scale(&self) -> f64 {
        self.target_sd.unwrap_or(1.0)
    }
}
