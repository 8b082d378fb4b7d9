//! Datasets: a dense feature matrix with class or real-valued labels.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    Classification,
    Regression,
}

/// Label column of a dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Labels {
    Classes {
        values: Vec<usize>,
        num_classes: usize,
    },
    Targets(Vec<f64>),
}

impl Labels {
    pub fn len(&self) -> usize {
        match self {
            Labels::Classes { values, .. } => values.len(),
            Labels::Targets(t) => t.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn task(&self) -> Task {
        match self {
            Labels::Classes { .. } => Task::Classification,
            Labels::Targets(_) => Task::Regression,
        }
    }

    pub fn get(&self, i: usize) -> Label {
        match self {
            Labels::Classes { values, .. } => Label::Class(values[i]),
            Labels::Targets(t) => Label::Target(t[i]),
        }
    }

    fn select(&self, idx: &[usize]) -> Labels {
        match self {
            Labels::Classes {
                values,
                num_classes,
            } => Labels::Classes {
                values: idx.iter().map(|&i| values[i]).collect(),
                num_classes: *num_classes,
            },
            Labels::Targets(t) => Labels::Targets(idx.iter().map(|&i| t[i]).collect()),
        }
    }
}

/// A single label.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Label {
    Class(usize),
    Target(f64),
}

/// Row-major `n x d` feature matrix with one label per row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    features: Vec<f64>,
    dim: usize,
    labels: Labels,
}

impl Dataset {
    pub fn new(features: Vec<f64>, dim: usize, labels: Labels) -> Result<Self> {
        if dim == 0 {
            return Err(invalid("feature dimension must be positive"));
        }
        if !features.len().is_multiple_of(dim) {
            return Err(invalid(format!(
                "{} feature values do not form rows of width {dim}",
                features.len()
            )));
        }
        let n = features.len() / dim;
        if n != labels.len() {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: labels.len(),
            });
        }
        if let Labels::Classes {
            values,
            num_classes,
        } = &labels
        {
            if let Some(&bad) = values.iter().find(|&&c| c >= *num_classes) {
                return Err(invalid(format!(
                    "class index {bad} >= number of classes {num_classes}"
                )));
            }
        }
        Ok(Self {
            features,
            dim,
            labels,
        })
    }

    pub fn from_rows(rows: &[Vec<f64>], labels: Labels) -> Result<Self> {
        let dim = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != dim) {
            return Err(invalid("ragged feature rows"));
        }
        Self::new(rows.concat(), dim, labels)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn task(&self) -> Task {
        self.labels.task()
    }

    /// Number of classes, or 1 for regression.
    pub fn num_outputs(&self) -> usize {
        match &self.labels {
            Labels::Classes { num_classes, .. } => *num_classes,
            Labels::Targets(_) => 1,
        }
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.dim..(i + 1) * self.dim]
    }

    pub fn label(&self, i: usize) -> Label {
        self.labels.get(i)
    }

    pub fn labels(&self) -> &Labels {
        &self.labels
    }

    pub fn features(&self) -> &[f64] {
        &self.features
    }

    pub fn rows(&self) -> impl Iterator<Item = (&[f64], Label)> + '_ {
        (0..self.len()).map(move |i| (self.row(i), self.label(i)))
    }

    /// Rows at `idx`, in that order.
    pub fn select(&self, idx: &[usize]) -> Dataset {
        let mut features = Vec::with_capacity(idx.len() * self.dim);
        for &i in idx {
            features.extend_from_slice(self.row(i));
        }
        Dataset {
            features,
            dim: self.dim,
            labels: self.labels.select(idx),
        }
    }

    /// This dataset with one more row appended.
    pub fn with_point(&self, x: &[f64], y: Label) -> Result<Dataset> {
        if x.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                got: x.len(),
            });
        }
        let mut out = self.clone();
        out.features.extend_from_slice(x);
        match (&mut out.labels, y) {
            (
                Labels::Classes {
                    values,
                    num_classes,
                },
                Label::Class(c),
            ) if c < *num_classes => values.push(c),
            (Labels::Targets(t), Label::Target(v)) => t.push(v),
            _ => return Err(invalid("label does not match the dataset's task")),
        }
        Ok(out)
    }

    pub(crate) fn map_features(&self, mut f: impl FnMut(usize, f64) -> f64) -> Dataset {
        let dim = self.dim;
        let features = self
            .features
            .iter()
            .enumerate()
            .map(|(k, &v)| f(k % dim, v))
            .collect();
        Dataset {
            features,
            dim,
            labels: self.labels.clone(),
        }
    }

    pub(crate) fn with_labels(&self, labels: Labels) -> Dataset {
        Dataset {
            features: self.features.clone(),
            dim: self.dim,
            labels,
        }
    }
}
