//! Results and series tables.
//!
//! Floats are written with Rust's shortest round-trip formatting, so a value
//! read back from the table is bitwise the value that was computed.

use std::fs::File;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};

pub const RESULTS_HEADER: [&str; 14] = [
    "experiment",
    "method",
    "epsilon",
    "n",
    "p",
    "trial",
    "coverage",
    "efficiency",
    "informativeness",
    "q_hat",
    "sigma_q",
    "eps_train",
    "seed",
    "status",
];

pub const SERIES_HEADER: [&str; 5] = ["experiment", "trial", "step", "metric", "value"];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrialTag {
    Index(usize),
    Mean,
    Sd,
}

impl std::fmt::Display for TrialTag {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            TrialTag::Index(i) => write!(f, "{i}"),
            TrialTag::Mean => f.write_str("mean"),
            TrialTag::Sd => f.write_str("sd"),
        }
    }
}

/// One line of the results table. Empty cells are `None`.
#[derive(Debug, Clone, PartialEq)]
pub struct ResultRow {
    pub experiment: String,
    pub method: String,
    pub epsilon: Option<f64>,
    pub n: Option<usize>,
    pub p: Option<f64>,
    pub trial: TrialTag,
    pub coverage: Option<f64>,
    pub efficiency: Option<f64>,
    pub informativeness: Option<f64>,
    pub q_hat: Option<f64>,
    pub sigma_q: Option<f64>,
    pub eps_train: Option<f64>,
    pub seed: Option<u64>,
    pub status: String,
}

impl ResultRow {
    /// A row with only the identifying columns filled.
    pub fn new(experiment: &str, method: &str, trial: TrialTag) -> Self {
        Self {
            experiment: experiment.to_owned(),
            method: method.to_owned(),
            epsilon: None,
            n: None,
            p: None,
            trial,
            coverage: None,
            efficiency: None,
            informativeness: None,
            q_hat: None,
            sigma_q: None,
            eps_train: None,
            seed: None,
            status: "ok".to_owned(),
        }
    }

    pub fn is_ok(&self) -> bool {
        self.status == "ok"
    }

    fn metrics_mut(&mut self) -> [&mut Option<f64>; 6] {
        [
            &mut self.coverage,
            &mut self.efficiency,
            &mut self.informativeness,
            &mut self.q_hat,
            &mut self.sigma_q,
            &mut self.eps_train,
        ]
    }

    fn metrics(&self) -> [Option<f64>; 6] {
        [
            self.coverage,
            self.efficiency,
            self.informativeness,
            self.q_hat,
            self.sigma_q,
            self.eps_train,
        ]
    }

    fn record(&self) -> Vec<String> {
        let f = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        vec![
            self.experiment.clone(),
            self.method.clone(),
            f(self.epsilon),
            self.n.map(|x| x.to_string()).unwrap_or_default(),
            f(self.p),
            self.trial.to_string(),
            f(self.coverage),
            f(self.efficiency),
            f(self.informativeness),
            f(self.q_hat),
            f(self.sigma_q),
            f(self.eps_train),
            self.seed.map(|x| x.to_string()).unwrap_or_default(),
            self.status.clone(),
        ]
    }
}

/// Mean and sample standard deviation over the successful rows of one grid
/// cell, for every metric present in at least one of them. Identifying
/// columns come from the first row.
pub fn aggregate(rows: &[ResultRow]) -> Option<[ResultRow; 2]> {
    let first = rows.first()?;
    let ok: Vec<&ResultRow> = rows.iter().filter(|r| r.is_ok()).collect();
    let status = if ok.len() == rows.len() {
        "ok".to_owned()
    } else {
        format!("partial:{}/{}", ok.len(), rows.len())
    };
    let mut mean = ResultRow {
        trial: TrialTag::Mean,
        seed: None,
        status: status.clone(),
        ..first.clone()
    };
    let mut sd = ResultRow {
        trial: TrialTag::Sd,
        ..mean.clone()
    };
    for (k, (m, s)) in mean
        .metrics_mut()
        .into_iter()
        .zip(sd.metrics_mut())
        .enumerate()
    {
        let vals: Vec<f64> = ok.iter().filter_map(|r| r.metrics()[k]).collect();
        let (mu, sigma) = mean_and_sd(&vals);
        *m = mu;
        *s = sigma;
    }
    Some([mean, sd])
}

/// Mean, and sample standard deviation (`n - 1` denominator) when `n >= 2`
/// and all values are finite.
pub fn mean_and_sd(vals: &[f64]) -> (Option<f64>, Option<f64>) {
    if vals.is_empty() {
        return (None, None);
    }
    let n = vals.len() as f64;
    let mean = vals.iter().sum::<f64>() / n;
    if vals.len() < 2 || vals.iter().any(|v| v.is_infinite()) {
        return (Some(mean), None);
    }
    let var = vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (Some(mean), Some(var.sqrt()))
}

fn csv_err(e: csv::Error) -> Error {
    Error::Io(e.to_string())
}

/// CSV writer that flushes after every row.
pub struct TableWriter<W: Write> {
    inner: csv::Writer<W>,
}

impl TableWriter<File> {
    pub fn create(path: &Path, header: &[&str]) -> Result<Self> {
        Self::new(File::create(path)?, header)
    }
}

impl<W: Write> TableWriter<W> {
    pub fn new(sink: W, header: &[&str]) -> Result<Self> {
        let mut inner = csv::Writer::from_writer(sink);
        inner.write_record(header).map_err(csv_err)?;
        inner.flush()?;
        Ok(Self { inner })
    }

    pub fn write_result(&mut self, row: &ResultRow) -> Result<()> {
        self.inner.write_record(row.record()).map_err(csv_err)?;
        self.inner.flush()?;
        Ok(())
    }

    pub fn write_series(
        &mut self,
        experiment: &str,
        trial: TrialTag,
        step: usize,
        metric: &str,
        value: f64,
    ) -> Result<()> {
        self.inner
            .write_record([
                experiment.to_owned(),
                trial.to_string(),
                step.to_string(),
                metric.to_owned(),
                value.to_string(),
            ])
            .map_err(csv_err)
    }

    pub fn flush(&mut self) -> Result<()> {
        self.inner.flush()?;
        Ok(())
    }

    pub fn into_inner(self) -> Result<W> {
        self.inner
            .into_inner()
            .map_err(|e| Error::Io(e.to_string()))
    }
}
