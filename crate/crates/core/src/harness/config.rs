//! Experiment configuration, read from JSON.
//!
//! Every field has a default, so `{"experiment": "scaling"}` is a complete
//! config. Defaults are the quick desk-scale profile; [`ExperimentConfig::paper_scale`]
//! switches to the full protocol.

use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

use super::dataio::CsvSchema;
use crate::conformal::{Batching, Method, TrainTemplate};
use crate::data::Task;
use crate::error::{invalid, Error, Result};
use crate::quantile::TauMode;
use crate::training::{EmptyBatchPolicy, ExtraInclusion, ModelKind, ModelSpec};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    #[serde(flatten)]
    pub kind: ExperimentKind,
    #[serde(default = "default_trials")]
    pub trials: usize,
    /// Trial `t` uses seed `seed + t`.
    #[serde(default)]
    pub seed: u64,
    /// Worker threads; defaults to the available parallelism.
    #[serde(default)]
    pub jobs: Option<usize>,
}

fn default_trials() -> usize {
    10
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "experiment", rename_all = "snake_case")]
pub enum ExperimentKind {
    Stability(StabilityConfig),
    Scaling(ScalingConfig),
    QuantileDemo(QuantileDemoConfig),
    Realdata(RealdataConfig),
}

impl ExperimentKind {
    pub fn name(&self) -> &'static str {
        match self {
            ExperimentKind::Stability(_) => "stability",
            ExperimentKind::Scaling(_) => "scaling",
            ExperimentKind::QuantileDemo(_) => "quantile_demo",
            ExperimentKind::Realdata(_) => "realdata",
        }
    }
}

impl ExperimentConfig {
    pub fn new(kind: ExperimentKind) -> Self {
        Self {
            kind,
            trials: default_trials(),
            seed: 0,
            jobs: None,
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let c: Self =
            serde_json::from_str(text).map_err(|e| invalid(format!("bad config: {e}")))?;
        c.validate()?;
        Ok(c)
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// The full protocol: 30 trials, and for the scaling sweep n from 10000
    /// to 30000 at three privacy levels.
    pub fn paper_scale(mut self) -> Self {
        self.trials = 30;
        if let ExperimentKind::Scaling(s) = &mut self.kind {
            s.ns = vec![10_000, 15_000, 20_000, 25_000, 30_000];
            s.epsilons = vec![0.5, 1.0, 2.0];
        }
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.trials == 0 {
            return Err(invalid("trials must be >= 1"));
        }
        if self.jobs == Some(0) {
            return Err(invalid("jobs must be >= 1"));
        }
        let nonempty = |ok: bool, what: &str| {
            if ok {
                Ok(())
            } else {
                Err(invalid(format!("{what} must be nonempty")))
            }
        };
        match &self.kind {
            ExperimentKind::Stability(s) => {
                nonempty(!s.epsilons.is_empty(), "epsilons")?;
                if s.n == 0 || s.d == 0 {
                    return Err(invalid("n and d must be >= 1"));
                }
            }
            ExperimentKind::Scaling(s) => {
                nonempty(!s.ns.is_empty(), "ns")?;
                nonempty(!s.epsilons.is_empty(), "epsilons")?;
                nonempty(!s.methods.is_empty(), "methods")?;
                nonempty(!s.settings.ps.is_empty(), "ps")?;
            }
            ExperimentKind::Realdata(r) => {
                nonempty(!r.epsilons.is_empty(), "epsilons")?;
                nonempty(!r.methods.is_empty(), "methods")?;
                nonempty(!r.settings.ps.is_empty(), "ps")?;
                if !(r.test_fraction > 0.0 && r.test_fraction < 1.0) {
                    return Err(invalid("test_fraction must lie in (0, 1)"));
                }
            }
            ExperimentKind::QuantileDemo(_) => {}
        }
        Ok(())
    }
}

/// Coupled-training study on logistic data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StabilityConfig {
    pub n: usize,
    pub d: usize,
    pub sampling_rate: f64,
    pub steps: usize,
    pub learning_rate: f64,
    pub clip_norm: f64,
    pub projection_radius: Option<f64>,
    pub epsilons: Vec<f64>,
    pub delta: f64,
    pub extra_inclusion: ExtraInclusion,
    pub empty_batch_policy: EmptyBatchPolicy,
}

impl Default for StabilityConfig {
    fn default() -> Self {
        Self {
            n: 1000,
            d: 10,
            sampling_rate: 0.02,
            steps: 100,
            learning_rate: 0.1,
            clip_norm: 1.0,
            projection_radius: Some(1.0),
            epsilons: vec![0.5, 1.0, 2.0],
            delta: 1e-5,
            extra_inclusion: ExtraInclusion::Bernoulli,
            empty_batch_policy: EmptyBatchPolicy::Skip,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelChoice {
    pub kind: ModelKind,
    #[serde(default)]
    pub hidden: Vec<usize>,
}

impl ModelChoice {
    pub fn spec(&self, input_dim: usize, outputs: usize) -> ModelSpec {
        ModelSpec {
            kind: self.kind,
            input_dim,
            output_dim: outputs,
            hidden: self.hidden.clone(),
        }
    }
}

/// Settings shared by the sweeps that run the conformal pipelines.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineSettings {
    pub alpha: f64,
    pub delta: f64,
    /// Training shares of epsilon for the full-data methods.
    pub ps: Vec<f64>,
    pub model: ModelChoice,
    pub train: TrainTemplate,
    pub quantile_steps: usize,
    pub beta: f64,
    pub buffer_m: usize,
    pub split_fraction: f64,
    pub split_tau: TauMode,
    /// Upper end of the score range for regression, in standardized units.
    pub regression_score_max: f64,
}

impl Default for PipelineSettings {
    fn default() -> Self {
        Self {
            alpha: 0.1,
            delta: 1e-5,
            ps: vec![0.5],
            model: ModelChoice {
                kind: ModelKind::Mlp,
                hidden: vec![16, 16],
            },
            train: TrainTemplate {
                learning_rate: 0.01,
                batching: Batching::Epochs {
                    batch_size: 32,
                    epochs: 50.0,
                },
                clip_norm: 1.0,
                projection_radius: None,
                empty_batch_policy: EmptyBatchPolicy::Skip,
            },
            quantile_steps: 20,
            beta: 0.05,
            buffer_m: 10,
            split_fraction: 0.5,
            split_tau: TauMode::Formula,
            regression_score_max: 10.0,
        }
    }
}

impl PipelineSettings {
    pub fn score_range(&self, task: Task) -> (f64, f64) {
        match task {
            Task::Classification => (0.0, 1.0),
            Task::Regression => (0.0, self.regression_score_max),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MulticlassGenerator {
    pub d: usize,
    pub classes: usize,
    pub class_sep: f64,
    pub flip_y: f64,
}

impl Default for MulticlassGenerator {
    fn default() -> Self {
        Self {
            d: 10,
            classes: 5,
            class_sep: 0.6,
            flip_y: 0.01,
        }
    }
}

/// Sweep over sample size and privacy level on synthetic multiclass data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScalingConfig {
    pub generator: MulticlassGenerator,
    pub ns: Vec<usize>,
    pub epsilons: Vec<f64>,
    pub methods: Vec<Method>,
    pub test_size: usize,
    #[serde(flatten)]
    pub settings: PipelineSettings,
}

impl Default for ScalingConfig {
    fn default() -> Self {
        Self {
            generator: MulticlassGenerator::default(),
            ns: vec![2500, 5000, 8000],
            epsilons: vec![0.5, 1.0, 2.0],
            methods: vec![Method::DpscpF, Method::DpscpA, Method::DpSplit],
            test_size: 2000,
            settings: PipelineSettings::default(),
        }
    }
}

/// Pipelines on a user-supplied CSV, with random test splits per trial.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RealdataConfig {
    pub csv: PathBuf,
    pub schema: CsvSchema,
    #[serde(default = "default_test_fraction")]
    pub test_fraction: f64,
    #[serde(default = "default_methods")]
    pub methods: Vec<Method>,
    #[serde(default = "default_epsilons")]
    pub epsilons: Vec<f64>,
    #[serde(flatten)]
    pub settings: PipelineSettings,
}

fn default_test_fraction() -> f64 {
    0.2
}

fn default_methods() -> Vec<Method> {
    Method::ALL.to_vec()
}

fn default_epsilons() -> Vec<f64> {
    vec![0.5, 1.0, 2.0]
}

/// Failure-mode demonstration of the noisy-midpoint baseline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct QuantileDemoConfig {
    /// Noise scale for the buffered search on the tie-jump example.
    pub sigma_tie_jump: f64,
    /// Noise scale for the buffered search on the distinct-score example.
    pub sigma_distinct: f64,
    /// Noise scale for the randomized trials.
    pub sigma_random: f64,
    pub steps: usize,
    pub beta: f64,
    pub midpoint_precision: f64,
}

impl Default for QuantileDemoConfig {
    fn default() -> Self {
        Self {
            sigma_tie_jump: 1.0,
            sigma_distinct: 0.5,
            sigma_random: 1.0,
            steps: 20,
            beta: 0.05,
            midpoint_precision: 0.01,
        }
    }
}
