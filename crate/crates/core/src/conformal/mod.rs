//! Nonconformity scores, prediction sets, and the end-to-end pipelines.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Label, Labels, Task};
use crate::error::{invalid, Error, Result};
use crate::privacy::{
    calibrate_noise_multiplier, calibrate_sigma_q, default_orders, rdp_compose, rdp_to_eps,
    BudgetSpec, RdpProfile,
};
use crate::quantile::{
    buffered_right_search, exact_conformal_quantile, target_rank, QuantileConfig, ScoreSet, TauMode,
};
use crate::rng::{self, Stream};
use crate::training::{dp_sgd_train, EmptyBatchPolicy, ModelSpec, TrainConfig, TrainedModel};

/// Relative tolerance for noise calibration.
const CALIBRATION_TOL: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PredictionSet {
    Labels(Vec<usize>),
    Interval { lo: f64, hi: f64 },
}

impl PredictionSet {
    pub fn contains(&self, y: Label) -> bool {
        match (self, y) {
            (PredictionSet::Labels(s), Label::Class(c)) => s.contains(&c),
            (PredictionSet::Interval { lo, hi }, Label::Target(v)) => *lo <= v && v <= *hi,
            _ => false,
        }
    }

    /// Cardinality, or width for intervals.
    pub fn size(&self) -> f64 {
        match self {
            PredictionSet::Labels(s) => s.len() as f64,
            PredictionSet::Interval { lo, hi } => hi - lo,
        }
    }
}

/// `1 - p_y(x)` for classifiers, `|y - f(x)|` for regressors.
pub fn nonconformity(model: &TrainedModel, x: &[f64], y: Label) -> Result<f64> {
    let out = model.predict(x)?;
    match (model.spec.task(), y) {
        (Task::Classification, Label::Class(c)) => {
            let p = out.get(c).ok_or_else(|| {
                invalid(format!("class {c} out of range for {} classes", out.len()))
            })?;
            Ok(1.0 - p)
        }
        (Task::Regression, Label::Target(v)) => Ok((v - out[0]).abs()),
        _ => Err(invalid("label does not match the model's task")),
    }
}

/// Scores of every row in `data`.
pub fn score_dataset(model: &TrainedModel, data: &Dataset) -> Result<Vec<f64>> {
    data.rows()
        .map(|(x, y)| nonconformity(model, x, y))
        .collect()
}

/// All labels with score `<= q_hat`, or `[f(x) - q_hat, f(x) + q_hat]`.
pub fn build_prediction_set(model: &TrainedModel, x: &[f64], q_hat: f64) -> Result<PredictionSet> {
    let out = model.predict(x)?;
    Ok(match model.spec.task() {
        Task::Classification => {
            PredictionSet::Labels((0..out.len()).filter(|&k| 1.0 - out[k] <= q_hat).collect())
        }
        Task::Regression => PredictionSet::Interval {
            lo: out[0] - q_hat,
            hi: out[0] + q_hat,
        },
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SetMetrics {
    pub coverage: f64,
    /// Mean set size or mean interval width.
    pub efficiency: f64,
    /// Fraction of singleton sets; classification only.
    pub informativeness: Option<f64>,
}

pub fn evaluate(sets: &[PredictionSet], truths: &Labels) -> Result<SetMetrics> {
    if sets.len() != truths.len() {
        return Err(Error::DimensionMismatch {
            expected: truths.len(),
            got: sets.len(),
        });
    }
    if sets.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let n = sets.len() as f64;
    let covered = sets
        .iter()
        .enumerate()
        .filter(|(i, s)| s.contains(truths.get(*i)))
        .count();
    let size: f64 = sets.iter().map(PredictionSet::size).sum();
    let informativeness = match truths.task() {
        Task::Classification => Some(
            sets.iter()
                .filter(|s| matches!(s, PredictionSet::Labels(l) if l.len() == 1))
                .count() as f64
                / n,
        ),
        Task::Regression => None,
    };
    Ok(SetMetrics {
        coverage: covered as f64 / n,
        efficiency: size / n,
        informativeness,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    /// Full-data private pipeline with rank buffer and noise correction.
    DpscpF,
    /// Full-data private pipeline without buffer or correction.
    DpscpA,
    /// Private training and private quantile on disjoint halves.
    DpSplit,
    /// Non-private split conformal.
    SplitCp,
    /// Non-private training and exact quantile on the same data.
    NaiveFull,
}

impl Method {
    pub const ALL: [Method; 5] = [
        Method::DpscpF,
        Method::DpscpA,
        Method::DpSplit,
        Method::SplitCp,
        Method::NaiveFull,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::DpscpF => "dpscp_f",
            Method::DpscpA => "dpscp_a",
            Method::DpSplit => "dp_split",
            Method::SplitCp => "split_cp",
            Method::NaiveFull => "naive_full",
        }
    }

    pub fn is_private(self) -> bool {
        matches!(self, Method::DpscpF | Method::DpscpA | Method::DpSplit)
    }

    fn uses_split(self) -> bool {
        matches!(self, Method::DpSplit | Method::SplitCp)
    }
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| invalid(format!("unknown method {s:?}")))
    }
}

/// How many steps and at which Poisson rate to train.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Batching {
    /// Fixed rate and step count regardless of training size.
    Fixed { sampling_rate: f64, steps: usize },
    /// Expected batch size and number of passes; rate and steps follow from n.
    Epochs { batch_size: usize, epochs: f64 },
}

impl Batching {
    /// `(steps, rate)` for a training set of size `n`.
    pub fn resolve(&self, n: usize) -> (usize, f64) {
        match *self {
            Batching::Fixed {
                sampling_rate,
                steps,
            } => (steps, sampling_rate),
            Batching::Epochs { batch_size, epochs } => {
                TrainConfig::epochs_to_steps(epochs, batch_size, n)
            }
        }
    }
}

/// Training settings shared by all methods; noise and seed are filled in per run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainTemplate {
    pub learning_rate: f64,
    pub batching: Batching,
    pub clip_norm: f64,
    #[serde(default)]
    pub projection_radius: Option<f64>,
    #[serde(default)]
    pub empty_batch_policy: EmptyBatchPolicy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub method: Method,
    pub alpha: f64,
    pub budget: BudgetSpec,
    pub model: ModelSpec,
    pub train: TrainTemplate,
    /// Search settings; `alpha`, `sigma_q`, `buffer_m`, `tau_mode` and `seed`
    /// are set per method.
    pub quantile: QuantileConfig,
    /// Rank buffer of the finite-sample full-data method.
    pub buffer_m: usize,
    /// Noise correction used by the private split baseline.
    pub split_tau: TauMode,
    pub split_fraction: f64,
    /// Factor mapping score units back to the original target scale.
    pub target_scale: f64,
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        self.budget.validate()?;
        self.model.validate()?;
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(invalid(format!(
                "alpha must lie in (0, 1), got {}",
                self.alpha
            )));
        }
        if !(self.split_fraction > 0.0 && self.split_fraction < 1.0) {
            return Err(invalid(format!(
                "split fraction must lie in (0, 1), got {}",
                self.split_fraction
            )));
        }
        if !(self.target_scale > 0.0) {
            return Err(invalid("target scale must be > 0"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub method: Method,
    pub coverage: f64,
    pub efficiency: f64,
    pub informativeness: Option<f64>,
    pub q_hat: f64,
    pub sigma_q: f64,
    pub sigma_sgd: f64,
    /// Training epsilon at the target delta; infinite for non-private training.
    pub eps_train_spent: f64,
    /// Total epsilon of training and search under the method's composition.
    pub eps_total: f64,
    pub trial_seed: u64,
}

/// Random split of `0..n` into `(train, calibration)` index lists.
pub fn split_indices(n: usize, fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut rng::stream(seed, Stream::Split));
    let cut = ((n as f64 * fraction).round() as usize).clamp(1, n.saturating_sub(1).max(1));
    let cal = idx.split_off(cut);
    (idx, cal)
}

fn train(
    data: &Dataset,
    config: &PipelineConfig,
    epsilon: Option<f64>,
    seed: u64,
    orders: &[f64],
) -> Result<TrainedModel> {
    let (steps, sampling_rate) = config.train.batching.resolve(data.len());
    let (noise_multiplier, clip_norm) = match epsilon {
        Some(eps) => (
            calibrate_noise_multiplier(
                sampling_rate,
                steps,
                eps,
                config.budget.delta_target,
                orders,
                CALIBRATION_TOL,
            )?,
            config.train.clip_norm,
        ),
        None => (0.0, f64::INFINITY),
    };
    let tc = TrainConfig {
        learning_rate: config.train.learning_rate,
        steps,
        sampling_rate,
        clip_norm,
        noise_multiplier,
        projection_radius: config.train.projection_radius,
        empty_batch_policy: config.train.empty_batch_policy,
        seed,
    };
    dp_sgd_train(data, &config.model, &tc)
}

fn quantile_config(
    config: &PipelineConfig,
    sigma_q: f64,
    buffer_m: usize,
    tau_mode: TauMode,
    seed: u64,
) -> QuantileConfig {
    QuantileConfig {
        alpha: config.alpha,
        sigma_q,
        buffer_m,
        tau_mode,
        seed,
        ..config.quantile.clone()
    }
}

/// Exact conformal quantile; `+inf` when the rank exceeds the sample.
fn exact_quantile(scores: &ScoreSet, alpha: f64) -> Result<f64> {
    let r = target_rank(scores.len(), alpha)?;
    exact_conformal_quantile(scores, r)
}

/// Runs one method on `pool` (training and calibration data) and evaluates
/// on `test`. Every random choice derives from `seed`.
pub fn run_pipeline(
    pool: &Dataset,
    test: &Dataset,
    config: &PipelineConfig,
    seed: u64,
) -> Result<EvalReport> {
    config.validate()?;
    if pool.is_empty() || test.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if pool.dim() != test.dim() || pool.task() != test.task() {
        return Err(invalid("pool and test sets have different schemas"));
    }
    let orders = default_orders();
    let budget = &config.budget;
    let delta = budget.delta_target;
    let steps = config.quantile.steps;

    let (train_set, cal_set) = if config.method.uses_split() {
        let (tr, cal) = split_indices(pool.len(), config.split_fraction, seed);
        (pool.select(&tr), Some(pool.select(&cal)))
    } else {
        (pool.clone(), None)
    };

    let (model, q_hat, sigma_q, eps_total) = match config.method {
        Method::DpscpF | Method::DpscpA => {
            let model = train(
                &train_set,
                config,
                Some(budget.epsilon_train()),
                seed,
                &orders,
            )?;
            let profile = model.training_profile(&orders)?;
            let sigma_q = calibrate_sigma_q(&profile, steps, budget, CALIBRATION_TOL)?;
            let (m, tau) = if config.method == Method::DpscpF {
                (config.buffer_m, TauMode::Formula)
            } else {
                (0, TauMode::Zero)
            };
            let scores = ScoreSet::new(score_dataset(&model, &train_set)?)?;
            let res =
                buffered_right_search(&scores, &quantile_config(config, sigma_q, m, tau, seed))?;
            let search = RdpProfile::gaussian(&orders, sigma_q, 1.0, steps)?;
            let total = rdp_to_eps(&rdp_compose(&[profile, search])?, delta)?;
            (model, res.q_hat, sigma_q, total)
        }
        Method::DpSplit => {
            let cal_set = cal_set
                .as_ref()
                .expect("split methods have a calibration set");
            let model = train(
                &train_set,
                config,
                Some(budget.epsilon_target),
                seed,
                &orders,
            )?;
            let sigma_q =
                calibrate_sigma_q(&RdpProfile::zeros(&orders)?, steps, budget, CALIBRATION_TOL)?;
            let scores = ScoreSet::new(score_dataset(&model, cal_set)?)?;
            let res = buffered_right_search(
                &scores,
                &quantile_config(config, sigma_q, 0, config.split_tau, seed),
            )?;
            // disjoint halves: parallel composition, the larger spend counts
            let train_eps = rdp_to_eps(&model.training_profile(&orders)?, delta)?;
            let search_eps =
                rdp_to_eps(&RdpProfile::gaussian(&orders, sigma_q, 1.0, steps)?, delta)?;
            (model, res.q_hat, sigma_q, train_eps.max(search_eps))
        }
        Method::SplitCp => {
            let cal_set = cal_set
                .as_ref()
                .expect("split methods have a calibration set");
            let model = train(&train_set, config, None, seed, &orders)?;
            let scores = ScoreSet::new(score_dataset(&model, cal_set)?)?;
            (
                model,
                exact_quantile(&scores, config.alpha)?,
                0.0,
                f64::INFINITY,
            )
        }
        Method::NaiveFull => {
            let model = train(&train_set, config, None, seed, &orders)?;
            let scores = ScoreSet::new(score_dataset(&model, &train_set)?)?;
            (
                model,
                exact_quantile(&scores, config.alpha)?,
                0.0,
                f64::INFINITY,
            )
        }
    };

    if config.method.is_private() && eps_total > budget.epsilon_target * (1.0 + 1e-9) {
        return Err(Error::InfeasibleBudget {
            spent: eps_total,
            target: budget.epsilon_target,
        });
    }

    let sets = test
        .rows()
        .map(|(x, _)| build_prediction_set(&model, x, q_hat))
        .collect::<Result<Vec<_>>>()?;
    let metrics = evaluate(&sets, test.labels())?;
    let scale = match test.task() {
        Task::Regression => config.target_scale,
        Task::Classification => 1.0,
    };
    let eps_train_spent = rdp_to_eps(&model.training_profile(&orders)?, delta)?;
    Ok(EvalReport {
        method: config.method,
        coverage: metrics.coverage,
        efficiency: metrics.efficiency * scale,
        informativeness: metrics.informativeness,
        q_hat,
        sigma_q,
        sigma_sgd: model.accounting[0].noise_multiplier,
        eps_train_spent,
        eps_total,
        trial_seed: seed,
    })
}
