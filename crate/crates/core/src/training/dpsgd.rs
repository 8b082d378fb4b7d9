//! DP-SGD with per-example clipping, Poisson subsampling, Gaussian noise and
//! optional l2-ball projection.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::model::ModelSpec;
use crate::data::{Dataset, Label};
use crate::error::{invalid, Error, Result};
use crate::privacy::{RdpProfile, SgdAccountingRecord};
use crate::rng::{self, Stream};

/// What to do when Poisson sampling returns an empty batch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmptyBatchPolicy {
    /// Leave the parameters unchanged for that step.
    #[default]
    Skip,
    /// Redraw the mask until it is nonempty.
    Resample,
}

const MAX_RESAMPLES: usize = 100_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub steps: usize,
    pub sampling_rate: f64,
    /// Per-example clipping norm; `f64::INFINITY` disables clipping.
    pub clip_norm: f64,
    pub noise_multiplier: f64,
    #[serde(default)]
    pub projection_radius: Option<f64>,
    #[serde(default)]
    pub empty_batch_policy: EmptyBatchPolicy,
    pub seed: u64,
}

impl TrainConfig {
    /// Steps and sampling rate for `epochs` passes at expected batch size
    /// `batch` over `n` records: `q = batch / n`, `T = ceil(epochs * n / batch)`.
    pub fn epochs_to_steps(epochs: f64, batch: usize, n: usize) -> (usize, f64) {
        let q = (batch as f64 / n as f64).min(1.0);
        let steps = (epochs * n as f64 / batch as f64).ceil() as usize;
        (steps, q)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return Err(invalid(format!(
                "learning rate must be > 0, got {}",
                self.learning_rate
            )));
        }
        if !(self.sampling_rate > 0.0 && self.sampling_rate <= 1.0) {
            return Err(invalid(format!(
                "sampling rate must lie in (0, 1], got {}",
                self.sampling_rate
            )));
        }
        if !(self.clip_norm > 0.0) {
            return Err(invalid(format!(
                "clip norm must be > 0, got {}",
                self.clip_norm
            )));
        }
        if !(self.noise_multiplier >= 0.0) || !self.noise_multiplier.is_finite() {
            return Err(invalid(format!(
                "noise multiplier must be >= 0, got {}",
                self.noise_multiplier
            )));
        }
        if self.noise_multiplier > 0.0 && self.clip_norm.is_infinite() {
            return Err(invalid("noise needs a finite clip norm"));
        }
        if let Some(r) = self.projection_radius {
            if !(r > 0.0) {
                return Err(invalid(format!("projection radius must be > 0, got {r}")));
            }
        }
        Ok(())
    }

    pub fn accounting_record(&self) -> SgdAccountingRecord {
        SgdAccountingRecord {
            noise_multiplier: self.noise_multiplier,
            sampling_rate: self.sampling_rate,
            steps: self.steps,
        }
    }
}

/// Parameters of a trained model together with its privacy history.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainedModel {
    pub spec: ModelSpec,
    pub params: Vec<f64>,
    pub accounting: Vec<SgdAccountingRecord>,
    pub seed: u64,
}

impl TrainedModel {
    pub fn predict(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.spec.predict(&self.params, x)
    }

    /// Training RDP. Records with zero noise spend infinite privacy.
    pub fn training_profile(&self, orders: &[f64]) -> Result<RdpProfile> {
        RdpProfile::from_history(orders, &self.accounting)
    }
}

/// Scales `grad` onto the ball of radius `clip_norm` if it lies outside it.
pub fn clip_gradient(grad: &[f64], clip_norm: f64) -> Vec<f64> {
    let mut g = grad.to_vec();
    clip_in_place(&mut g, clip_norm);
    g
}

/// In-place clip; returns the post-clip norm.
pub(crate) fn clip_in_place(grad: &mut [f64], clip_norm: f64) -> f64 {
    let norm = l2_norm(grad);
    if norm > clip_norm {
        let s = clip_norm / norm;
        grad.iter_mut().for_each(|g| *g *= s);
        clip_norm.min(l2_norm(grad))
    } else {
        norm
    }
}

pub(crate) fn l2_norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Poisson subsample of `0..n`: each index kept independently with probability `rate_q`.
pub fn poisson_sample<R: Rng + ?Sized>(n: usize, rate_q: f64, stream: &mut R) -> Vec<usize> {
    let mut out = Vec::with_capacity((n as f64 * rate_q * 1.2) as usize + 1);
    fill_poisson(n, rate_q, stream, &mut out);
    out
}

fn fill_poisson<R: Rng + ?Sized>(n: usize, rate_q: f64, stream: &mut R, out: &mut Vec<usize>) {
    out.clear();
    for i in 0..n {
        if stream.random::<f64>() < rate_q {
            out.push(i);
        }
    }
}

/// Random streams and scratch buffers for one training run.
pub(crate) struct StepContext {
    pub masks: ChaCha8Rng,
    pub noise_rng: ChaCha8Rng,
    pub batch: Vec<usize>,
    pub noise: Vec<f64>,
    pub sum: Vec<f64>,
    pub grad: Vec<f64>,
}

impl StepContext {
    pub fn new(seed: u64, num_params: usize) -> Self {
        Self {
            masks: rng::stream(seed, Stream::SharedMask),
            noise_rng: rng::stream(seed, Stream::GradientNoise),
            batch: Vec::new(),
            noise: vec![0.0; num_params],
            sum: vec![0.0; num_params],
            grad: vec![0.0; num_params],
        }
    }

    /// Draws this step's shared mask and noise vector. Noise is drawn every
    /// step, skipped or not, so streams stay aligned across coupled runs.
    pub fn draw(&mut self, n: usize, config: &TrainConfig, step: usize) -> Result<()> {
        fill_poisson(n, config.sampling_rate, &mut self.masks, &mut self.batch);
        if config.empty_batch_policy == EmptyBatchPolicy::Resample && n > 0 {
            let mut tries = 0;
            while self.batch.is_empty() {
                tries += 1;
                if tries > MAX_RESAMPLES {
                    return Err(Error::NumericFailure {
                        step,
                        detail: "could not draw a nonempty batch".into(),
                    });
                }
                fill_poisson(n, config.sampling_rate, &mut self.masks, &mut self.batch);
            }
        }
        for z in self.noise.iter_mut() {
            *z = self.noise_rng.sample(StandardNormal);
        }
        Ok(())
    }
}

pub(crate) type Audit<'a> = Option<&'a mut dyn FnMut(usize, f64)>;

/// Adds the clipped gradient of one example into `sum`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn add_clipped(
    spec: &ModelSpec,
    params: &[f64],
    x: &[f64],
    y: Label,
    clip: f64,
    grad: &mut [f64],
    sum: &mut [f64],
    step: usize,
    audit: &mut Audit<'_>,
) -> Result<()> {
    let loss = spec.loss_grad_into(params, x, y, grad)?;
    if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
        return Err(Error::NumericFailure {
            step,
            detail: "non-finite loss or gradient".into(),
        });
    }
    let norm = clip_in_place(grad, clip);
    if let Some(a) = audit.as_deref_mut() {
        a(step, norm);
    }
    for (s, g) in sum.iter_mut().zip(grad.iter()) {
        *s += g;
    }
    Ok(())
}

/// `theta <- theta - eta (sum + sigma C G) / m`, then project.
pub(crate) fn apply_update(
    params: &mut [f64],
    sum: &[f64],
    noise: &[f64],
    count: usize,
    config: &TrainConfig,
    step: usize,
) -> Result<()> {
    let m = count as f64;
    let scale = config.noise_multiplier * config.clip_norm;
    for ((p, s), z) in params.iter_mut().zip(sum).zip(noise) {
        let noisy = if config.noise_multiplier > 0.0 {
            s + scale * z
        } else {
            *s
        };
        *p -= config.learning_rate * noisy / m;
    }
    if let Some(r) = config.projection_radius {
        project(params, r);
    }
    if params.iter().any(|p| !p.is_finite()) {
        return Err(Error::NumericFailure {
            step,
            detail: "parameters became non-finite".into(),
        });
    }
    Ok(())
}

/// Radial projection onto the l2 ball of radius `radius`.
pub(crate) fn project(params: &mut [f64], radius: f64) {
    let norm = l2_norm(params);
    if norm > radius {
        let s = radius / norm;
        params.iter_mut().for_each(|p| *p *= s);
    }
}

pub(crate) fn check_inputs(
    dataset: &Dataset,
    spec: &ModelSpec,
    config: &TrainConfig,
) -> Result<()> {
    if dataset.is_empty() {
        return Err(Error::EmptyDataset);
    }
    spec.validate()?;
    config.validate()?;
    if dataset.dim() != spec.input_dim {
        return Err(Error::DimensionMismatch {
            expected: spec.input_dim,
            got: dataset.dim(),
        });
    }
    if dataset.task() != spec.task() {
        return Err(invalid("dataset task does not match the model"));
    }
    Ok(())
}

/// Runs DP-SGD and returns the final parameters with one accounting record.
pub fn dp_sgd_train(
    dataset: &Dataset,
    spec: &ModelSpec,
    config: &TrainConfig,
) -> Result<TrainedModel> {
    train_inner(dataset, spec, config, None)
}

/// [`dp_sgd_train`] that reports `(step, post-clip norm)` for every processed
/// per-example gradient.
pub fn dp_sgd_train_audited(
    dataset: &Dataset,
    spec: &ModelSpec,
    config: &TrainConfig,
    audit: &mut dyn FnMut(usize, f64),
) -> Result<TrainedModel> {
    train_inner(dataset, spec, config, Some(audit))
}

fn train_inner(
    dataset: &Dataset,
    spec: &ModelSpec,
    config: &TrainConfig,
    mut audit: Audit<'_>,
) -> Result<TrainedModel> {
    check_inputs(dataset, spec, config)?;
    let mut params = spec.init_params(config.seed);
    let mut ctx = StepContext::new(config.seed, params.len());
    for step in 0..config.steps {
        ctx.draw(dataset.len(), config, step)?;
        if ctx.batch.is_empty() {
            continue;
        }
        ctx.sum.iter_mut().for_each(|s| *s = 0.0);
        for &i in &ctx.batch {
            add_clipped(
                spec,
                &params,
                dataset.row(i),
                dataset.label(i),
                config.clip_norm,
                &mut ctx.grad,
                &mut ctx.sum,
                step,
                &mut audit,
            )?;
        }
        apply_update(
            &mut params,
            &ctx.sum,
            &ctx.noise,
            ctx.batch.len(),
            config,
            step,
        )?;
    }
    Ok(TrainedModel {
        spec: spec.clone(),
        params,
        accounting: vec![config.accounting_record()],
        seed: config.seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Labels;
    use rand::SeedableRng;

    fn toy_regression(n: usize) -> Dataset {
        let mut r = ChaCha8Rng::seed_from_u64(11);
        let rows: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..3).map(|_| r.random_range(-1.0..1.0)).collect())
            .collect();
        let y = rows
            .iter()
            .map(|x| 2.0 * x[0] - x[1] + 0.5 * x[2])
            .collect();
        Dataset::from_rows(&rows, Labels::Targets(y)).unwrap()
    }

    fn config() -> TrainConfig {
        TrainConfig {
            learning_rate: 0.1,
            steps: 50,
            sampling_rate: 0.2,
            clip_norm: 1.0,
            noise_multiplier: 1.0,
            projection_radius: None,
            empty_batch_policy: EmptyBatchPolicy::Skip,
            seed: 5,
        }
    }

    #[test]
    fn clip_examples() {
        assert_eq!(clip_gradient(&[0.3, 0.4], 1.0), vec![0.3, 0.4]);
        let c = clip_gradient(&[3.0, 4.0], 1.0);
        assert!((c[0] - 0.6).abs() < 1e-15 && (c[1] - 0.8).abs() < 1e-15);
        assert_eq!(clip_gradient(&[0.0, 0.0], 2.0), vec![0.0, 0.0]);
        assert_eq!(clip_gradient(&[3.0, 4.0], f64::INFINITY), vec![3.0, 4.0]);
    }

    #[test]
    fn poisson_edges() {
        let mut r = rng::stream(1, Stream::SharedMask);
        for _ in 0..10 {
            assert!(poisson_sample(100, 0.0, &mut r).is_empty());
            assert_eq!(
                poisson_sample(100, 1.0, &mut r),
                (0..100).collect::<Vec<_>>()
            );
        }
    }

    #[test]
    fn poisson_mean_batch_size() {
        let mut r = rng::stream(2, Stream::SharedMask);
        let draws = 1000;
        let total: usize = (0..draws)
            .map(|_| poisson_sample(10_000, 0.1, &mut r).len())
            .sum();
        let mean = total as f64 / draws as f64;
        // binomial sd of one draw is sqrt(n q (1-q)) = 30
        let se = 30.0 / (draws as f64).sqrt();
        assert!((mean - 1000.0).abs() < 3.0 * se, "mean {mean}");
    }

    #[test]
    fn deterministic_given_seed() {
        let d = toy_regression(80);
        let s = ModelSpec::linear_regression(3);
        let a = dp_sgd_train(&d, &s, &config()).unwrap();
        let b = dp_sgd_train(&d, &s, &config()).unwrap();
        assert_eq!(a.params, b.params);
        assert_eq!(a.accounting, vec![config().accounting_record()]);
        let mut other = config();
        other.seed = 6;
        assert_ne!(dp_sgd_train(&d, &s, &other).unwrap().params, a.params);
    }

    #[test]
    fn projection_keeps_iterates_in_ball() {
        let d = toy_regression(80);
        let s = ModelSpec::linear_regression(3);
        let mut c = config();
        c.projection_radius = Some(0.3);
        c.noise_multiplier = 5.0;
        // the final iterate is the last projected one
        let m = dp_sgd_train(&d, &s, &c).unwrap();
        assert!(l2_norm(&m.params) <= 0.3 + 1e-12);
    }

    #[test]
    fn clipping_audit_sees_bounded_norms() {
        let d = toy_regression(80);
        let s = ModelSpec::linear_regression(3);
        let mut c = config();
        c.clip_norm = 0.05;
        let mut seen = 0usize;
        let mut worst = 0.0f64;
        dp_sgd_train_audited(&d, &s, &c, &mut |_, n| {
            seen += 1;
            worst = worst.max(n);
        })
        .unwrap();
        assert!(seen > 0);
        assert!(worst <= 0.05 + 1e-15);
    }

    #[test]
    fn skip_and_resample_policies() {
        let d = toy_regression(5);
        let s = ModelSpec::linear_regression(3);
        let mut c = config();
        c.sampling_rate = 0.01;
        c.noise_multiplier = 0.0;
        let skipped = dp_sgd_train(&d, &s, &c).unwrap();
        c.empty_batch_policy = EmptyBatchPolicy::Resample;
        let resampled = dp_sgd_train(&d, &s, &c).unwrap();
        // with q = 0.01 and n = 5 most steps are empty and skipped
        assert!(l2_norm(&skipped.params) < l2_norm(&resampled.params));
    }

    #[test]
    fn numeric_failure_names_step() {
        let rows = vec![vec![1e200, 1e200, 1e200]; 4];
        let d = Dataset::from_rows(&rows, Labels::Targets(vec![1e200; 4])).unwrap();
        let s = ModelSpec::linear_regression(3);
        let mut c = config();
        c.sampling_rate = 1.0;
        c.learning_rate = 1e10;
        c.clip_norm = f64::INFINITY;
        c.noise_multiplier = 0.0;
        assert!(matches!(
            dp_sgd_train(&d, &s, &c),
            Err(Error::NumericFailure { .. })
        ));
    }

    #[test]
    fn rejects_bad_config() {
        let d = toy_regression(10);
        let s = ModelSpec::linear_regression(3);
        let mut c = config();
        c.sampling_rate = 0.0;
        assert!(dp_sgd_train(&d, &s, &c).is_err());
        let mut c = config();
        c.clip_norm = 0.0;
        assert!(dp_sgd_train(&d, &s, &c).is_err());
        assert!(dp_sgd_train(&d, &ModelSpec::logistic(3), &config()).is_err());
    }
}
