//! Private threshold release over a set of nonconformity scores.
//!
//! [`buffered_right_search`] is the conservative noisy bisection: it compares
//! each noisy count against an inflated rank `r' = r + m + tau` and returns
//! the right endpoint. [`midpoint_search`] is the classical noisy-midpoint
//! baseline, kept to demonstrate how a single false positive breaks it.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;

use crate::error::{invalid, Error, Result};
use crate::normal;
use crate::rng::{self, Stream};

/// A nonempty set of finite scores with a sorted copy for order statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreSet {
    sorted: Vec<f64>,
}

impl ScoreSet {
    pub fn new(scores: Vec<f64>) -> Result<Self> {
        if scores.is_empty() {
            return Err(Error::EmptyDataset);
        }
        if let Some(i) = scores.iter().position(|s| !s.is_finite()) {
            return Err(invalid(format!("score {i} is not finite")));
        }
        let mut sorted = scores;
        sorted.sort_by(f64::total_cmp);
        Ok(Self { sorted })
    }

    pub fn len(&self) -> usize {
        self.sorted.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sorted.is_empty()
    }

    pub fn sorted(&self) -> &[f64] {
        &self.sorted
    }

    pub fn max(&self) -> f64 {
        self.sorted[self.sorted.len() - 1]
    }

    pub fn min(&self) -> f64 {
        self.sorted[0]
    }

    /// `rank`-th smallest score, 1-based.
    pub fn order_statistic(&self, rank: usize) -> Result<f64> {
        if rank == 0 || rank > self.len() {
            return Err(Error::RankOutOfRange {
                rank,
                n: self.len(),
            });
        }
        Ok(self.sorted[rank - 1])
    }
}

/// Number of scores `<= t`.
pub fn empirical_count(scores: &ScoreSet, t: f64) -> usize {
    scores.sorted.partition_point(|&s| s <= t)
}

/// `ceil((1 - alpha)(n + 1))`. A relative slack of `1e-9` absorbs rounding in
/// the product so that e.g. `0.8 * 15` gives 12 and not 13.
pub fn target_rank(n: usize, alpha: f64) -> Result<usize> {
    if n == 0 {
        return Err(Error::EmptyDataset);
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(invalid(format!("alpha must lie in (0, 1), got {alpha}")));
    }
    let x = (1.0 - alpha) * (n as f64 + 1.0);
    let r = (x - 1e-9 * x.max(1.0)).ceil() as usize;
    Ok(r.clamp(1, n + 1))
}

/// `sigma * Phi^{-1}(1 - beta / steps) - 1`.
pub fn noise_correction_tau(sigma_q: f64, beta: f64, steps: usize) -> Result<f64> {
    if !(sigma_q >= 0.0) || !sigma_q.is_finite() {
        return Err(invalid(format!(
            "sigma_q must be finite and >= 0, got {sigma_q}"
        )));
    }
    if steps == 0 {
        return Err(invalid("search needs at least one step"));
    }
    let tail = beta / steps as f64;
    if !(tail > 0.0 && tail < 1.0) {
        return Err(invalid(format!(
            "beta / steps must lie in (0, 1), got {tail}"
        )));
    }
    if sigma_q == 0.0 {
        return Ok(-1.0);
    }
    Ok(sigma_q * normal::inv_cdf(1.0 - tail) - 1.0)
}

/// Rank buffer `ceil(n fbar L u / delta)` that absorbs the score shift between
/// a model trained on `n` and on `n + 1` points.
pub fn stability_buffer(
    n: usize,
    density_bound: f64,
    lipschitz: f64,
    shift: f64,
    slack: f64,
) -> Result<usize> {
    if !(slack > 0.0) {
        return Err(invalid(format!("slack must be > 0, got {slack}")));
    }
    if !(density_bound >= 0.0 && lipschitz >= 0.0 && shift >= 0.0) {
        return Err(invalid("buffer inputs must be >= 0"));
    }
    let v = n as f64 * density_bound * lipschitz * shift / slack;
    if !v.is_finite() {
        return Err(invalid("stability buffer is not finite"));
    }
    Ok(v.ceil() as usize)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SearchVariant {
    #[default]
    BufferedRight,
    Midpoint,
    Exact,
}

/// Whether the threshold includes the noise correction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TauMode {
    /// `tau = sigma Phi^{-1}(1 - beta/N) - 1`.
    #[default]
    Formula,
    /// `tau = 0`; noise is still added to the counts.
    Zero,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantileConfig {
    pub range_lo: f64,
    pub range_hi: f64,
    pub alpha: f64,
    pub steps: usize,
    pub sigma_q: f64,
    pub beta: f64,
    pub buffer_m: usize,
    #[serde(default)]
    pub tau_mode: TauMode,
    #[serde(default)]
    pub variant: SearchVariant,
    /// Midpoint baseline only. When set, the step count becomes
    /// `ceil(log2((hi - lo) / precision))`; otherwise `(hi - lo) / 2^steps`.
    #[serde(default)]
    pub precision: Option<f64>,
    pub seed: u64,
}

impl Default for QuantileConfig {
    fn default() -> Self {
        Self {
            range_lo: 0.0,
            range_hi: 1.0,
            alpha: 0.1,
            steps: 20,
            sigma_q: 0.0,
            beta: 0.05,
            buffer_m: 0,
            tau_mode: TauMode::Formula,
            variant: SearchVariant::BufferedRight,
            precision: None,
            seed: 0,
        }
    }
}

impl QuantileConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.range_lo.is_finite()
            && self.range_hi.is_finite()
            && self.range_lo < self.range_hi)
        {
            return Err(invalid(format!(
                "score range must satisfy lo < hi, got [{}, {}]",
                self.range_lo, self.range_hi
            )));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(invalid(format!(
                "alpha must lie in (0, 1), got {}",
                self.alpha
            )));
        }
        if !(self.beta > 0.0 && self.beta < 1.0) {
            return Err(invalid(format!(
                "beta must lie in (0, 1), got {}",
                self.beta
            )));
        }
        if !(self.sigma_q >= 0.0) || !self.sigma_q.is_finite() {
            return Err(invalid(format!(
                "sigma_q must be finite and >= 0, got {}",
                self.sigma_q
            )));
        }
        if self.variant != SearchVariant::Exact && self.steps == 0 && self.precision.is_none() {
            return Err(invalid("search needs at least one step"));
        }
        if let Some(p) = self.precision {
            if !(p > 0.0) {
                return Err(invalid(format!("precision must be > 0, got {p}")));
            }
        }
        Ok(())
    }

    /// `tau` under the configured mode.
    pub fn tau(&self) -> Result<f64> {
        match self.tau_mode {
            TauMode::Zero => Ok(0.0),
            TauMode::Formula => noise_correction_tau(self.sigma_q, self.beta, self.steps),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Branch {
    /// The left endpoint moved up.
    Left,
    /// The right endpoint moved down.
    Right,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceStep {
    pub mid: f64,
    pub count: usize,
    pub noisy_count: f64,
    pub branch: Branch,
    pub left: f64,
    pub right: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantileResult {
    pub q_hat: f64,
    pub rank_target: usize,
    /// Comparison threshold `r'` (`r` for the baseline).
    pub threshold: f64,
    /// Endpoints after each step.
    pub trace: Vec<TraceStep>,
    pub warnings: Vec<String>,
}

impl QuantileResult {
    /// `step,mid,count,noisy_count,branch,left,right` table.
    pub fn trace_table(&self) -> String {
        let mut out = String::from("step,mid,count,noisy_count,branch,left,right\n");
        for (i, s) in self.trace.iter().enumerate() {
            let b = match s.branch {
                Branch::Left => "left",
                Branch::Right => "right",
            };
            let _ = writeln!(
                out,
                "{i},{},{},{},{b},{},{}",
                s.mid, s.count, s.noisy_count, s.left, s.right
            );
        }
        out
    }
}

/// Source of the additive noise on each count query.
pub trait NoiseSource {
    fn sample(&mut self, step: usize, mid: f64) -> f64;
}

impl<F: FnMut(usize, f64) -> f64> NoiseSource for F {
    fn sample(&mut self, step: usize, mid: f64) -> f64 {
        self(step, mid)
    }
}

/// `N(0, sigma^2)` draws from a seeded stream.
pub struct GaussianNoise {
    rng: ChaCha8Rng,
    sigma: f64,
}

impl GaussianNoise {
    pub fn new(seed: u64, sigma: f64) -> Self {
        Self {
            rng: rng::stream(seed, Stream::QuantileNoise),
            sigma,
        }
    }
}

impl NoiseSource for GaussianNoise {
    fn sample(&mut self, _step: usize, _mid: f64) -> f64 {
        let z: f64 = self.rng.sample(StandardNormal);
        self.sigma * z
    }
}

fn range_warnings(scores: &ScoreSet, config: &QuantileConfig) -> Vec<String> {
    let mut w = Vec::new();
    if config.range_hi < scores.max() {
        w.push(format!(
            "range upper end {} is below the largest score {}",
            config.range_hi,
            scores.max()
        ));
    }
    if config.range_lo > scores.min() {
        w.push(format!(
            "range lower end {} is above the smallest score {}",
            config.range_lo,
            scores.min()
        ));
    }
    w
}

/// Buffered noisy right-endpoint bisection with Gaussian noise from `config.seed`.
pub fn buffered_right_search(scores: &ScoreSet, config: &QuantileConfig) -> Result<QuantileResult> {
    let mut noise = GaussianNoise::new(config.seed, config.sigma_q);
    buffered_right_search_with_noise(scores, config, &mut noise)
}

/// [`buffered_right_search`] with caller-supplied noise.
pub fn buffered_right_search_with_noise(
    scores: &ScoreSet,
    config: &QuantileConfig,
    noise: &mut dyn NoiseSource,
) -> Result<QuantileResult> {
    config.validate()?;
    let n = scores.len();
    let r = target_rank(n, config.alpha)?;
    if r + config.buffer_m > n {
        return Err(Error::RankOverflow {
            needed: r + config.buffer_m,
            available: n,
        });
    }
    let threshold = (r + config.buffer_m) as f64 + config.tau()?;
    let mut warnings = range_warnings(scores, config);
    if threshold > n as f64 {
        warnings.push(format!(
            "threshold {threshold} exceeds n = {n}; only noise can reach it"
        ));
    }
    let (mut left, mut right) = (config.range_lo, config.range_hi);
    let mut trace = Vec::with_capacity(config.steps);
    for step in 0..config.steps {
        let mid = 0.5 * (left + right);
        let count = empirical_count(scores, mid);
        let noisy_count = count as f64 + noise.sample(step, mid);
        let branch = if noisy_count >= threshold {
            right = mid;
            Branch::Right
        } else {
            left = mid;
            Branch::Left
        };
        trace.push(TraceStep {
            mid,
            count,
            noisy_count,
            branch,
            left,
            right,
        });
    }
    Ok(QuantileResult {
        q_hat: right,
        rank_target: r,
        threshold,
        trace,
        warnings,
    })
}

/// Noisy-midpoint baseline with Gaussian noise from `config.seed`.
pub fn midpoint_search(scores: &ScoreSet, config: &QuantileConfig) -> Result<QuantileResult> {
    let mut noise = GaussianNoise::new(config.seed, config.sigma_q);
    midpoint_search_with_noise(scores, config, &mut noise)
}

/// Noisy-midpoint baseline: `left <- mid + delta` when the noisy count is
/// below `r`, else `right <- mid`; returns `(left + right) / 2`. The loop
/// runs for `i = 0..=N`, i.e. `N + 1` queries.
pub fn midpoint_search_with_noise(
    scores: &ScoreSet,
    config: &QuantileConfig,
    noise: &mut dyn NoiseSource,
) -> Result<QuantileResult> {
    config.validate()?;
    let n = scores.len();
    let r = target_rank(n, config.alpha)?;
    let width = config.range_hi - config.range_lo;
    let (steps, delta) = match config.precision {
        Some(p) => (((width / p).log2().ceil()).max(0.0) as usize, p),
        None => (config.steps, width / 2f64.powi(config.steps as i32)),
    };
    let (mut left, mut right) = (config.range_lo, config.range_hi);
    let mut trace = Vec::with_capacity(steps + 1);
    for step in 0..=steps {
        let mid = 0.5 * (left + right);
        let count = empirical_count(scores, mid);
        let noisy_count = count as f64 + noise.sample(step, mid);
        let branch = if noisy_count < r as f64 {
            left = mid + delta;
            Branch::Left
        } else {
            right = mid;
            Branch::Right
        };
        trace.push(TraceStep {
            mid,
            count,
            noisy_count,
            branch,
            left,
            right,
        });
    }
    let q_hat = (0.5 * (left + right)).clamp(config.range_lo, config.range_hi);
    Ok(QuantileResult {
        q_hat,
        rank_target: r,
        threshold: r as f64,
        trace,
        warnings: range_warnings(scores, config),
    })
}

/// `rank`-th smallest score; `rank = n + 1` gives `+inf` (the full set).
pub fn exact_conformal_quantile(scores: &ScoreSet, rank: usize) -> Result<f64> {
    if rank == scores.len() + 1 {
        return Ok(f64::INFINITY);
    }
    scores.order_statistic(rank)
}

/// Dispatches on `config.variant`.
pub fn release_quantile(scores: &ScoreSet, config: &QuantileConfig) -> Result<QuantileResult> {
    match config.variant {
        SearchVariant::BufferedRight => buffered_right_search(scores, config),
        SearchVariant::Midpoint => midpoint_search(scores, config),
        SearchVariant::Exact => {
            config.validate()?;
            let r = target_rank(scores.len(), config.alpha)?;
            Ok(QuantileResult {
                q_hat: exact_conformal_quantile(scores, r)?,
                rank_target: r,
                threshold: r as f64,
                trace: Vec::new(),
                warnings: Vec::new(),
            })
        }
    }
}
