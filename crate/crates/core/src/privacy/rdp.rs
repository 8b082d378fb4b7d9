//! Rényi DP accounting for Gaussian and Poisson-subsampled Gaussian mechanisms.

use serde::{Deserialize, Serialize};
use std::fmt::Write as _;

use crate::error::{invalid, Error, Result};

/// One DP-SGD run as the accountant sees it: `steps` applications of the
/// subsampled Gaussian mechanism at noise multiplier `noise_multiplier` and
/// Poisson rate `sampling_rate`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SgdAccountingRecord {
    pub noise_multiplier: f64,
    pub sampling_rate: f64,
    pub steps: usize,
}

impl SgdAccountingRecord {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.sampling_rate) {
            return Err(invalid(format!(
                "sampling rate must lie in [0, 1], got {}",
                self.sampling_rate
            )));
        }
        if !(self.noise_multiplier >= 0.0) {
            return Err(invalid(format!(
                "noise multiplier must be >= 0, got {}",
                self.noise_multiplier
            )));
        }
        Ok(())
    }
}

/// Global (epsilon, delta) target and the fraction `allocation_p` of epsilon
/// given to training in the full-data pipelines.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BudgetSpec {
    pub epsilon_target: f64,
    pub delta_target: f64,
    pub allocation_p: f64,
}

impl BudgetSpec {
    pub fn new(epsilon_target: f64, delta_target: f64, allocation_p: f64) -> Result<Self> {
        let b = Self {
            epsilon_target,
            delta_target,
            allocation_p,
        };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon_target > 0.0) || !self.epsilon_target.is_finite() {
            return Err(invalid(format!(
                "epsilon target must be > 0, got {}",
                self.epsilon_target
            )));
        }
        if !(self.delta_target > 0.0 && self.delta_target < 1.0) {
            return Err(invalid(format!(
                "delta target must lie in (0, 1), got {}",
                self.delta_target
            )));
        }
        if !(self.allocation_p > 0.0 && self.allocation_p < 1.0) {
            return Err(invalid(format!(
                "allocation p must lie in (0, 1), got {}",
                self.allocation_p
            )));
        }
        Ok(())
    }

    /// Training share `p * epsilon`.
    pub fn epsilon_train(&self) -> f64 {
        self.allocation_p * self.epsilon_target
    }
}

/// Integer orders 2..=64 plus 128 and 256.
pub fn default_orders() -> Vec<f64> {
    (2..=64).map(f64::from).chain([128.0, 256.0]).collect()
}

/// RDP curve sampled on a strictly increasing grid of orders > 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RdpProfile {
    orders: Vec<f64>,
    values: Vec<f64>,
}

impl RdpProfile {
    pub fn new(orders: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        if orders.is_empty() {
            return Err(invalid("RDP profile needs at least one order"));
        }
        if orders.len() != values.len() {
            return Err(Error::DimensionMismatch {
                expected: orders.len(),
                got: values.len(),
            });
        }
        for w in orders.windows(2) {
            if !(w[1] > w[0]) {
                return Err(invalid("RDP orders must be strictly increasing"));
            }
        }
        if orders.iter().any(|&a| !(a > 1.0) || !a.is_finite()) {
            return Err(invalid("RDP orders must be finite and > 1"));
        }
        if values.iter().any(|&v| !(v >= 0.0)) {
            return Err(invalid("RDP values must be >= 0"));
        }
        Ok(Self { orders, values })
    }

    pub fn zeros(orders: &[f64]) -> Result<Self> {
        Self::new(orders.to_vec(), vec![0.0; orders.len()])
    }

    /// `count` sequential Gaussian queries with the given noise and sensitivity.
    pub fn gaussian(orders: &[f64], sigma: f64, sensitivity: f64, count: usize) -> Result<Self> {
        let values = orders
            .iter()
            .map(|&a| rdp_gaussian(a, sigma, sensitivity).map(|v| v * count as f64))
            .collect::<Result<Vec<_>>>()?;
        Self::new(orders.to_vec(), values)
    }

    /// Training RDP reconstructed from a DP-SGD history. A record without
    /// noise that touches data spends infinite privacy.
    pub fn from_history(orders: &[f64], history: &[SgdAccountingRecord]) -> Result<Self> {
        let mut values = vec![0.0; orders.len()];
        for rec in history {
            rec.validate()?;
            if rec.steps == 0 || rec.sampling_rate == 0.0 {
                continue;
            }
            if rec.noise_multiplier == 0.0 {
                values.iter_mut().for_each(|v| *v = f64::INFINITY);
                continue;
            }
            for (v, &a) in values.iter_mut().zip(orders) {
                *v += rec.steps as f64
                    * rdp_subsampled_gaussian(a, rec.noise_multiplier, rec.sampling_rate)?;
            }
        }
        Self::new(orders.to_vec(), values)
    }

    pub fn orders(&self) -> &[f64] {
        &self.orders
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn scaled(&self, factor: f64) -> Result<Self> {
        Self::new(
            self.orders.clone(),
            self.values.iter().map(|v| v * factor).collect(),
        )
    }

    /// Epsilon at the given delta under the classical conversion.
    pub fn epsilon(&self, delta: f64) -> Result<f64> {
        rdp_to_eps(self, delta)
    }

    /// Two-column `order,value` table.
    pub fn to_table(&self) -> String {
        let mut out = String::from("order,value\n");
        for (a, v) in self.orders.iter().zip(&self.values) {
            let _ = writeln!(out, "{a},{v}");
        }
        out
    }

    pub fn from_table(text: &str) -> Result<Self> {
        let mut orders = Vec::new();
        let mut values = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || (i == 0 && line.starts_with("order")) {
                continue;
            }
            let mut cols = line.split(',');
            let mut field = |name: &str| -> Result<f64> {
                let raw = cols.next().ok_or_else(|| Error::Parse {
                    row: i + 1,
                    column: name.into(),
                    detail: "missing field".into(),
                })?;
                raw.trim().parse::<f64>().map_err(|e| Error::Parse {
                    row: i + 1,
                    column: name.into(),
                    detail: e.to_string(),
                })
            };
            orders.push(field("order")?);
            values.push(field("value")?);
        }
        Self::new(orders, values)
    }
}

/// RDP of the Gaussian mechanism: `alpha * sensitivity^2 / (2 sigma^2)`.
pub fn rdp_gaussian(order: f64, sigma: f64, sensitivity: f64) -> Result<f64> {
    if !(order > 1.0) {
        return Err(invalid(format!("RDP order must be > 1, got {order}")));
    }
    if !(sigma > 0.0) {
        return Err(invalid(format!("sigma must be > 0, got {sigma}")));
    }
    if !(sensitivity > 0.0) || !sensitivity.is_finite() {
        return Err(invalid(format!(
            "sensitivity must be > 0, got {sensitivity}"
        )));
    }
    if sigma.is_infinite() {
        return Ok(0.0);
    }
    Ok(order * sensitivity * sensitivity / (2.0 * sigma * sigma))
}

fn log_add_exp(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let (hi, lo) = if a > b { (a, b) } else { (b, a) };
    hi + (lo - hi).exp().ln_1p()
}

/// RDP of the Poisson-subsampled Gaussian mechanism (sensitivity 1, noise
/// multiplier `sigma`, inclusion rate `rate_q`) at an integer order.
///
/// Evaluates `log E_{N(0,s^2)}[((1-q) + q exp((2x-1)/(2s^2)))^alpha] / (alpha-1)`
/// through its binomial expansion in log space.
pub fn rdp_subsampled_gaussian(order: f64, sigma: f64, rate_q: f64) -> Result<f64> {
    if !(order >= 2.0) || order.fract() != 0.0 || !order.is_finite() {
        return Err(Error::UnsupportedOrder(order));
    }
    if !(0.0..=1.0).contains(&rate_q) {
        return Err(invalid(format!(
            "sampling rate must lie in [0, 1], got {rate_q}"
        )));
    }
    if !(sigma > 0.0) {
        return Err(invalid(format!(
            "noise multiplier must be > 0, got {sigma}"
        )));
    }
    if rate_q == 0.0 || sigma.is_infinite() {
        return Ok(0.0);
    }
    if rate_q == 1.0 {
        return rdp_gaussian(order, sigma, 1.0);
    }
    let alpha = order as u64;
    let log_q = rate_q.ln();
    let log_1mq = (-rate_q).ln_1p();
    let two_s2 = 2.0 * sigma * sigma;
    let mut log_binom = 0.0f64;
    let mut log_a = f64::NEG_INFINITY;
    for k in 0..=alpha {
        if k > 0 {
            log_binom += ((alpha - k + 1) as f64).ln() - (k as f64).ln();
        }
        let kf = k as f64;
        let term = log_binom + kf * log_q + (alpha - k) as f64 * log_1mq + (kf * kf - kf) / two_s2;
        log_a = log_add_exp(log_a, term);
    }
    Ok((log_a / (order - 1.0)).max(0.0))
}

/// Sequential composition: entrywise sum over a shared order grid.
pub fn rdp_compose(profiles: &[RdpProfile]) -> Result<RdpProfile> {
    let first = profiles
        .first()
        .ok_or_else(|| invalid("cannot compose an empty list of RDP profiles"))?;
    let mut values = vec![0.0; first.orders.len()];
    for p in profiles {
        if p.orders != first.orders {
            return Err(Error::GridMismatch);
        }
        for (acc, v) in values.iter_mut().zip(&p.values) {
            *acc += v;
        }
    }
    RdpProfile::new(first.orders.clone(), values)
}

/// Classical conversion `min_alpha [rdp(alpha) + ln(1/delta) / (alpha - 1)]`.
pub fn rdp_to_eps(profile: &RdpProfile, delta: f64) -> Result<f64> {
    Ok(rdp_to_eps_with_order(profile, delta)?.0)
}

/// Like [`rdp_to_eps`], also returning the minimizing order.
pub fn rdp_to_eps_with_order(profile: &RdpProfile, delta: f64) -> Result<(f64, f64)> {
    if !(delta > 0.0 && delta < 1.0) {
        return Err(invalid(format!("delta must lie in (0, 1), got {delta}")));
    }
    let log_inv_delta = -delta.ln();
    let mut best = (f64::INFINITY, profile.orders[0]);
    for (&a, &v) in profile.orders.iter().zip(&profile.values) {
        let eps = v + log_inv_delta / (a - 1.0);
        if eps < best.0 {
            best = (eps, a);
        }
    }
    Ok(best)
}

const MAX_DOUBLINGS: i32 = 40;
const BISECTION_ITERS: usize = 60;

/// Approximately smallest positive `x` with `feasible(x)`, for a predicate
/// that is monotone (false below a threshold, true above). Brackets by
/// doubling/halving from 1.0 within `2^±40`, then bisects.
fn smallest_feasible(
    rel_tol: f64,
    mut feasible: impl FnMut(f64) -> Result<bool>,
) -> Result<Option<f64>> {
    let (mut lo, mut hi);
    if feasible(1.0)? {
        hi = 1.0;
        lo = 0.5;
        let mut k = 0;
        while feasible(lo)? {
            hi = lo;
            lo *= 0.5;
            k += 1;
            if k >= MAX_DOUBLINGS {
                return Ok(Some(hi));
            }
        }
    } else {
        lo = 1.0;
        hi = 2.0;
        let mut k = 1;
        while !feasible(hi)? {
            lo = hi;
            hi *= 2.0;
            k += 1;
            if k > MAX_DOUBLINGS {
                return Ok(None);
            }
        }
    }
    for _ in 0..BISECTION_ITERS {
        if (hi - lo) <= rel_tol * hi {
            break;
        }
        let mid = 0.5 * (lo + hi);
        if feasible(mid)? {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(Some(hi))
}

/// Smallest per-query noise `sigma_q` such that the training profile composed
/// with `queries` Gaussian count queries (sensitivity 1) stays within the
/// global `(epsilon_target, delta_target)`.
///
/// Pass an all-zero training profile to account the search in isolation.
pub fn calibrate_sigma_q(
    train_profile: &RdpProfile,
    queries: usize,
    budget: &BudgetSpec,
    rel_tol: f64,
) -> Result<f64> {
    if queries == 0 {
        return Err(invalid("quantile search needs at least one query"));
    }
    if !(rel_tol > 0.0 && rel_tol < 1.0) {
        return Err(invalid(format!(
            "rel_tol must lie in (0, 1), got {rel_tol}"
        )));
    }
    let (eps, delta) = (budget.epsilon_target, budget.delta_target);
    let spent = rdp_to_eps(train_profile, delta)?;
    if spent > eps {
        return Err(Error::InfeasibleBudget { spent, target: eps });
    }
    let orders = train_profile.orders();
    let total_eps = |sigma: f64| -> Result<f64> {
        let q = RdpProfile::gaussian(orders, sigma, 1.0, queries)?;
        rdp_to_eps(&rdp_compose(&[train_profile.clone(), q])?, delta)
    };
    smallest_feasible(rel_tol, |s| Ok(total_eps(s)? <= eps))?
        .ok_or(Error::InfeasibleBudget { spent, target: eps })
}

/// Smallest DP-SGD noise multiplier whose `steps` subsampled Gaussian
/// applications at rate `rate_q` convert to at most `epsilon` at `delta`.
pub fn calibrate_noise_multiplier(
    rate_q: f64,
    steps: usize,
    epsilon: f64,
    delta: f64,
    orders: &[f64],
    rel_tol: f64,
) -> Result<f64> {
    if !(epsilon > 0.0) {
        return Err(invalid(format!("epsilon must be > 0, got {epsilon}")));
    }
    let zero = RdpProfile::zeros(orders)?;
    let floor = rdp_to_eps(&zero, delta)?;
    if floor > epsilon {
        return Err(Error::InfeasibleBudget {
            spent: floor,
            target: epsilon,
        });
    }
    if steps == 0 || rate_q == 0.0 {
        return Ok(0.0);
    }
    let spent = |sigma: f64| -> Result<f64> {
        let rec = SgdAccountingRecord {
            noise_multiplier: sigma,
            sampling_rate: rate_q,
            steps,
        };
        rdp_to_eps(&RdpProfile::from_history(orders, &[rec])?, delta)
    };
    smallest_feasible(rel_tol, |s| Ok(spent(s)? <= epsilon))?.ok_or(Error::InfeasibleBudget {
        spent: f64::INFINITY,
        target: epsilon,
    })
}
