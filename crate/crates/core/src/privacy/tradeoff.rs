//! Tradeoff functions and Gaussian differential privacy.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::normal;

/// Parameters of an (epsilon, delta) tradeoff curve, plus an optional GDP mu.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TradeoffParams {
    pub epsilon: f64,
    pub delta: f64,
    pub mu: Option<f64>,
}

impl TradeoffParams {
    pub fn new(epsilon: f64, delta: f64) -> Result<Self> {
        let p = Self {
            epsilon,
            delta,
            mu: None,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon >= 0.0) || self.epsilon.is_infinite() {
            return Err(invalid(format!(
                "epsilon must be finite and >= 0, got {}",
                self.epsilon
            )));
        }
        if !(0.0..=1.0).contains(&self.delta) {
            return Err(invalid(format!(
                "delta must lie in [0, 1], got {}",
                self.delta
            )));
        }
        if let Some(mu) = self.mu {
            check_mu(mu)?;
        }
        Ok(())
    }
}

fn check_alpha(alpha: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(invalid(format!(
            "type I error must lie in [0, 1], got {alpha}"
        )));
    }
    Ok(())
}

fn check_mu(mu: f64) -> Result<()> {
    if !(mu > 0.0) || !mu.is_finite() {
        return Err(invalid(format!("mu must be finite and > 0, got {mu}")));
    }
    Ok(())
}

/// Tradeoff curve of (epsilon, delta)-DP evaluated at type I error `alpha`.
pub fn tradeoff_eps_delta(alpha: f64, params: &TradeoffParams) -> Result<f64> {
    check_alpha(alpha)?;
    params.validate()?;
    let TradeoffParams { epsilon, delta, .. } = *params;
    let a = 1.0 - delta - epsilon.exp() * alpha;
    let b = (-epsilon).exp() * (1.0 - delta - alpha);
    Ok(0.0f64.max(a).max(b))
}

/// Tradeoff curve of mu-GDP: `Phi(Phi^{-1}(1 - alpha) - mu)`.
pub fn tradeoff_gdp(alpha: f64, mu: f64) -> Result<f64> {
    check_alpha(alpha)?;
    check_mu(mu)?;
    if alpha == 0.0 {
        return Ok(1.0);
    }
    if alpha == 1.0 {
        return Ok(0.0);
    }
    // Phi^{-1}(1 - alpha) = -Phi^{-1}(alpha) keeps precision for small alpha.
    Ok(normal::cdf(-normal::inv_cdf(alpha) - mu))
}

/// Smallest delta such that mu-GDP implies (epsilon, delta)-DP.
pub fn gdp_to_eps_delta(mu: f64, epsilon: f64) -> Result<f64> {
    check_mu(mu)?;
    if !(epsilon >= 0.0) {
        return Err(invalid(format!("epsilon must be >= 0, got {epsilon}")));
    }
    if epsilon.is_infinite() {
        return Ok(0.0);
    }
    let first = normal::cdf(-epsilon / mu + mu / 2.0);
    // e^eps * Phi(x) in log space; the product can be far below the first term.
    let x = -epsilon / mu - mu / 2.0;
    let phi = normal::cdf(x);
    let second = if phi > 0.0 {
        (epsilon + phi.ln()).exp()
    } else {
        0.0
    };
    Ok((first - second).clamp(0.0, 1.0))
}

/// Composition of GDP mechanisms: root of the sum of squared mus.
pub fn gdp_compose(mus: &[f64]) -> Result<f64> {
    if mus.is_empty() {
        return Err(invalid("cannot compose an empty list of GDP mechanisms"));
    }
    for &mu in mus {
        check_mu(mu)?;
    }
    Ok(mus.iter().map(|m| m * m).sum::<f64>().sqrt())
}

/// Gaussian noise scale giving mu-GDP for a query with the given l2 sensitivity.
pub fn gaussian_sigma_for_gdp(sensitivity: f64, mu: f64) -> Result<f64> {
    if !(sensitivity > 0.0) || !sensitivity.is_finite() {
        return Err(invalid(format!(
            "sensitivity must be > 0, got {sensitivity}"
        )));
    }
    check_mu(mu)?;
    Ok(sensitivity / mu)
}

/// Per-query noise for an N-step noisy count search to be `mu_calib`-GDP overall.
pub fn calib_sigma_for_search(steps: usize, mu_calib: f64) -> Result<f64> {
    if steps == 0 {
        return Err(invalid("search needs at least one step"));
    }
    check_mu(mu_calib)?;
    Ok((steps as f64).sqrt() / mu_calib)
}
