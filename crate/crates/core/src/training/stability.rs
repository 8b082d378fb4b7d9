//! Closed-form stability bounds for coupled DP-SGD trajectories.

/// Probability that the extra point is sampled at least once in `steps`
/// Poisson rounds, and the resulting bound on the expected final gap when
/// iterates are confined to a ball of radius `radius`.
pub fn stability_bound_universal(rate_q: f64, steps: usize, radius: f64) -> (f64, f64) {
    let p = 1.0 - (1.0 - rate_q).powf(steps as f64);
    (p, radius * p)
}

/// Expected final gap bound for an `L`-smooth loss:
/// `((1-(1-q)^(n+1)) / ((n+1) L)) (2C + sigma sqrt(d)) (exp(eta L T) - 1)`.
#[allow(clippy::too_many_arguments)]
pub fn stability_bound_smooth(
    n: usize,
    rate_q: f64,
    smoothness: f64,
    clip_norm: f64,
    noise_multiplier: f64,
    dim: usize,
    learning_rate: f64,
    steps: usize,
) -> f64 {
    if learning_rate == 0.0 || rate_q == 0.0 {
        return 0.0;
    }
    let m = (n + 1) as f64;
    let hit = -((m * (-rate_q).ln_1p()).exp_m1());
    let growth = (learning_rate * smoothness * steps as f64).exp_m1();
    hit / (m * smoothness) * (2.0 * clip_norm + noise_multiplier * (dim as f64).sqrt()) * growth
}

/// `E[1 / (K + 1)]` for `K ~ Binomial(n, q)`, which equals
/// `(1 - (1-q)^(n+1)) / ((n+1) q)`.
pub fn expected_inverse_batch(n: usize, rate_q: f64) -> f64 {
    let m = (n + 1) as f64;
    -((m * (-rate_q).ln_1p()).exp_m1()) / (m * rate_q)
}
