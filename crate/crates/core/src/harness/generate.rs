//! Synthetic data generators.

use rand::seq::index;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::data::{Dataset, Labels};
use crate::error::{invalid, Result};
use crate::rng::{self, Stream};
use crate::training::ModelSpec;

/// Alternating, decaying coefficients `(-1)^j / (j + 1)`.
pub fn logistic_truth(d: usize) -> Vec<f64> {
    (0..d)
        .map(|j| if j % 2 == 0 { 1.0 } else { -1.0 } / (j as f64 + 1.0))
        .collect()
}

/// `X ~ N(0, I_d)`, `Y | X ~ Bernoulli(sigmoid(X . theta))` with
/// `theta` from [`logistic_truth`]. Returns the data and `theta`.
pub fn gen_logistic(n: usize, d: usize, seed: u64) -> Result<(Dataset, Vec<f64>)> {
    let theta = logistic_truth(d);
    Ok((gen_logistic_with(n, &theta, seed)?, theta))
}

/// [`gen_logistic`] with a caller-chosen coefficient vector.
pub fn gen_logistic_with(n: usize, theta: &[f64], seed: u64) -> Result<Dataset> {
    let d = theta.len();
    if n == 0 || d == 0 {
        return Err(invalid("logistic generator needs n, d >= 1"));
    }
    let spec = ModelSpec::logistic(d);
    let mut r = rng::stream(seed, Stream::Data);
    let mut features = Vec::with_capacity(n * d);
    let mut labels = Vec::with_capacity(n);
    for _ in 0..n {
        let start = features.len();
        features.extend((0..d).map(|_| r.sample::<f64, _>(StandardNormal)));
        let p1 = spec.predict(theta, &features[start..])?[1];
        labels.push(usize::from(r.random::<f64>() < p1));
    }
    Dataset::new(
        features,
        d,
        Labels::Classes {
            values: labels,
            num_classes: 2,
        },
    )
}

/// `K` Gaussian clusters with identity covariance. Centroids are `K`
/// distinct vertices of `{-1, +1}^d` scaled by `class_sep`; classes are
/// equally likely; each label is replaced by a uniform draw with
/// probability `flip_y`.
pub fn gen_multiclass(
    n: usize,
    d: usize,
    k: usize,
    class_sep: f64,
    flip_y: f64,
    seed: u64,
) -> Result<Dataset> {
    if n == 0 || d == 0 {
        return Err(invalid("multiclass generator needs n, d >= 1"));
    }
    if k < 2 {
        return Err(invalid(format!("need at least 2 classes, got {k}")));
    }
    if d < 64 && (k as u64) > (1u64 << d) {
        return Err(invalid(format!(
            "{k} classes do not fit on the vertices of a {d}-cube"
        )));
    }
    if !(0.0..=1.0).contains(&flip_y) {
        return Err(invalid(format!("flip_y must lie in [0, 1], got {flip_y}")));
    }
    let mut r = rng::stream(seed, Stream::Data);
    let centroids = cube_vertices(d, k, class_sep, &mut r);
    let mut features = Vec::with_capacity(n * d);
    let mut labels = Vec::with_capacity(n);
    for _ in 0..n {
        let c = r.random_range(0..k);
        features.extend(
            centroids[c]
                .iter()
                .map(|&m| m + r.sample::<f64, _>(StandardNormal)),
        );
        let flip = r.random::<f64>() < flip_y;
        let relabel = r.random_range(0..k);
        labels.push(if flip { relabel } else { c });
    }
    Dataset::new(
        features,
        d,
        Labels::Classes {
            values: labels,
            num_classes: k,
        },
    )
}

fn cube_vertices<R: Rng>(d: usize, k: usize, scale: f64, r: &mut R) -> Vec<Vec<f64>> {
    let to_point = |bits: u64| -> Vec<f64> {
        (0..d)
            .map(|j| {
                if j < 64 && (bits >> j) & 1 == 1 {
                    scale
                } else {
                    -scale
                }
            })
            .collect()
    };
    if d <= 20 {
        index::sample(r, 1usize << d, k)
            .into_iter()
            .map(|b| to_point(b as u64))
            .collect()
    } else {
        // rejection sampling on random sign patterns
        let mut seen: Vec<Vec<f64>> = Vec::with_capacity(k);
        while seen.len() < k {
            let v: Vec<f64> = (0..d)
                .map(|_| if r.random::<bool>() { scale } else { -scale })
                .collect();
            if !seen.contains(&v) {
                seen.push(v);
            }
        }
        seen
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Label;

    #[test]
    fn truth_coefficients() {
        let t = logistic_truth(4);
        assert_eq!(t[0], 1.0);
        assert_eq!(t[1], -0.5);
        assert!((t[2] - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(t[3], -0.25);
    }

    #[test]
    fn logistic_features_are_centered() {
        let n = 10_000;
        let (data, _) = gen_logistic(n, 3, 1).unwrap();
        for j in 0..3 {
            let mean = data.rows().map(|(x, _)| x[j]).sum::<f64>() / n as f64;
            // unit variance, so the standard error is 1/sqrt(n)
            assert!(
                mean.abs() < 3.0 / (n as f64).sqrt(),
                "column {j} mean {mean}"
            );
        }
    }

    #[test]
    fn zero_truth_gives_balanced_labels() {
        let n = 10_000;
        let data = gen_logistic_with(n, &[0.0; 3], 2).unwrap();
        let ones = data.rows().filter(|(_, y)| *y == Label::Class(1)).count() as f64 / n as f64;
        assert!((ones - 0.5).abs() < 3.0 * 0.5 / (n as f64).sqrt());
    }

    #[test]
    fn multiclass_priors_are_uniform() {
        let (n, k) = (10_000, 5);
        let data = gen_multiclass(n, 10, k, 0.6, 0.01, 3).unwrap();
        let p = 1.0 / k as f64;
        let band = 3.0 * (p * (1.0 - p) / n as f64).sqrt();
        for c in 0..k {
            let freq = data.rows().filter(|(_, y)| *y == Label::Class(c)).count() as f64 / n as f64;
            assert!((freq - p).abs() < band, "class {c} freq {freq}");
        }
    }

    fn class_means(data: &Dataset, k: usize) -> Vec<Vec<f64>> {
        let d = data.dim();
        let mut sums = vec![vec![0.0; d]; k];
        let mut counts = vec![0usize; k];
        for (x, y) in data.rows() {
            let Label::Class(c) = y else { unreachable!() };
            counts[c] += 1;
            for (s, v) in sums[c].iter_mut().zip(x) {
                *s += v;
            }
        }
        sums.into_iter()
            .zip(counts)
            .map(|(s, c)| s.into_iter().map(|v| v / c as f64).collect())
            .collect()
    }

    #[test]
    fn well_separated_classes_are_nearly_perfectly_classified() {
        let k = 5;
        let train = gen_multiclass(5000, 10, k, 10.0, 0.0, 4).unwrap();
        let means = class_means(&train, k);
        // same seed, so same centroids; a fresh draw would use a different seed
        let held_out = gen_multiclass(10_000, 10, k, 10.0, 0.0, 4)
            .unwrap()
            .select(&(5000..10_000).collect::<Vec<_>>());
        let correct = held_out
            .rows()
            .filter(|(x, y)| {
                let best = (0..k)
                    .min_by(|&a, &b| {
                        let da: f64 = means[a].iter().zip(*x).map(|(m, v)| (m - v).powi(2)).sum();
                        let db: f64 = means[b].iter().zip(*x).map(|(m, v)| (m - v).powi(2)).sum();
                        da.total_cmp(&db)
                    })
                    .unwrap();
                *y == Label::Class(best)
            })
            .count();
        assert!(correct as f64 / held_out.len() as f64 > 0.99);
    }

    #[test]
    fn full_flip_erases_signal() {
        let (n, k) = (20_000, 3);
        let data = gen_multiclass(n, 2, k, 2.0, 1.0, 5).unwrap();
        // with labels independent of features every class mean is the pooled mean
        let means = class_means(&data, k);
        let pooled: Vec<f64> = (0..2)
            .map(|j| data.rows().map(|(x, _)| x[j]).sum::<f64>() / n as f64)
            .collect();
        // per-coordinate variance is 1 + class_sep^2 = 5; each class holds ~n/k rows
        let se = (5.0 * k as f64 / n as f64).sqrt();
        for m in &means {
            for j in 0..2 {
                assert!((m[j] - pooled[j]).abs() < 4.0 * se, "{m:?} vs {pooled:?}");
            }
        }
    }

    #[test]
    fn rejects_bad_arguments() {
        assert!(gen_multiclass(10, 2, 1, 1.0, 0.0, 0).is_err());
        assert!(gen_multiclass(10, 2, 5, 1.0, 0.0, 0).is_err());
        assert!(gen_multiclass(10, 2, 2, 1.0, 1.5, 0).is_err());
        assert!(gen_logistic(0, 2, 0).is_err());
    }
}
