//! Coupled DP-SGD runs on `D_n` and `D_{n+1} = D_n + {z}` that share batch
//! masks over `D_n`, Gaussian noise and initialization. Until the extra
//! point is first sampled the two trajectories are identical.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::dpsgd::{add_clipped, apply_update, check_inputs, StepContext, TrainConfig};
use super::model::ModelSpec;
use crate::data::{Dataset, Label};
use crate::error::{Error, Result};
use crate::rng::{self, Stream};

/// How the extra point enters the batches of the extended run.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExtraInclusion {
    /// Independent Bernoulli(q) draw each step, as Poisson sampling would do.
    #[default]
    Bernoulli,
    /// Never sampled; the two runs coincide.
    Never,
    /// Sampled exactly at the listed steps.
    Scripted(Vec<usize>),
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct CouplingOptions {
    #[serde(default)]
    pub extra_inclusion: ExtraInclusion,
    /// Reference parameters for the estimation-error series.
    #[serde(default)]
    pub reference: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CouplingTrace {
    /// `||theta_{n+1}^(t) - theta_n^(t)||` for `t = 0..=T`.
    pub gap_series: Vec<f64>,
    /// `||theta_n^(t) - reference||` for `t = 0..=T`, if a reference was given.
    pub error_series: Option<Vec<f64>>,
    pub diverged: bool,
    pub first_divergence_step: Option<usize>,
    pub params_base: Vec<f64>,
    pub params_extended: Vec<f64>,
}

impl CouplingTrace {
    pub fn final_gap(&self) -> f64 {
        *self
            .gap_series
            .last()
            .expect("gap series holds the initial point")
    }
}

struct ExtraDraw {
    mode: ExtraInclusion,
    rng: ChaCha8Rng,
    rate_q: f64,
}

impl ExtraDraw {
    fn included(&mut self, step: usize) -> bool {
        // one uniform per step regardless of mode keeps the stream layout fixed
        let u = self.rng.random::<f64>();
        match &self.mode {
            ExtraInclusion::Bernoulli => u < self.rate_q,
            ExtraInclusion::Never => false,
            ExtraInclusion::Scripted(steps) => steps.contains(&step),
        }
    }
}

fn distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Runs DP-SGD on `base` and on `base` plus `extra` under shared randomness.
/// The base trajectory is bitwise identical to `dp_sgd_train(base, ...)`.
pub fn coupled_train(
    base: &Dataset,
    extra: (&[f64], Label),
    spec: &ModelSpec,
    config: &TrainConfig,
    options: &CouplingOptions,
) -> Result<CouplingTrace> {
    check_inputs(base, spec, config)?;
    if extra.0.len() != base.dim() {
        return Err(Error::DimensionMismatch {
            expected: base.dim(),
            got: extra.0.len(),
        });
    }
    let p = spec.num_params();
    if let Some(r) = &options.reference {
        if r.len() != p {
            return Err(Error::DimensionMismatch {
                expected: p,
                got: r.len(),
            });
        }
    }
    let mut theta_n = spec.init_params(config.seed);
    let mut theta_ext = theta_n.clone();
    let mut ctx = StepContext::new(config.seed, p);
    let mut extra_draw = ExtraDraw {
        mode: options.extra_inclusion.clone(),
        rng: rng::stream(config.seed, Stream::ExtraPoint),
        rate_q: config.sampling_rate,
    };
    let mut sum_ext = vec![0.0; p];
    let mut no_audit = None;

    let mut gap_series = Vec::with_capacity(config.steps + 1);
    let mut error_series = options
        .reference
        .as_ref()
        .map(|_| Vec::with_capacity(config.steps + 1));
    let mut first_divergence_step = None;
    let record =
        |theta_n: &[f64], theta_ext: &[f64], gaps: &mut Vec<f64>, errs: &mut Option<Vec<f64>>| {
            gaps.push(distance(theta_ext, theta_n));
            if let (Some(e), Some(r)) = (errs.as_mut(), options.reference.as_ref()) {
                e.push(distance(theta_n, r));
            }
        };
    record(&theta_n, &theta_ext, &mut gap_series, &mut error_series);

    for step in 0..config.steps {
        ctx.draw(base.len(), config, step)?;
        let with_extra = extra_draw.included(step);
        let diverged = first_divergence_step.is_some();

        let base_nonempty = !ctx.batch.is_empty();
        if base_nonempty {
            ctx.sum.iter_mut().for_each(|s| *s = 0.0);
            for &i in &ctx.batch {
                add_clipped(
                    spec,
                    &theta_n,
                    base.row(i),
                    base.label(i),
                    config.clip_norm,
                    &mut ctx.grad,
                    &mut ctx.sum,
                    step,
                    &mut no_audit,
                )?;
            }
        }

        // extended batch: the shared mask, then the extra point at index n
        let ext_count = ctx.batch.len() + usize::from(with_extra);
        if ext_count > 0 {
            if diverged || !base_nonempty {
                sum_ext.iter_mut().for_each(|s| *s = 0.0);
                for &i in &ctx.batch {
                    add_clipped(
                        spec,
                        &theta_ext,
                        base.row(i),
                        base.label(i),
                        config.clip_norm,
                        &mut ctx.grad,
                        &mut sum_ext,
                        step,
                        &mut no_audit,
                    )?;
                }
            } else {
                sum_ext.copy_from_slice(&ctx.sum);
            }
            if with_extra {
                add_clipped(
                    spec,
                    &theta_ext,
                    extra.0,
                    extra.1,
                    config.clip_norm,
                    &mut ctx.grad,
                    &mut sum_ext,
                    step,
                    &mut no_audit,
                )?;
                first_divergence_step.get_or_insert(step);
            }
        }

        if base_nonempty {
            apply_update(
                &mut theta_n,
                &ctx.sum,
                &ctx.noise,
                ctx.batch.len(),
                config,
                step,
            )?;
        }
        if first_divergence_step.is_none() {
            theta_ext.copy_from_slice(&theta_n);
        } else if ext_count > 0 {
            apply_update(
                &mut theta_ext,
                &sum_ext,
                &ctx.noise,
                ext_count,
                config,
                step,
            )?;
        }
        record(&theta_n, &theta_ext, &mut gap_series, &mut error_series);
    }

    Ok(CouplingTrace {
        gap_series,
        error_series,
        diverged: first_divergence_step.is_some(),
        first_divergence_step,
        params_base: theta_n,
        params_extended: theta_ext,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Labels;
    use crate::training::dpsgd::{dp_sgd_train, EmptyBatchPolicy};
    use rand::SeedableRng;

    fn data(n: usize) -> Dataset {
        let mut r = ChaCha8Rng::seed_from_u64(3);
        let rows: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..4).map(|_| r.random_range(-1.0..1.0)).collect())
            .collect();
        let y = rows
            .iter()
            .map(|x| usize::from(x[0] + 0.5 * x[1] > 0.0))
            .collect();
        Dataset::from_rows(
            &rows,
            Labels::Classes {
                values: y,
                num_classes: 2,
            },
        )
        .unwrap()
    }

    fn config(seed: u64) -> TrainConfig {
        TrainConfig {
            learning_rate: 0.2,
            steps: 60,
            sampling_rate: 0.05,
            clip_norm: 1.0,
            noise_multiplier: 1.0,
            projection_radius: Some(1.0),
            empty_batch_policy: EmptyBatchPolicy::Skip,
            seed,
        }
    }

    const EXTRA: [f64; 4] = [0.9, -0.9, 0.9, -0.9];

    #[test]
    fn base_run_matches_plain_training() {
        let d = data(100);
        let s = ModelSpec::logistic(4);
        for seed in 0..5 {
            for policy in [EmptyBatchPolicy::Skip, EmptyBatchPolicy::Resample] {
                let mut c = config(seed);
                c.empty_batch_policy = policy;
                let t = coupled_train(
                    &d,
                    (&EXTRA, Label::Class(0)),
                    &s,
                    &c,
                    &CouplingOptions::default(),
                )
                .unwrap();
                assert_eq!(t.params_base, dp_sgd_train(&d, &s, &c).unwrap().params);
            }
        }
    }

    #[test]
    fn gap_is_zero_until_divergence() {
        let d = data(100);
        let s = ModelSpec::logistic(4);
        let opts = CouplingOptions {
            extra_inclusion: ExtraInclusion::Scripted(vec![20, 40]),
            reference: Some(vec![0.0; 4]),
        };
        let t = coupled_train(&d, (&EXTRA, Label::Class(0)), &s, &config(1), &opts).unwrap();
        assert_eq!(t.first_divergence_step, Some(20));
        assert!(t.gap_series[..=20].iter().all(|&g| g == 0.0));
        assert!(t.gap_series[21] > 0.0);
        assert_eq!(t.gap_series.len(), 61);
        assert_eq!(t.error_series.as_ref().unwrap().len(), 61);
    }

    #[test]
    fn never_included_runs_coincide() {
        let d = data(100);
        let s = ModelSpec::logistic(4);
        let opts = CouplingOptions {
            extra_inclusion: ExtraInclusion::Never,
            reference: None,
        };
        let t = coupled_train(&d, (&EXTRA, Label::Class(0)), &s, &config(2), &opts).unwrap();
        assert!(!t.diverged);
        assert_eq!(t.params_base, t.params_extended);
        assert!(t.gap_series.iter().all(|&g| g == 0.0));
    }

    #[test]
    fn extended_run_matches_training_on_extended_data_without_noise() {
        // with full batches and no noise, the extended run is plain GD on D_{n+1}
        let d = data(30);
        let s = ModelSpec::logistic(4);
        let mut c = config(4);
        c.sampling_rate = 1.0;
        c.noise_multiplier = 0.0;
        c.clip_norm = f64::INFINITY;
        let opts = CouplingOptions {
            extra_inclusion: ExtraInclusion::Scripted((0..c.steps).collect()),
            reference: None,
        };
        let t = coupled_train(&d, (&EXTRA, Label::Class(0)), &s, &c, &opts).unwrap();
        let ext = d.with_point(&EXTRA, Label::Class(0)).unwrap();
        let direct = dp_sgd_train(&ext, &s, &c).unwrap();
        for (a, b) in t.params_extended.iter().zip(&direct.params) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}
