//! Experiment runners: each expands a config into independent trial jobs,
//! runs them on the worker pool and writes rows in grid-then-trial order.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;

use super::config::{
    ExperimentConfig, ExperimentKind, PipelineSettings, QuantileDemoConfig, RealdataConfig,
    ScalingConfig, StabilityConfig,
};
use super::dataio::{fit_standardizer, load_csv};
use super::generate::{gen_logistic, gen_multiclass};
use super::output::{aggregate, ResultRow, TableWriter, TrialTag, RESULTS_HEADER, SERIES_HEADER};
use super::pool::run_ordered;
use crate::conformal::{run_pipeline, Method, PipelineConfig};
use crate::data::{Dataset, Task};
use crate::error::{Error, Result};
use crate::privacy::{
    calibrate_noise_multiplier, default_orders, rdp_to_eps, BudgetSpec, RdpProfile,
};
use crate::quantile::{
    buffered_right_search, buffered_right_search_with_noise, midpoint_search,
    midpoint_search_with_noise, target_rank, QuantileConfig, QuantileResult, ScoreSet,
    SearchVariant,
};
use crate::rng::{self, Stream};
use crate::training::{coupled_train, CouplingOptions, ModelSpec, TrainConfig};

const CALIBRATION_TOL: f64 = 1e-6;

/// Files written by a run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub results: PathBuf,
    pub series: Option<PathBuf>,
    pub rows: usize,
    pub failed: usize,
}

/// One `(experiment, trial, step, metric, value)` series point.
#[derive(Debug, Clone, PartialEq)]
struct Point {
    step: usize,
    metric: String,
    value: f64,
}

/// Output of one job: its result rows and series points.
#[derive(Debug, Default)]
struct JobOutput {
    rows: Vec<ResultRow>,
    series: Vec<Point>,
}

fn workers(config: &ExperimentConfig) -> usize {
    config
        .jobs
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
}

fn trial_seed(config: &ExperimentConfig, trial: usize) -> u64 {
    config.seed.wrapping_add(trial as u64)
}

/// Runs the experiment and writes `results.csv` (and `series.csv` where the
/// experiment produces series) into `out_dir`.
pub fn run_experiment(config: &ExperimentConfig, out_dir: &Path) -> Result<RunSummary> {
    config.validate()?;
    std::fs::create_dir_all(out_dir)
        .map_err(|e| Error::Io(format!("{}: {e}", out_dir.display())))?;
    let results = out_dir.join("results.csv");
    let series = out_dir.join("series.csv");
    match &config.kind {
        ExperimentKind::Stability(s) => run_stability(config, s, &results, &series),
        ExperimentKind::Scaling(s) => run_scaling(config, s, &results),
        ExperimentKind::QuantileDemo(q) => run_quantile_demo(config, q, &results, &series),
        ExperimentKind::Realdata(r) => run_realdata(config, r, &results),
    }
}

fn failed_row(base: ResultRow, err: &Error) -> ResultRow {
    ResultRow {
        status: format!("failed: {err}"),
        ..base
    }
}

// ---- stability -------------------------------------------------------------

fn eps_label(eps: f64) -> String {
    format!("eps_{eps}")
}

fn stability_trial(config: &StabilityConfig, seed: u64) -> Result<JobOutput> {
    let (data, theta) = gen_logistic(config.n + 1, config.d, seed)?;
    let base = data.select(&(0..config.n).collect::<Vec<_>>());
    let extra = (data.row(config.n), data.label(config.n));
    let spec = ModelSpec::logistic(config.d);
    let orders = default_orders();
    let options = CouplingOptions {
        extra_inclusion: config.extra_inclusion.clone(),
        reference: Some(theta),
    };
    let mut out = JobOutput::default();
    for &eps in &config.epsilons {
        let sigma = calibrate_noise_multiplier(
            config.sampling_rate,
            config.steps,
            eps,
            config.delta,
            &orders,
            CALIBRATION_TOL,
        )?;
        let tc = TrainConfig {
            learning_rate: config.learning_rate,
            steps: config.steps,
            sampling_rate: config.sampling_rate,
            clip_norm: config.clip_norm,
            noise_multiplier: sigma,
            projection_radius: config.projection_radius,
            empty_batch_policy: config.empty_batch_policy,
            seed,
        };
        let trace = coupled_train(&base, extra, &spec, &tc, &options)?;
        let label = eps_label(eps);
        for (step, &g) in trace.gap_series.iter().enumerate() {
            out.series.push(Point {
                step,
                metric: format!("gap_{label}"),
                value: g,
            });
        }
        for (step, &e) in trace.error_series.iter().flatten().enumerate() {
            out.series.push(Point {
                step,
                metric: format!("error_{label}"),
                value: e,
            });
        }
        let spent = rdp_to_eps(
            &RdpProfile::from_history(&orders, &[tc.accounting_record()])?,
            config.delta,
        )?;
        out.rows.push(ResultRow {
            epsilon: Some(eps),
            n: Some(config.n),
            eps_train: Some(spent),
            seed: Some(seed),
            ..ResultRow::new("stability", "coupled_dp_sgd", TrialTag::Index(0))
        });
    }
    Ok(out)
}

fn run_stability(
    config: &ExperimentConfig,
    s: &StabilityConfig,
    results: &Path,
    series: &Path,
) -> Result<RunSummary> {
    let mut rw = TableWriter::create(results, &RESULTS_HEADER)?;
    let mut sw = TableWriter::create(series, &SERIES_HEADER)?;
    let trials: Vec<usize> = (0..config.trials).collect();
    let mut per_trial_rows: Vec<Vec<ResultRow>> = Vec::new();
    let mut sums: BTreeMap<(String, usize), (f64, usize)> = BTreeMap::new();
    let mut failed = 0;
    run_ordered(
        &trials,
        workers(config),
        |_, &t| {
            let seed = trial_seed(config, t);
            (seed, stability_trial(s, seed))
        },
        |t, (seed, res)| {
            let rows = match res {
                Ok(out) => {
                    for p in &out.series {
                        sw.write_series(
                            "stability",
                            TrialTag::Index(t),
                            p.step,
                            &p.metric,
                            p.value,
                        )?;
                        let e = sums.entry((p.metric.clone(), p.step)).or_insert((0.0, 0));
                        e.0 += p.value;
                        e.1 += 1;
                    }
                    sw.flush()?;
                    out.rows
                        .into_iter()
                        .map(|r| ResultRow {
                            trial: TrialTag::Index(t),
                            ..r
                        })
                        .collect()
                }
                Err(e) => {
                    failed += 1;
                    let base = ResultRow {
                        n: Some(s.n),
                        seed: Some(seed),
                        ..ResultRow::new("stability", "coupled_dp_sgd", TrialTag::Index(t))
                    };
                    vec![failed_row(base, &e)]
                }
            };
            for r in &rows {
                rw.write_result(r)?;
            }
            per_trial_rows.push(rows);
            Ok(())
        },
    )?;
    // per-step means across trials, in metric then step order
    for ((metric, step), (sum, count)) in &sums {
        sw.write_series(
            "stability",
            TrialTag::Mean,
            *step,
            metric,
            sum / *count as f64,
        )?;
    }
    sw.flush()?;
    let mut rows = per_trial_rows.iter().map(Vec::len).sum::<usize>();
    for &eps in &s.epsilons {
        let cell: Vec<ResultRow> = per_trial_rows
            .iter()
            .flatten()
            .filter(|r| r.epsilon == Some(eps) || (r.epsilon.is_none() && !r.is_ok()))
            .cloned()
            .collect();
        if let Some(agg) = aggregate(&cell) {
            for r in &agg {
                rw.write_result(&ResultRow {
                    epsilon: Some(eps),
                    ..r.clone()
                })?;
            }
            rows += 2;
        }
    }
    Ok(RunSummary {
        results: results.to_owned(),
        series: Some(series.to_owned()),
        rows,
        failed,
    })
}

// ---- pipeline sweeps ---------------------------------------------------------

/// One grid cell of a pipeline sweep.
#[derive(Debug, Clone, PartialEq)]
struct Cell {
    method: Method,
    n: usize,
    epsilon: Option<f64>,
    p: Option<f64>,
}

/// Cells in `n, epsilon, p, method` order. Non-private methods ignore the
/// budget and get one cell per `n`; the private split baseline ignores `p`.
fn grid(methods: &[Method], ns: &[usize], epsilons: &[f64], ps: &[f64]) -> Vec<Cell> {
    let mut cells = Vec::new();
    for &n in ns {
        for &method in methods.iter().filter(|m| !m.is_private()) {
            cells.push(Cell {
                method,
                n,
                epsilon: None,
                p: None,
            });
        }
        for &eps in epsilons {
            for &method in methods.iter().filter(|m| **m == Method::DpSplit) {
                cells.push(Cell {
                    method,
                    n,
                    epsilon: Some(eps),
                    p: None,
                });
            }
            for &p in ps {
                for &method in methods
                    .iter()
                    .filter(|m| matches!(m, Method::DpscpF | Method::DpscpA))
                {
                    cells.push(Cell {
                        method,
                        n,
                        epsilon: Some(eps),
                        p: Some(p),
                    });
                }
            }
        }
    }
    cells
}

fn pipeline_config(
    settings: &PipelineSettings,
    cell: &Cell,
    model: ModelSpec,
    task: Task,
    target_scale: f64,
) -> Result<PipelineConfig> {
    // the budget is unused by non-private methods but must still be valid
    let budget = BudgetSpec::new(
        cell.epsilon.unwrap_or(1.0),
        settings.delta,
        cell.p.unwrap_or(0.5),
    )?;
    let (lo, hi) = settings.score_range(task);
    Ok(PipelineConfig {
        method: cell.method,
        alpha: settings.alpha,
        budget,
        model,
        train: settings.train.clone(),
        quantile: QuantileConfig {
            range_lo: lo,
            range_hi: hi,
            alpha: settings.alpha,
            steps: settings.quantile_steps,
            beta: settings.beta,
            variant: SearchVariant::BufferedRight,
            ..QuantileConfig::default()
        },
        buffer_m: settings.buffer_m,
        split_tau: settings.split_tau,
        split_fraction: settings.split_fraction,
        target_scale,
    })
}

/// Standardizes pool and test with pool statistics and runs one pipeline.
fn standardized_run(
    settings: &PipelineSettings,
    cell: &Cell,
    pool: &Dataset,
    test: &Dataset,
    seed: u64,
) -> Result<ResultRow> {
    let stats = fit_standardizer(pool)?;
    let (pool, test) = (stats.apply(pool)?, stats.apply(test)?);
    let model = settings.model.spec(pool.dim(), pool.num_outputs());
    let pc = pipeline_config(settings, cell, model, pool.task(), stats.target_scale())?;
    let rep = run_pipeline(&pool, &test, &pc, seed)?;
    Ok(ResultRow {
        coverage: Some(rep.coverage),
        efficiency: Some(rep.efficiency),
        informativeness: rep.informativeness,
        q_hat: Some(rep.q_hat),
        sigma_q: Some(rep.sigma_q),
        eps_train: Some(rep.eps_train_spent),
        ..ResultRow::new("", cell.method.name(), TrialTag::Index(0))
    })
}

/// Runs `cells x trials` jobs and writes rows cell by cell with aggregates.
fn run_sweep(
    config: &ExperimentConfig,
    experiment: &str,
    cells: &[Cell],
    results: &Path,
    job: impl Fn(&Cell, u64) -> Result<ResultRow> + Sync,
) -> Result<RunSummary> {
    let mut rw = TableWriter::create(results, &RESULTS_HEADER)?;
    let trials = config.trials;
    let jobs: Vec<(usize, usize)> = (0..cells.len())
        .flat_map(|c| (0..trials).map(move |t| (c, t)))
        .collect();
    let mut cell_rows: Vec<ResultRow> = Vec::with_capacity(trials);
    let (mut rows, mut failed) = (0, 0);
    run_ordered(
        &jobs,
        workers(config),
        |_, &(c, t)| {
            let seed = trial_seed(config, t);
            (seed, job(&cells[c], seed))
        },
        |i, (seed, res)| {
            let (c, t) = jobs[i];
            let cell = &cells[c];
            let base = ResultRow {
                epsilon: cell.epsilon,
                n: Some(cell.n),
                p: cell.p,
                seed: Some(seed),
                ..ResultRow::new(experiment, cell.method.name(), TrialTag::Index(t))
            };
            let row = match res {
                Ok(r) => ResultRow {
                    coverage: r.coverage,
                    efficiency: r.efficiency,
                    informativeness: r.informativeness,
                    q_hat: r.q_hat,
                    sigma_q: r.sigma_q,
                    eps_train: r.eps_train,
                    ..base
                },
                Err(e) => {
                    failed += 1;
                    failed_row(base, &e)
                }
            };
            rw.write_result(&row)?;
            rows += 1;
            cell_rows.push(row);
            if t + 1 == trials {
                if let Some(agg) = aggregate(&cell_rows) {
                    for r in &agg {
                        rw.write_result(r)?;
                        rows += 1;
                    }
                }
                cell_rows.clear();
            }
            Ok(())
        },
    )?;
    Ok(RunSummary {
        results: results.to_owned(),
        series: None,
        rows,
        failed,
    })
}

fn run_scaling(config: &ExperimentConfig, s: &ScalingConfig, results: &Path) -> Result<RunSummary> {
    let cells = grid(&s.methods, &s.ns, &s.epsilons, &s.settings.ps);
    let max_n = *s.ns.iter().max().expect("validated nonempty");
    let g = &s.generator;
    run_sweep(config, "scaling", &cells, results, |cell, seed| {
        // one fixed pool per trial: the test set first, then nested training pools
        let all = gen_multiclass(
            s.test_size + max_n,
            g.d,
            g.classes,
            g.class_sep,
            g.flip_y,
            seed,
        )?;
        let test = all.select(&(0..s.test_size).collect::<Vec<_>>());
        let pool = all.select(&(s.test_size..s.test_size + cell.n).collect::<Vec<_>>());
        standardized_run(&s.settings, cell, &pool, &test, seed)
    })
}

fn run_realdata(
    config: &ExperimentConfig,
    r: &RealdataConfig,
    results: &Path,
) -> Result<RunSummary> {
    let data = load_csv(&r.csv, &r.schema)?.dataset;
    let n_test = ((data.len() as f64) * r.test_fraction).round() as usize;
    if n_test == 0 || n_test >= data.len() {
        return Err(crate::error::invalid(
            "test split would be empty or take every row",
        ));
    }
    let cells = grid(
        &r.methods,
        &[data.len() - n_test],
        &r.epsilons,
        &r.settings.ps,
    );
    run_sweep(config, "realdata", &cells, results, |cell, seed| {
        let mut idx: Vec<usize> = (0..data.len()).collect();
        idx.shuffle(&mut rng::stream(rng::derive_seed(seed, 1), Stream::Split));
        let test = data.select(&idx[..n_test]);
        let pool = data.select(&idx[n_test..]);
        standardized_run(&r.settings, cell, &pool, &test, seed)
    })
}

// ---- quantile demo -----------------------------------------------------------

fn tie_jump_scores() -> Vec<f64> {
    let mut s = vec![0.0; 5];
    s.extend([10.0; 8]);
    s.push(11.0);
    s
}

/// Adds `bump` to the first query whose midpoint lies in `[lo, hi)`.
fn inject_once(lo: f64, hi: f64, bump: f64) -> impl FnMut(usize, f64) -> f64 {
    let mut fired = false;
    move |_, mid| {
        if !fired && (lo..hi).contains(&mid) {
            fired = true;
            bump
        } else {
            0.0
        }
    }
}

struct DemoCase {
    name: &'static str,
    scores: Vec<f64>,
    range: (f64, f64),
    alpha: f64,
    sigma_buffered: f64,
    injection: (f64, f64, f64),
}

fn demo_cases(q: &QuantileDemoConfig) -> Vec<DemoCase> {
    vec![
        DemoCase {
            name: "tie_jump",
            scores: tie_jump_scores(),
            range: (0.0, 11.0),
            alpha: 0.2,
            sigma_buffered: q.sigma_tie_jump,
            injection: (9.0, 10.0, 8.0),
        },
        DemoCase {
            name: "distinct",
            scores: (1..=10).map(f64::from).collect(),
            range: (1.0, 10.0),
            alpha: 0.2,
            sigma_buffered: q.sigma_distinct,
            injection: (8.0, 9.0, 1.0),
        },
    ]
}

fn demo_row(
    case: &DemoCase,
    method: &str,
    trial: usize,
    res: &QuantileResult,
    sigma: f64,
    target: f64,
    seed: Option<u64>,
) -> ResultRow {
    ResultRow {
        n: Some(case.scores.len()),
        // 1 when the released threshold is at least the exact conformal quantile
        coverage: Some(f64::from(u8::from(res.q_hat >= target))),
        q_hat: Some(res.q_hat),
        sigma_q: Some(sigma),
        seed,
        ..ResultRow::new(
            "quantile_demo",
            &format!("{}_{}", case.name, method),
            TrialTag::Index(trial),
        )
    }
}

fn run_quantile_demo(
    config: &ExperimentConfig,
    q: &QuantileDemoConfig,
    results: &Path,
    series: &Path,
) -> Result<RunSummary> {
    let mut rw = TableWriter::create(results, &RESULTS_HEADER)?;
    let mut sw = TableWriter::create(series, &SERIES_HEADER)?;
    let mut rows = 0;
    for case in demo_cases(q) {
        let scores = ScoreSet::new(case.scores.clone())?;
        let r = target_rank(scores.len(), case.alpha)?;
        let target = scores.order_statistic(r)?;
        let base = QuantileConfig {
            range_lo: case.range.0,
            range_hi: case.range.1,
            alpha: case.alpha,
            steps: q.steps,
            beta: q.beta,
            ..QuantileConfig::default()
        };
        let mid_cfg = QuantileConfig {
            variant: SearchVariant::Midpoint,
            precision: Some(q.midpoint_precision),
            ..base.clone()
        };
        let buf_cfg = QuantileConfig {
            sigma_q: case.sigma_buffered,
            ..base.clone()
        };
        let (lo, hi, bump) = case.injection;

        // trial 0: the single injected false positive
        let mid = midpoint_search_with_noise(&scores, &mid_cfg, &mut inject_once(lo, hi, bump))?;
        let buf =
            buffered_right_search_with_noise(&scores, &buf_cfg, &mut inject_once(lo, hi, bump))?;
        for (method, res, sigma) in [
            ("midpoint_injected", &mid, 0.0),
            ("buffered_injected", &buf, case.sigma_buffered),
        ] {
            rw.write_result(&demo_row(&case, method, 0, res, sigma, target, None))?;
            rows += 1;
            let metric = format!("{}_{}", case.name, method);
            for (step, t) in res.trace.iter().enumerate() {
                sw.write_series(
                    "quantile_demo",
                    TrialTag::Index(0),
                    step,
                    &format!("{metric}_mid"),
                    t.mid,
                )?;
                sw.write_series(
                    "quantile_demo",
                    TrialTag::Index(0),
                    step,
                    &format!("{metric}_noisy_count"),
                    t.noisy_count,
                )?;
                sw.write_series(
                    "quantile_demo",
                    TrialTag::Index(0),
                    step,
                    &format!("{metric}_right"),
                    t.right,
                )?;
            }
        }

        // trials 1..: Gaussian noise at a common scale for both searches
        for (method, variant) in [
            ("midpoint", SearchVariant::Midpoint),
            ("buffered", SearchVariant::BufferedRight),
        ] {
            let mut cell = Vec::with_capacity(config.trials);
            for t in 0..config.trials {
                let seed = trial_seed(config, t);
                let cfg = QuantileConfig {
                    sigma_q: q.sigma_random,
                    seed,
                    ..if variant == SearchVariant::Midpoint {
                        mid_cfg.clone()
                    } else {
                        buf_cfg.clone()
                    }
                };
                let res = match variant {
                    SearchVariant::Midpoint => midpoint_search(&scores, &cfg)?,
                    _ => buffered_right_search(&scores, &cfg)?,
                };
                let row = demo_row(
                    &case,
                    method,
                    t + 1,
                    &res,
                    q.sigma_random,
                    target,
                    Some(seed),
                );
                rw.write_result(&row)?;
                rows += 1;
                cell.push(row);
            }
            if let Some(agg) = aggregate(&cell) {
                for r in &agg {
                    rw.write_result(r)?;
                    rows += 1;
                }
            }
        }
    }
    sw.flush()?;
    Ok(RunSummary {
        results: results.to_owned(),
        series: Some(series.to_owned()),
        rows,
        failed: 0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::config::ExperimentConfig;
    use crate::training::ExtraInclusion;

    fn read(path: &Path) -> String {
        std::fs::read_to_string(path).unwrap()
    }

    #[test]
    fn grid_skips_irrelevant_axes() {
        let cells = grid(&Method::ALL, &[100], &[0.5, 1.0], &[0.3, 0.7]);
        // 2 non-private + per eps (1 split + 2 p x 2 full-data)
        assert_eq!(cells.len(), 2 + 2 * (1 + 4));
        assert!(cells
            .iter()
            .filter(|c| !c.method.is_private())
            .all(|c| c.epsilon.is_none()));
    }

    #[test]
    fn quantile_demo_shows_the_failure() {
        let dir = tempfile::tempdir().unwrap();
        let mut c =
            ExperimentConfig::new(ExperimentKind::QuantileDemo(QuantileDemoConfig::default()));
        c.trials = 5;
        run_experiment(&c, dir.path()).unwrap();
        let text = read(&dir.path().join("results.csv"));
        let q_hat = |method: &str| -> f64 {
            let line = text
                .lines()
                .find(|l| l.contains(&format!(",{method},")))
                .unwrap();
            line.split(',').nth(9).unwrap().parse().unwrap()
        };
        assert!(q_hat("tie_jump_midpoint_injected") < 10.0);
        assert!(q_hat("tie_jump_buffered_injected") >= 10.0);
        assert!(q_hat("distinct_midpoint_injected") < 9.0);
        assert!(q_hat("distinct_buffered_injected") >= 9.0);
    }

    #[test]
    fn stability_without_extra_point_has_zero_gap() {
        let dir = tempfile::tempdir().unwrap();
        let s = StabilityConfig {
            n: 200,
            extra_inclusion: ExtraInclusion::Never,
            epsilons: vec![1.0],
            ..StabilityConfig::default()
        };
        let mut c = ExperimentConfig::new(ExperimentKind::Stability(s));
        c.trials = 3;
        c.jobs = Some(2);
        run_experiment(&c, dir.path()).unwrap();
        let series = read(&dir.path().join("series.csv"));
        let gaps: Vec<&str> = series
            .lines()
            .filter(|l| l.contains(",gap_eps_1,"))
            .collect();
        assert_eq!(gaps.len(), 4 * 101);
        assert!(gaps.iter().all(|l| l.ends_with(",0")));
    }

    #[test]
    fn sweep_is_reproducible_and_records_failures() {
        let scaling = ScalingConfig {
            ns: vec![30, 200],
            epsilons: vec![1.0],
            methods: vec![Method::DpscpF, Method::SplitCp],
            test_size: 100,
            settings: PipelineSettings {
                model: super::super::config::ModelChoice {
                    kind: crate::training::ModelKind::SoftmaxLinear,
                    hidden: vec![],
                },
                ..PipelineSettings::default()
            },
            ..ScalingConfig::default()
        };
        let mut c = ExperimentConfig::new(ExperimentKind::Scaling(scaling));
        c.trials = 2;
        c.jobs = Some(3);
        let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
        let sa = run_experiment(&c, a.path()).unwrap();
        c.jobs = Some(1);
        run_experiment(&c, b.path()).unwrap();
        let text = read(&a.path().join("results.csv"));
        assert_eq!(text, read(&b.path().join("results.csv")));
        // n = 30 is too small for the rank buffer of the finite-sample method
        assert_eq!(sa.failed, 2);
        assert!(text
            .lines()
            .any(|l| l.contains("dpscp_f,1,30,0.5,0,") && l.contains("failed")));
        // 4 cells x (2 trials + mean + sd)
        assert_eq!(text.lines().count(), 1 + 4 * 4);
    }
}
