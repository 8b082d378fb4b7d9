//! `dpscp` command-line harness.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use dpscp::harness::{
    run_experiment, ExperimentConfig, ExperimentKind, QuantileDemoConfig, ScalingConfig,
    StabilityConfig,
};
use dpscp::privacy::{
    calibrate_noise_multiplier, calibrate_sigma_q, default_orders, rdp_compose, rdp_to_eps,
    BudgetSpec, RdpProfile, SgdAccountingRecord,
};

#[derive(Parser)]
#[command(
    name = "dpscp",
    version,
    about = "Differentially private full-data conformal prediction experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Coupled DP-SGD runs on adjacent datasets: stability gap and estimation error.
    Stability(RunArgs),
    /// Coverage and set size across sample sizes and privacy levels on synthetic data.
    Scaling(RunArgs),
    /// Noisy-midpoint failure cases next to the buffered right-endpoint search.
    QuantileDemo(RunArgs),
    /// All methods on a user-supplied CSV (requires --config).
    Realdata(RunArgs),
    /// Noise calibration for a privacy budget.
    Calibrate(CalibrateArgs),
}

#[derive(Args)]
struct RunArgs {
    /// JSON experiment config; defaults apply to every missing field.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory for results.csv (and series.csv).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Base seed; trial t uses seed + t.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    trials: Option<usize>,
    /// Worker threads.
    #[arg(long)]
    jobs: Option<usize>,
    /// Full protocol: 30 trials and the large sample sizes.
    #[arg(long)]
    paper_scale: bool,
    /// Print the effective config and exit.
    #[arg(long)]
    print_config: bool,
}

#[derive(Args)]
struct CalibrateArgs {
    #[arg(long)]
    epsilon: f64,
    #[arg(long, default_value_t = 1e-5)]
    delta: f64,
    /// Number of noisy count queries.
    #[arg(long, default_value_t = 20)]
    queries: usize,
    /// Share of epsilon given to training.
    #[arg(long, default_value_t = 0.5)]
    allocation: f64,
    /// Poisson rate of the training run; with --steps, calibrates training noise first.
    #[arg(long, requires = "steps")]
    sampling_rate: Option<f64>,
    #[arg(long, requires = "sampling_rate")]
    steps: Option<usize>,
}

fn default_kind(command: &Command) -> Option<ExperimentKind> {
    match command {
        Command::Stability(_) => Some(ExperimentKind::Stability(StabilityConfig::default())),
        Command::Scaling(_) => Some(ExperimentKind::Scaling(ScalingConfig::default())),
        Command::QuantileDemo(_) => {
            Some(ExperimentKind::QuantileDemo(QuantileDemoConfig::default()))
        }
        Command::Realdata(_) | Command::Calibrate(_) => None,
    }
}

fn load_config(command: &Command, args: &RunArgs, name: &str) -> Result<ExperimentConfig> {
    let mut config = match &args.config {
        Some(path) => {
            let c = ExperimentConfig::from_path(path)?;
            if c.kind.name() != name {
                bail!(
                    "{} holds a {} config, not {name}",
                    path.display(),
                    c.kind.name()
                );
            }
            c
        }
        None => match default_kind(command) {
            Some(kind) => ExperimentConfig::new(kind),
            None => bail!("{name} needs --config naming the CSV and its schema"),
        },
    };
    if args.paper_scale {
        config = config.paper_scale();
    }
    if let Some(s) = args.seed {
        config.seed = s;
    }
    if let Some(t) = args.trials {
        config.trials = t;
    }
    if args.jobs.is_some() {
        config.jobs = args.jobs;
    }
    config.validate()?;
    Ok(config)
}

fn run(command: &Command, args: &RunArgs) -> Result<()> {
    let name = match command {
        Command::Stability(_) => "stability",
        Command::Scaling(_) => "scaling",
        Command::QuantileDemo(_) => "quantile_demo",
        Command::Realdata(_) => "realdata",
        Command::Calibrate(_) => unreachable!(),
    };
    let config = load_config(command, args, name)?;
    if args.print_config {
        println!("{}", config.to_json());
        return Ok(());
    }
    let out = args
        .out
        .clone()
        .unwrap_or_else(|| Path::new("results").join(name));
    let summary = run_experiment(&config, &out).with_context(|| format!("running {name}"))?;
    println!(
        "wrote {} rows to {}",
        summary.rows,
        summary.results.display()
    );
    if let Some(series) = summary.series {
        println!("series in {}", series.display());
    }
    if summary.failed > 0 {
        eprintln!("{} trial(s) failed; see the status column", summary.failed);
    }
    Ok(())
}

fn calibrate(args: &CalibrateArgs) -> Result<()> {
    let budget = BudgetSpec::new(args.epsilon, args.delta, args.allocation)?;
    let orders = default_orders();
    let train = match (args.sampling_rate, args.steps) {
        (Some(q), Some(steps)) => {
            let sigma = calibrate_noise_multiplier(
                q,
                steps,
                budget.epsilon_train(),
                args.delta,
                &orders,
                1e-6,
            )?;
            println!("sigma_sgd={sigma}");
            let rec = SgdAccountingRecord {
                noise_multiplier: sigma,
                sampling_rate: q,
                steps,
            };
            RdpProfile::from_history(&orders, &[rec])?
        }
        _ => RdpProfile::zeros(&orders)?,
    };
    let sigma_q = calibrate_sigma_q(&train, args.queries, &budget, 1e-6)?;
    let total = rdp_compose(&[
        train.clone(),
        RdpProfile::gaussian(&orders, sigma_q, 1.0, args.queries)?,
    ])?;
    println!("sigma_q={sigma_q}");
    println!("eps_train={}", rdp_to_eps(&train, args.delta)?);
    println!("eps_total={}", rdp_to_eps(&total, args.delta)?);
    Ok(())
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    match &cli.command {
        Command::Calibrate(args) => calibrate(args),
        Command::Stability(a)
        | Command::Scaling(a)
        | Command::QuantileDemo(a)
        | Command::Realdata(a) => run(&cli.command, a),
    }
}
