use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use ist_bench::config::{preset, with_idx_paths};
use ist_bench::{
    cluster_timing, run_experiment, sweep_labeled_budget, BenchError, ComparisonReport,
    ConfigError, ExperimentConfig, RunOptions,
};

/// Compare self-training with incremental self-training.
///
/// Exit codes: 0 success, 2 configuration error, 3 some runs failed.
#[derive(Debug, Parser)]
#[command(name = "ist", version)]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct GlobalArgs {
    /// Run a single seed instead of the configured list.
    #[arg(long, global = true)]
    seed_override: Option<u64>,
    /// Worker threads for independent runs (0 = all cores).
    #[arg(long, global = true, default_value_t = 0)]
    workers: usize,
    /// Output directory, overriding the config.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Use a bundled configuration: blobs-small, blobs-noisy or mnist-100.
    #[arg(long, global = true)]
    preset: Option<String>,
    /// IDX image file for IDX datasets.
    #[arg(long, global = true)]
    idx_images: Option<PathBuf>,
    /// IDX label file for IDX datasets.
    #[arg(long, global = true)]
    idx_labels: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run ST and IST for every method and seed.
    Run { config: Option<PathBuf> },
    /// Repeat `run` for several labels-per-class budgets.
    Sweep {
        /// Comma-separated labels-per-class values.
        #[arg(long, value_delimiter = ',', required = true)]
        budgets: Vec<usize>,
        config: Option<PathBuf>,
    },
    /// Time each clustering method on the unlabeled split.
    ClusterTime { config: Option<PathBuf> },
    /// Check a configuration without running it.
    Validate { config: Option<PathBuf> },
}

impl Command {
    fn config_path(&self) -> Option<&PathBuf> {
        match self {
            Command::Run { config }
            | Command::Sweep { config, .. }
            | Command::ClusterTime { config }
            | Command::Validate { config } => config.as_ref(),
        }
    }
}

fn load_config(cli: &Cli) -> Result<ExperimentConfig, ConfigError> {
    let g = &cli.global;
    let cfg = match (cli.command.config_path(), &g.preset) {
        (Some(_), Some(_)) => {
            return Err(ConfigError::Invalid(
                "give either a config file or --preset, not both".into(),
            ))
        }
        (None, None) => {
            return Err(ConfigError::Invalid(
                "a config file or --preset is required".into(),
            ))
        }
        (Some(path), None) => {
            let mut cfg = ExperimentConfig::load(path)?;
            if g.idx_images.is_some() || g.idx_labels.is_some() {
                cfg = with_idx_paths(cfg, g.idx_images.clone(), g.idx_labels.clone());
            }
            cfg
        }
        (None, Some(name)) => {
            with_idx_paths(preset(name)?, g.idx_images.clone(), g.idx_labels.clone())
        }
    };
    let cfg = cfg.with_seed_override(g.seed_override);
    cfg.validate()?;
    Ok(cfg)
}

fn print_report(report: &ComparisonReport) {
    println!(
        "{:<22} {:>5} {:>7} {:>10} {:>9} {:>11} {:>12}",
        "method", "runs", "failed", "acc_med", "acc_iqr", "seconds_med", "processed"
    );
    for a in &report.aggregates {
        let pct = |v: Option<f64>| v.map_or("-".to_string(), |x| format!("{:.2}", 100.0 * x));
        println!(
            "{:<22} {:>5} {:>7} {:>10} {:>9} {:>11} {:>12}",
            a.method,
            a.runs,
            a.failed,
            pct(a.acc_median),
            pct(a.acc_iqr),
            a.seconds_median.map_or("-".into(), |s| format!("{s:.3}")),
            a.processed_median.map_or("-".into(), |p| format!("{p:.0}")),
        );
    }
    for c in report.cells.iter().filter(|c| !c.is_ok()) {
        eprintln!(
            "failed: {} seed {}: {}",
            c.method,
            c.seed,
            c.error.as_deref().unwrap_or("unknown error")
        );
    }
}

fn execute(cli: &Cli) -> anyhow::Result<ExitCode> {
    let cfg = load_config(cli)?;
    let opts = RunOptions {
        workers: cli.global.workers,
        out_dir: cli.global.out.clone(),
        dry: false,
    };
    let partial = match &cli.command {
        Command::Validate { .. } => {
            println!(
                "config OK: {} seed(s), arms: {}",
                cfg.seeds.len(),
                arm_list(&cfg)
            );
            false
        }
        Command::Run { .. } => {
            let out = run_experiment(&cfg, &opts)?;
            print_report(&out.report);
            println!("wrote {}", out.out_dir.display());
            out.is_partial()
        }
        Command::Sweep { budgets, .. } => {
            if budgets.is_empty() {
                bail!(BenchError::from(ConfigError::Invalid(
                    "--budgets is empty".into()
                )));
            }
            let out = sweep_labeled_budget(&cfg, budgets, &opts)?;
            for (budget, o) in &out.budgets {
                println!("budget {budget}:");
                print_report(&o.report);
            }
            println!("wrote {}", out.out_dir.display());
            out.is_partial()
        }
        Command::ClusterTime { .. } => {
            let table = cluster_timing(&cfg, &opts).context("cluster timing")?;
            println!(
                "{:<18} {:>5} {:>7} {:>12} {:>12}",
                "method", "runs", "failed", "mean_s", "median_s"
            );
            for r in &table.rows {
                let s = |v: Option<f64>| v.map_or("-".to_string(), |x| format!("{x:.4}"));
                println!(
                    "{:<18} {:>5} {:>7} {:>12} {:>12}",
                    r.method.to_string(),
                    r.runs,
                    r.failed,
                    s(r.mean_fit_seconds),
                    s(r.median_fit_seconds)
                );
            }
            table.is_partial()
        }
    };
    Ok(if partial {
        ExitCode::from(3)
    } else {
        ExitCode::SUCCESS
    })
}

fn arm_list(cfg: &ExperimentConfig) -> String {
    ist_bench::runner::arms(cfg)
        .iter()
        .map(ToString::to_string)
        .collect::<Vec<_>>()
        .join(", ")
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(&cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            let config_error = e.downcast_ref::<ConfigError>().is_some()
                || e.downcast_ref::<BenchError>()
                    .is_some_and(BenchError::is_config_error);
            ExitCode::from(if config_error { 2 } else { 1 })
        }
    }
}
