use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use locb_cli::{run_experiment, run_sweep, CliError, ExperimentConfig, ExperimentReport, SweepAxis, EXIT_ROUND_CAP};

#[derive(Parser)]
#[command(name = "locb", version, about = "Local clustering contextual bandit experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every policy of a config for the configured number of runs.
    Run {
        config: PathBuf,
        /// Override the config's master seed.
        #[arg(long)]
        rng_seed: Option<u64>,
    },
    /// Repeat a config over values of one clustering parameter.
    Sweep {
        config: PathBuf,
        /// `seed_count` or `gamma`.
        #[arg(long)]
        axis: String,
        /// Comma-separated values.
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<String>,
        #[arg(long)]
        rng_seed: Option<u64>,
    },
    /// Parse and check a config without running it.
    Validate { config: PathBuf },
    /// Derive ground-truth clusters from a replay log.
    Truth {
        log: PathBuf,
        #[arg(long, default_value_t = 5)]
        k: usize,
        #[arg(long, default_value_t = 0.2)]
        gamma: f64,
        /// Destination file (defaults to `<log>.truth`).
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        rng_seed: u64,
    },
}

fn load(path: &Path, seed: Option<u64>) -> Result<ExperimentConfig, CliError> {
    let mut cfg = ExperimentConfig::load(path)?;
    if let Some(s) = seed {
        cfg.rng_seed = s;
    }
    Ok(cfg)
}

fn report_runs(report: &ExperimentReport) {
    for r in &report.records {
        let term = r.terminated_round.map(|t| t.to_string()).unwrap_or_else(|| "-".into());
        let acc = r
            .accuracy
            .map(|a| format!(" f1={:.3} precision={:.3} recall={:.3}", a.f1, a.precision, a.recall))
            .unwrap_or_default();
        let flag = if r.aborted { " ABORTED (round cap)" } else { "" };
        println!(
            "{} run {}: rounds={} regret={:.3} terminated={term}{acc}{flag}",
            r.policy, r.run_id, r.rounds, r.cum_regret
        );
    }
    println!("artifacts in {}", report.output_dir.display());
}

fn execute(cli: Cli) -> Result<i32, CliError> {
    match cli.command {
        Command::Run { config, rng_seed } => {
            let cfg = load(&config, rng_seed)?;
            let report = run_experiment(&cfg)?;
            report_runs(&report);
            Ok(if report.any_aborted() { EXIT_ROUND_CAP } else { 0 })
        }
        Command::Sweep {
            config,
            axis,
            values,
            rng_seed,
        } => {
            let cfg = load(&config, rng_seed)?;
            let axis: SweepAxis = axis.parse()?;
            let sweep = run_sweep(&cfg, axis, &values)?;
            for r in &sweep.rows {
                let f1 = r.mean_f1.map(|v| format!(" mean_f1={v:.3}")).unwrap_or_default();
                println!(
                    "{}={} {}:{f1} mean_regret={:.3}",
                    axis.as_str(),
                    r.value,
                    r.policy,
                    r.mean_cum_regret
                );
            }
            println!("wrote {}", sweep.csv_path.display());
            let aborted = sweep.reports.iter().any(|r| r.any_aborted());
            Ok(if aborted { EXIT_ROUND_CAP } else { 0 })
        }
        Command::Validate { config } => {
            let cfg = ExperimentConfig::load(&config)?;
            println!(
                "{}: ok ({} policies, {} runs, hash {})",
                config.display(),
                cfg.policies.len(),
                cfg.runs,
                cfg.hash()
            );
            Ok(0)
        }
        Command::Truth {
            log,
            k,
            gamma,
            out,
            rng_seed,
        } => {
            let out = out.unwrap_or_else(|| {
                let mut p = log.clone().into_os_string();
                p.push(".truth");
                p.into()
            });
            let clusters = locb_cli::truth::write_truth(&log, k, gamma, rng_seed, &out)?;
            println!("{} clusters written to {}", clusters.len(), out.display());
            Ok(0)
        }
    }
}

fn main() -> ExitCode {
    match execute(Cli::parse()) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
