//! One-parameter sweeps over the clustering policies of a config.

use std::fmt::Write as _;
use std::path::PathBuf;
use std::str::FromStr;

use crate::config::ExperimentConfig;
use crate::error::CliError;
use crate::runner::{run_experiment, ExperimentReport};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepAxis {
    /// Seed count |S|.
    SeedCount,
    Gamma,
}

impl SweepAxis {
    pub fn as_str(&self) -> &'static str {
        match self {
            SweepAxis::SeedCount => "seed_count",
            SweepAxis::Gamma => "gamma",
        }
    }
}

impl FromStr for SweepAxis {
    type Err = CliError;

    fn from_str(s: &str) -> Result<Self, CliError> {
        match s {
            "seed_count" => Ok(SweepAxis::SeedCount),
            "gamma" => Ok(SweepAxis::Gamma),
            other => Err(CliError::Usage(format!(
                "unknown sweep axis `{other}` (expected seed_count or gamma)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub value: String,
    pub policy: String,
    pub runs: usize,
    pub mean_f1: Option<f64>,
    pub mean_precision: Option<f64>,
    pub mean_recall: Option<f64>,
    pub mean_cum_regret: f64,
}

/// Config for one sweep point: the value applied to every clustering policy
/// and the output redirected to `<output_dir>/<axis>-<value>`.
pub fn sweep_point(cfg: &ExperimentConfig, axis: SweepAxis, value: &str) -> Result<ExperimentConfig, CliError> {
    let mut c = cfg.clone();
    let bad = |e: String| CliError::Usage(format!("bad {} value `{value}`: {e}", axis.as_str()));
    for p in &mut c.policies {
        if !p.kind()?.is_clustering() {
            continue;
        }
        match axis {
            SweepAxis::SeedCount => p.seeds = Some(value.parse().map_err(|e: std::num::ParseIntError| bad(e.to_string()))?),
            SweepAxis::Gamma => p.gamma = value.parse().map_err(|e: std::num::ParseFloatError| bad(e.to_string()))?,
        }
    }
    c.output_dir = cfg.output_dir.join(format!("{}-{value}", axis.as_str()));
    c.validate()?;
    Ok(c)
}

pub fn rows_for(value: &str, report: &ExperimentReport) -> Vec<SweepRow> {
    report
        .policies()
        .into_iter()
        .filter_map(|p| {
            let m = report.policy_means(&p)?;
            Some(SweepRow {
                value: value.to_string(),
                policy: p,
                runs: m.runs,
                mean_f1: m.f1,
                mean_precision: m.precision,
                mean_recall: m.recall,
                mean_cum_regret: m.cum_regret,
            })
        })
        .collect()
}

pub fn sweep_csv(axis: SweepAxis, rows: &[SweepRow]) -> String {
    let opt = |v: Option<f64>| v.map(|v| v.to_string()).unwrap_or_default();
    let mut s = format!(
        "{},policy,runs,mean_f1,mean_precision,mean_recall,mean_cum_regret\n",
        axis.as_str()
    );
    for r in rows {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{}",
            r.value,
            r.policy,
            r.runs,
            opt(r.mean_f1),
            opt(r.mean_precision),
            opt(r.mean_recall),
            r.mean_cum_regret
        );
    }
    s
}

#[derive(Debug, Clone)]
pub struct SweepReport {
    pub csv_path: PathBuf,
    pub rows: Vec<SweepRow>,
    pub reports: Vec<ExperimentReport>,
}

/// Runs one experiment per value and writes `sweep-<axis>.csv` with the
/// per-policy means of each point.
pub fn run_sweep(cfg: &ExperimentConfig, axis: SweepAxis, values: &[String]) -> Result<SweepReport, CliError> {
    if values.is_empty() {
        return Err(CliError::Usage("sweep needs at least one value".into()));
    }
    let points: Vec<ExperimentConfig> = values
        .iter()
        .map(|v| sweep_point(cfg, axis, v))
        .collect::<Result<_, _>>()?;
    let mut rows = Vec::new();
    let mut reports = Vec::new();
    for (v, c) in values.iter().zip(&points) {
        let report = run_experiment(c)?;
        rows.extend(rows_for(v, &report));
        reports.push(report);
    }
    let csv_path = cfg.resolved_output_dir().join(format!("sweep-{}.csv", axis.as_str()));
    std::fs::create_dir_all(csv_path.parent().expect("has parent"))
        .map_err(CliError::io(cfg.resolved_output_dir()))?;
    locb_core::environment::write_atomic(&csv_path, sweep_csv(axis, &rows).as_bytes())?;
    Ok(SweepReport {
        csv_path,
        rows,
        reports,
    })
}
