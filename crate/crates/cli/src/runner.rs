//! Replicated experiment runs and their artifacts.
//!
//! Layout under the output directory:
//!
//! * `regret/<policy>_run<k>.csv`: `round,policy,run_id,cum_regret`
//! * `clusters/<policy>_run<k>.txt`: `seed: member,member,...` per seed
//! * `accuracy/<policy>_run<k>.csv`: `round,f1,precision,recall` at every
//!   checkpoint and at the end of the run
//! * `worlds/world_run<k>.txt`: the synthetic world of each run
//! * `summary.csv`: one row per (policy, run)
//! * `manifest.json`: config hash, seeds, termination rounds, skip counts

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use locb_core::clustering::{format_clusters, ClusteringConfig};
use locb_core::environment::{
    generate_synthetic, write_atomic, Environment, ReplayEnv, ReplayLog, SyntheticEnv, SyntheticWorld,
};
use locb_core::evaluation::{derive_ground_truth, f1_accuracy, Accuracy};
use locb_core::rng::{self, stream, Stream};
use locb_core::{
    simulate, ConfidenceConfig, LinUcbPolicy, LocbPolicy, Policy, PolicyKind, SimulationOptions,
    SimulationOutcome, UserId,
};
use rand::seq::index;
use rayon::prelude::*;
use serde::Serialize;

use crate::config::{EnvironmentSpec, ExperimentConfig, PolicySpec};
use crate::error::CliError;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunRecord {
    pub policy: String,
    pub kind: String,
    pub run_id: u64,
    /// Seed users (external labels), empty for non-clustering policies.
    pub seeds: Vec<u64>,
    pub rounds: u64,
    pub cum_regret: f64,
    pub terminated_round: Option<u64>,
    pub aborted: bool,
    pub skipped: u64,
    pub fallback_rounds: u64,
    #[serde(skip)]
    pub accuracy: Option<Accuracy>,
}

#[derive(Debug, Clone, Serialize)]
struct Manifest<'a> {
    name: &'a str,
    config_hash: String,
    rng_seed: u64,
    rng_family: &'static str,
    runs: u64,
    environment: &'a str,
    records: &'a [RunRecord],
    files: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct ExperimentReport {
    pub output_dir: PathBuf,
    pub config_hash: String,
    pub records: Vec<RunRecord>,
    pub files: Vec<PathBuf>,
}

impl ExperimentReport {
    pub fn any_aborted(&self) -> bool {
        self.records.iter().any(|r| r.aborted)
    }

    /// Mean accuracy and final regret of one policy over its runs.
    pub fn policy_means(&self, policy: &str) -> Option<PolicyMeans> {
        let recs: Vec<&RunRecord> = self.records.iter().filter(|r| r.policy == policy).collect();
        if recs.is_empty() {
            return None;
        }
        let k = recs.len() as f64;
        let acc: Vec<Accuracy> = recs.iter().filter_map(|r| r.accuracy).collect();
        let mean = |f: fn(&Accuracy) -> f64| {
            (!acc.is_empty()).then(|| acc.iter().map(f).sum::<f64>() / acc.len() as f64)
        };
        Some(PolicyMeans {
            runs: recs.len(),
            f1: mean(|a| a.f1),
            precision: mean(|a| a.precision),
            recall: mean(|a| a.recall),
            cum_regret: recs.iter().map(|r| r.cum_regret).sum::<f64>() / k,
        })
    }

    pub fn policies(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for r in &self.records {
            if !out.contains(&r.policy) {
                out.push(r.policy.clone());
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PolicyMeans {
    pub runs: usize,
    pub f1: Option<f64>,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub cum_regret: f64,
}

/// Reference partition and label mapping shared by every policy of a run.
struct RunContext {
    world: Option<SyntheticWorld>,
    truth: Vec<Vec<UserId>>,
}

enum Source {
    Synthetic,
    Replay(ReplayLog),
}

impl Source {
    fn label(&self, u: UserId) -> u64 {
        match self {
            Source::Synthetic => u as u64,
            Source::Replay(log) => log.labels()[u],
        }
    }
}

fn write_file(path: &Path, contents: &str) -> Result<(), CliError> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(CliError::io(dir))?;
    }
    write_atomic(path, contents.as_bytes())?;
    Ok(())
}

fn build_policy(
    spec: &PolicySpec,
    n: usize,
    d: usize,
    sigma: f64,
    seeds: &[UserId],
) -> Result<Box<dyn Policy>, CliError> {
    let alpha = spec.alpha.into();
    let kind = spec.kind()?;
    Ok(match kind {
        PolicyKind::LinUcbOne => Box::new(LinUcbPolicy::shared(d, alpha)?),
        PolicyKind::LinUcbInd => Box::new(LinUcbPolicy::individual(n, d, alpha)?),
        PolicyKind::Locb | PolicyKind::Nlocb => {
            let conf = ConfidenceConfig::new(spec.delta, n, sigma, d, spec.radius.into())?
                .with_lambda_min(spec.lambda_min)?;
            let cfg = ClusteringConfig {
                gamma: spec.gamma,
                tau: spec.tau,
                seeds: seeds.to_vec(),
            };
            if kind == PolicyKind::Locb {
                Box::new(LocbPolicy::new(n, &cfg, conf, alpha)?)
            } else {
                Box::new(LocbPolicy::naive(n, &cfg, conf, alpha)?)
            }
        }
    })
}

/// Seed users of a run: `count` users drawn uniformly without replacement
/// from the run's seed stream, in ascending order.
pub fn draw_seeds(master: u64, run: u64, n: usize, count: usize) -> Vec<UserId> {
    let mut s = index::sample(&mut stream(master, run, Stream::Seeds), n, count.min(n)).into_vec();
    s.sort_unstable();
    s
}

fn regret_csv(label: &str, run: u64, out: &SimulationOutcome, every: u64) -> String {
    let mut s = String::from("round,policy,run_id,cum_regret\n");
    let cum = out.regret.cumulative();
    for (i, c) in cum.iter().enumerate() {
        let round = i as u64 + 1;
        if round.is_multiple_of(every) || i + 1 == cum.len() {
            let _ = writeln!(s, "{round},{label},{run},{c}");
        }
    }
    s
}

fn accuracy_row(s: &mut String, round: u64, a: &Accuracy) {
    let _ = writeln!(s, "{round},{},{},{}", a.f1, a.precision, a.recall);
}

struct TaskResult {
    record: RunRecord,
    files: Vec<PathBuf>,
}

fn run_task(
    cfg: &ExperimentConfig,
    out_dir: &Path,
    source: &Source,
    ctx: &RunContext,
    spec: &PolicySpec,
    run: u64,
) -> Result<TaskResult, CliError> {
    let master = cfg.rng_seed;
    let kind = spec.kind()?;
    let label = spec.label();
    let rounds_rng = stream(master, run, Stream::Rounds);
    let mut env: Box<dyn Environment + '_> = match (source, &ctx.world) {
        (Source::Synthetic, Some(w)) => {
            Box::new(SyntheticEnv::new(w, rounds_rng, stream(master, run, Stream::Noise)))
        }
        (Source::Replay(log), _) => Box::new(ReplayEnv::new(log, rounds_rng, cfg.environment.arms())?),
        (Source::Synthetic, None) => unreachable!("synthetic runs always carry a world"),
    };
    let (n, d) = (env.n_users(), env.dim());
    let seeds = if kind.is_clustering() {
        draw_seeds(master, run, n, spec.seeds.unwrap_or(n))
    } else {
        Vec::new()
    };
    let mut policy = build_policy(spec, n, d, cfg.environment.sigma(), &seeds)?;
    let opts = SimulationOptions {
        horizon: cfg.horizon,
        until_termination: cfg.until_termination && kind.is_clustering(),
        round_cap: cfg.round_cap,
        checkpoint_every: cfg.checkpoint_every,
    };
    let outcome = simulate(env.as_mut(), policy.as_mut(), &opts)?;

    let mut files = Vec::new();
    let regret_path = out_dir.join("regret").join(format!("{label}_run{run}.csv"));
    write_file(&regret_path, &regret_csv(label, run, &outcome, cfg.regret_every))?;
    files.push(regret_path);

    let mut accuracy = None;
    if let Some(clusters) = &outcome.final_clusters {
        let path = out_dir.join("clusters").join(format!("{label}_run{run}.txt"));
        write_file(&path, &format_clusters(clusters, |u| source.label(u)))?;
        files.push(path);

        let mut csv = String::from("round,f1,precision,recall\n");
        for (t, snap) in &outcome.checkpoints {
            let sets: Vec<Vec<UserId>> = snap.iter().map(|c| c.1.clone()).collect();
            accuracy_row(&mut csv, *t, &f1_accuracy(&sets, &ctx.truth)?);
        }
        let sets: Vec<Vec<UserId>> = clusters.iter().map(|c| c.1.clone()).collect();
        let acc = f1_accuracy(&sets, &ctx.truth)?;
        accuracy_row(&mut csv, outcome.rounds(), &acc);
        accuracy = Some(acc);
        let path = out_dir.join("accuracy").join(format!("{label}_run{run}.csv"));
        write_file(&path, &csv)?;
        files.push(path);
    }

    Ok(TaskResult {
        record: RunRecord {
            policy: label.to_string(),
            kind: kind.as_str().to_string(),
            run_id: run,
            seeds: seeds.iter().map(|&u| source.label(u)).collect(),
            rounds: outcome.rounds(),
            cum_regret: outcome.regret.total(),
            terminated_round: outcome.terminated_round,
            aborted: outcome.aborted,
            skipped: outcome.skipped,
            fallback_rounds: outcome.fallback_rounds,
            accuracy,
        },
        files,
    })
}

fn fmt_opt<T: std::fmt::Display>(v: Option<T>) -> String {
    v.map(|v| v.to_string()).unwrap_or_default()
}

fn summary_csv(records: &[RunRecord]) -> String {
    let mut s = String::from(
        "policy,run_id,rounds,cum_regret,terminated_round,aborted,skipped,f1,precision,recall\n",
    );
    for r in records {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{},{},{}",
            r.policy,
            r.run_id,
            r.rounds,
            r.cum_regret,
            fmt_opt(r.terminated_round),
            r.aborted,
            r.skipped,
            fmt_opt(r.accuracy.map(|a| a.f1)),
            fmt_opt(r.accuracy.map(|a| a.precision)),
            fmt_opt(r.accuracy.map(|a| a.recall)),
        );
    }
    s
}

/// Ground-truth clusters of a replay log: k-means over the batch ridge
/// estimates, then the largest γ-cluster within each group.
pub fn replay_truth(log: &ReplayLog, k: usize, gamma: f64, master: u64) -> Result<Vec<Vec<UserId>>, CliError> {
    let thetas = log.batch_thetas();
    let k = k.min(thetas.len());
    let gt = derive_ground_truth(thetas, k, gamma, &mut stream(master, 0, Stream::Truth))?;
    Ok(gt.clusters)
}

/// Runs every (policy, run) pair, in parallel across pairs, and writes the
/// artifacts described in the module docs.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentReport, CliError> {
    cfg.validate()?;
    let out_dir = cfg.resolved_output_dir();
    fs::create_dir_all(&out_dir).map_err(CliError::io(&out_dir))?;
    let master = cfg.rng_seed;

    let source = match &cfg.environment {
        EnvironmentSpec::Synthetic { .. } => Source::Synthetic,
        EnvironmentSpec::Replay { path, .. } => Source::Replay(ReplayLog::load(path)?),
    };
    let replay_truth = match &source {
        Source::Replay(log) => Some(replay_truth(log, cfg.truth.k, cfg.truth.gamma, master)?),
        Source::Synthetic => None,
    };

    let contexts: Vec<RunContext> = (0..cfg.runs)
        .into_par_iter()
        .map(|run| -> Result<RunContext, CliError> {
            Ok(match cfg.environment.synthetic_params() {
                Some(p) => {
                    let world = generate_synthetic(&p, &mut stream(master, run, Stream::World))?;
                    RunContext {
                        truth: world.clusters.clone(),
                        world: Some(world),
                    }
                }
                None => RunContext {
                    world: None,
                    truth: replay_truth.clone().expect("replay truth"),
                },
            })
        })
        .collect::<Result<_, _>>()?;

    let mut files = Vec::new();
    for (run, ctx) in contexts.iter().enumerate() {
        if let Some(w) = &ctx.world {
            let path = out_dir.join("worlds").join(format!("world_run{run}.txt"));
            write_file(&path, &w.to_text())?;
            files.push(path);
        }
    }

    let tasks: Vec<(u64, &PolicySpec)> = (0..cfg.runs)
        .flat_map(|run| cfg.policies.iter().map(move |p| (run, p)))
        .collect();
    let results: Vec<TaskResult> = tasks
        .par_iter()
        .map(|&(run, spec)| run_task(cfg, &out_dir, &source, &contexts[run as usize], spec, run))
        .collect::<Result<_, _>>()?;

    let mut records = Vec::with_capacity(results.len());
    for r in results {
        files.extend(r.files);
        records.push(r.record);
    }
    records.sort_by(|a, b| {
        let pa = cfg.policies.iter().position(|p| p.label() == a.policy);
        let pb = cfg.policies.iter().position(|p| p.label() == b.policy);
        pa.cmp(&pb).then(a.run_id.cmp(&b.run_id))
    });

    let summary = out_dir.join("summary.csv");
    write_file(&summary, &summary_csv(&records))?;
    files.push(summary);

    let config_hash = cfg.hash();
    let rel: Vec<String> = files
        .iter()
        .map(|f| f.strip_prefix(&out_dir).unwrap_or(f).display().to_string())
        .collect();
    let manifest = Manifest {
        name: &cfg.name,
        config_hash: config_hash.clone(),
        rng_seed: master,
        rng_family: rng::RNG_FAMILY,
        runs: cfg.runs,
        environment: match cfg.environment {
            EnvironmentSpec::Synthetic { .. } => "synthetic",
            EnvironmentSpec::Replay { .. } => "replay",
        },
        records: &records,
        files: rel,
    };
    let json = serde_json::to_string_pretty(&manifest).expect("manifest serialises");
    let manifest_path = out_dir.join("manifest.json");
    write_file(&manifest_path, &(json + "\n"))?;
    files.push(manifest_path);

    Ok(ExperimentReport {
        output_dir: out_dir,
        config_hash,
        records,
        files,
    })
}
