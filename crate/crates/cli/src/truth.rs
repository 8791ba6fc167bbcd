//! Ground-truth files for replay logs.

use std::fmt::Write as _;
use std::path::Path;

use locb_core::environment::{write_atomic, ReplayLog};

use crate::error::CliError;
use crate::runner::replay_truth;

/// Text form: a `# k=<K> gamma=<γ>` comment, then one
/// `<cluster>: label,label,...` line per ground-truth cluster.
pub fn truth_text(log: &ReplayLog, clusters: &[Vec<usize>], k: usize, gamma: f64) -> String {
    let mut s = format!("# k={k} gamma={gamma}\n");
    for (c, members) in clusters.iter().enumerate() {
        let labels: Vec<String> = members.iter().map(|&u| log.labels()[u].to_string()).collect();
        let _ = writeln!(s, "{c}: {}", labels.join(","));
    }
    s
}

/// Derives the ground truth of `log_path` and writes it to `out`.
pub fn write_truth(log_path: &Path, k: usize, gamma: f64, seed: u64, out: &Path) -> Result<Vec<Vec<usize>>, CliError> {
    if k == 0 {
        return Err(CliError::config("k", "must be at least 1"));
    }
    if gamma.is_nan() || gamma <= 0.0 {
        return Err(CliError::config("gamma", "must be positive"));
    }
    let log = ReplayLog::load(log_path)?;
    let clusters = replay_truth(&log, k, gamma, seed)?;
    write_atomic(out, truth_text(&log, &clusters, k, gamma).as_bytes())?;
    Ok(clusters)
}
