//! Experiment configuration (TOML).
//!
//! ```toml
//! name = "smoke"
//! horizon = 1000
//! runs = 1
//! rng_seed = 7
//! output_dir = "out/smoke"
//!
//! [environment]
//! kind = "synthetic"
//! n = 10
//! n_clusters = 2
//!
//! [[policies]]
//! kind = "linucb-ind"
//! ```

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use locb_core::environment::SyntheticParams;
use locb_core::{AlphaSchedule, PolicyKind, RadiusMode};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::CliError;

/// Overrides relative output directories when set.
pub const OUTPUT_ROOT_ENV: &str = "LOCB_OUTPUT_ROOT";

fn default_runs() -> u64 {
    1
}
fn default_round_cap() -> u64 {
    1_000_000
}
fn default_one() -> u64 {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub name: String,
    /// Rounds per run; ignored by runs that play until termination.
    #[serde(default)]
    pub horizon: u64,
    #[serde(default = "default_runs")]
    pub runs: u64,
    #[serde(default)]
    pub rng_seed: u64,
    #[serde(default)]
    pub output_dir: PathBuf,
    /// Accuracy snapshot interval in rounds (0 disables snapshots).
    #[serde(default)]
    pub checkpoint_every: u64,
    /// Play until every clustering policy terminates instead of `horizon`.
    #[serde(default)]
    pub until_termination: bool,
    #[serde(default = "default_round_cap")]
    pub round_cap: u64,
    /// Write every k-th round to the regret CSVs (the last round always).
    #[serde(default = "default_one")]
    pub regret_every: u64,
    pub environment: EnvironmentSpec,
    #[serde(default)]
    pub truth: TruthSpec,
    pub policies: Vec<PolicySpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum EnvironmentSpec {
    Synthetic {
        #[serde(default = "d_n")]
        n: usize,
        #[serde(default = "d_clusters")]
        n_clusters: usize,
        #[serde(default = "d_size_min")]
        size_min: usize,
        #[serde(default = "d_size_max")]
        size_max: usize,
        #[serde(default = "d_d_raw")]
        d_raw: usize,
        #[serde(default = "d_gamma_true")]
        gamma_true: f64,
        #[serde(default = "d_sigma")]
        sigma: f64,
        #[serde(default = "d_arms")]
        arms: usize,
    },
    Replay {
        path: PathBuf,
        #[serde(default = "d_arms")]
        arms: usize,
        /// Noise level assumed by the confidence radii.
        #[serde(default = "d_sigma")]
        sigma: f64,
    },
}

fn d_n() -> usize {
    SyntheticParams::default().n
}
fn d_clusters() -> usize {
    SyntheticParams::default().n_clusters
}
fn d_size_min() -> usize {
    SyntheticParams::default().size_min
}
fn d_size_max() -> usize {
    SyntheticParams::default().size_max
}
fn d_d_raw() -> usize {
    SyntheticParams::default().d_raw
}
fn d_gamma_true() -> f64 {
    SyntheticParams::default().gamma_true
}
fn d_sigma() -> f64 {
    SyntheticParams::default().sigma
}
fn d_arms() -> usize {
    SyntheticParams::default().arms
}

impl EnvironmentSpec {
    pub fn synthetic_params(&self) -> Option<SyntheticParams> {
        match *self {
            EnvironmentSpec::Synthetic {
                n,
                n_clusters,
                size_min,
                size_max,
                d_raw,
                gamma_true,
                sigma,
                arms,
            } => Some(SyntheticParams {
                n,
                n_clusters,
                size_min,
                size_max,
                d_raw,
                gamma_true,
                sigma,
                arms,
            }),
            EnvironmentSpec::Replay { .. } => None,
        }
    }

    pub fn sigma(&self) -> f64 {
        match *self {
            EnvironmentSpec::Synthetic { sigma, .. } | EnvironmentSpec::Replay { sigma, .. } => sigma,
        }
    }

    pub fn arms(&self) -> usize {
        match *self {
            EnvironmentSpec::Synthetic { arms, .. } | EnvironmentSpec::Replay { arms, .. } => arms,
        }
    }
}

/// Ground truth for replay logs: k-means over batch estimates, then the
/// largest γ-cluster per group. Synthetic runs use the generator partition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TruthSpec {
    #[serde(default = "d_truth_k")]
    pub k: usize,
    #[serde(default = "d_gamma_true")]
    pub gamma: f64,
}

fn d_truth_k() -> usize {
    5
}

impl Default for TruthSpec {
    fn default() -> Self {
        Self {
            k: d_truth_k(),
            gamma: d_gamma_true(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RadiusSpec {
    Theoretical,
    PracticalClustering,
    PracticalRegret,
}

impl From<RadiusSpec> for RadiusMode {
    fn from(r: RadiusSpec) -> Self {
        match r {
            RadiusSpec::Theoretical => RadiusMode::Theoretical,
            RadiusSpec::PracticalClustering => RadiusMode::PracticalClustering,
            RadiusSpec::PracticalRegret => RadiusMode::PracticalRegret,
        }
    }
}

/// `"practical_regret"`, `"theory"` (scale 1), `{ theory = <scale> }` or a
/// constant number.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum AlphaSpec {
    Constant(f64),
    Named(AlphaName),
    Theory { theory: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AlphaName {
    PracticalRegret,
    Theory,
}

impl Default for AlphaSpec {
    fn default() -> Self {
        AlphaSpec::Named(AlphaName::PracticalRegret)
    }
}

impl From<AlphaSpec> for AlphaSchedule {
    fn from(a: AlphaSpec) -> Self {
        match a {
            AlphaSpec::Constant(c) => AlphaSchedule::Constant(c),
            AlphaSpec::Named(AlphaName::PracticalRegret) => AlphaSchedule::PracticalRegret,
            AlphaSpec::Named(AlphaName::Theory) => AlphaSchedule::Theory { scale: 1.0 },
            AlphaSpec::Theory { theory } => AlphaSchedule::Theory { scale: theory },
        }
    }
}

fn d_delta() -> f64 {
    0.1
}
fn d_tau() -> f64 {
    1.0
}
fn d_lambda_min() -> f64 {
    0.5
}
fn d_radius() -> RadiusSpec {
    RadiusSpec::PracticalClustering
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolicySpec {
    /// `locb`, `nlocb`, `linucb-one` or `linucb-ind`.
    pub kind: String,
    /// Output label; defaults to `kind`.
    #[serde(default)]
    pub label: Option<String>,
    #[serde(default = "d_gamma_true")]
    pub gamma: f64,
    #[serde(default = "d_tau")]
    pub tau: f64,
    /// Seed count |S|, drawn uniformly without replacement per run;
    /// defaults to all users.
    #[serde(default)]
    pub seeds: Option<usize>,
    #[serde(default = "d_radius")]
    pub radius: RadiusSpec,
    #[serde(default)]
    pub alpha: AlphaSpec,
    #[serde(default = "d_delta")]
    pub delta: f64,
    #[serde(default = "d_lambda_min")]
    pub lambda_min: f64,
}

impl PolicySpec {
    pub fn kind(&self) -> Result<PolicyKind, CliError> {
        self.kind
            .parse()
            .map_err(|e: locb_core::Error| CliError::config("kind", e.to_string()))
    }

    pub fn label(&self) -> &str {
        self.label.as_deref().unwrap_or(&self.kind)
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::Toml(e.to_string()))
    }

    /// Reads, parses and validates a config; relative replay paths are
    /// resolved against the config file's directory.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path).map_err(|source| CliError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let mut cfg = Self::from_toml(&text).map_err(|e| match e {
            CliError::Toml(m) => CliError::Toml(format!("{}: {m}", path.display())),
            other => other,
        })?;
        if let EnvironmentSpec::Replay { path: log, .. } = &mut cfg.environment {
            if log.is_relative() {
                if let Some(dir) = path.parent() {
                    *log = dir.join(&*log);
                }
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        if self.runs == 0 {
            return Err(CliError::config("runs", "must be at least 1"));
        }
        if !self.until_termination && self.horizon == 0 {
            return Err(CliError::config("horizon", "must be at least 1"));
        }
        if self.until_termination
            && self.horizon == 0
            && self
                .policies
                .iter()
                .any(|p| p.kind().is_ok_and(|k| !k.is_clustering()))
        {
            return Err(CliError::config(
                "horizon",
                "non-clustering policies need a horizon when running until termination",
            ));
        }
        if self.until_termination && self.round_cap == 0 {
            return Err(CliError::config("round_cap", "must be at least 1"));
        }
        if self.regret_every == 0 {
            return Err(CliError::config("regret_every", "must be at least 1"));
        }
        match &self.environment {
            EnvironmentSpec::Synthetic { .. } => {
                let p = self.environment.synthetic_params().expect("synthetic");
                p.validate()
                    .map_err(|e| CliError::config("environment", e.to_string()))?;
            }
            EnvironmentSpec::Replay { path, arms, sigma } => {
                if !path.is_file() {
                    return Err(CliError::config(
                        "environment.path",
                        format!("replay log {} does not exist", path.display()),
                    ));
                }
                if *arms == 0 {
                    return Err(CliError::config("environment.arms", "must be at least 1"));
                }
                if !(sigma.is_finite() && *sigma >= 0.0) {
                    return Err(CliError::config("environment.sigma", "must be non-negative"));
                }
            }
        }
        if self.truth.k == 0 {
            return Err(CliError::config("truth.k", "must be at least 1"));
        }
        if self.truth.gamma.is_nan() || self.truth.gamma <= 0.0 {
            return Err(CliError::config("truth.gamma", "must be positive"));
        }
        if self.policies.is_empty() {
            return Err(CliError::config("policies", "at least one policy is required"));
        }
        let mut labels = BTreeSet::new();
        for (i, p) in self.policies.iter().enumerate() {
            let key = |field: &str| format!("policies[{i}].{field}");
            let kind = p
                .kind()
                .map_err(|e| CliError::Config { key: key("kind"), message: e.to_string() })?;
            if !labels.insert(p.label().to_string()) {
                return Err(CliError::Config {
                    key: key("label"),
                    message: format!("duplicate policy label `{}`", p.label()),
                });
            }
            if !p
                .label()
                .chars()
                .all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_' || c == '.')
            {
                return Err(CliError::Config {
                    key: key("label"),
                    message: "labels may only contain ASCII letters, digits, '-', '_' and '.'".into(),
                });
            }
            if let AlphaSpec::Constant(a) | AlphaSpec::Theory { theory: a } = p.alpha {
                if !(a.is_finite() && a >= 0.0) {
                    return Err(CliError::Config { key: key("alpha"), message: "must be non-negative".into() });
                }
            }
            if !kind.is_clustering() {
                continue;
            }
            if !(p.gamma > 0.0 && p.gamma.is_finite()) {
                return Err(CliError::Config { key: key("gamma"), message: "must be positive".into() });
            }
            if !(p.tau > 0.0 && p.tau.is_finite()) {
                return Err(CliError::Config { key: key("tau"), message: "must be positive".into() });
            }
            if !(p.delta > 0.0 && p.delta < 1.0) {
                return Err(CliError::Config { key: key("delta"), message: "must lie in (0, 1)".into() });
            }
            if !(p.lambda_min > 0.0 && p.lambda_min.is_finite()) {
                return Err(CliError::Config { key: key("lambda_min"), message: "must be positive".into() });
            }
            if let (Some(s), EnvironmentSpec::Synthetic { n, .. }) = (p.seeds, &self.environment) {
                if s > *n {
                    return Err(CliError::Config {
                        key: key("seeds"),
                        message: format!("{s} seeds requested for {n} users"),
                    });
                }
            }
        }
        Ok(())
    }

    /// SHA-256 over the canonical JSON form of every field that affects
    /// results (the name and output directory are excluded).
    pub fn hash(&self) -> String {
        let mut canon = self.clone();
        canon.name.clear();
        canon.output_dir = PathBuf::new();
        let json = serde_json::to_vec(&canon).expect("config serialises");
        hex::encode(Sha256::digest(&json))
    }

    /// Output directory after applying the [`OUTPUT_ROOT_ENV`] override.
    pub fn resolved_output_dir(&self) -> PathBuf {
        match std::env::var_os(OUTPUT_ROOT_ENV) {
            Some(root) if self.output_dir.is_relative() => PathBuf::from(root).join(&self.output_dir),
            _ => self.output_dir.clone(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
        horizon = 100
        [environment]
        kind = "synthetic"
        n = 10
        n_clusters = 2
        [[policies]]
        kind = "linucb-ind"
    "#;

    #[test]
    fn minimal_config_uses_defaults() {
        let cfg = ExperimentConfig::from_toml(MINIMAL).unwrap();
        cfg.validate().unwrap();
        assert_eq!(cfg.runs, 1);
        assert_eq!(cfg.policies[0].label(), "linucb-ind");
        assert_eq!(cfg.environment.sigma(), 0.1);
        assert_eq!(cfg.environment.arms(), 10);
    }

    #[test]
    fn alpha_forms() {
        let parse = |s: &str| -> AlphaSpec {
            let cfg = ExperimentConfig::from_toml(&format!(
                "{MINIMAL}\n[[policies]]\nkind = \"locb\"\nlabel = \"x\"\nalpha = {s}\n"
            ))
            .unwrap();
            cfg.policies[1].alpha
        };
        assert_eq!(parse("\"practical_regret\""), AlphaSpec::Named(AlphaName::PracticalRegret));
        assert_eq!(parse("0.25"), AlphaSpec::Constant(0.25));
        assert_eq!(parse("{ theory = 0.1 }"), AlphaSpec::Theory { theory: 0.1 });
        assert_eq!(
            AlphaSchedule::from(parse("\"theory\"")),
            AlphaSchedule::Theory { scale: 1.0 }
        );
    }

    fn key_of(text: &str) -> String {
        match ExperimentConfig::from_toml(text).and_then(|c| c.validate()) {
            Err(CliError::Config { key, .. }) => key,
            other => panic!("expected config error, got {other:?}"),
        }
    }

    #[test]
    fn validation_names_the_key() {
        assert_eq!(key_of(&MINIMAL.replace("horizon = 100", "horizon = 0")), "horizon");
        assert_eq!(key_of(&format!("runs = 0\n{MINIMAL}")), "runs");
        assert_eq!(
            key_of(&format!("{MINIMAL}\n[[policies]]\nkind = \"locb\"\ntau = -1\n")),
            "policies[1].tau"
        );
        assert_eq!(
            key_of(&format!("{MINIMAL}\n[[policies]]\nkind = \"locb\"\nseeds = 11\n")),
            "policies[1].seeds"
        );
        assert_eq!(key_of(&format!("{MINIMAL}\n[[policies]]\nkind = \"linucb-ind\"\n")), "policies[1].label");
        assert_eq!(key_of(&format!("{MINIMAL}\n[[policies]]\nkind = \"club\"\n")), "policies[1].kind");
        assert_eq!(key_of(&MINIMAL.replace("n = 10", "n = 3")), "environment");
    }

    #[test]
    fn unknown_keys_rejected() {
        let err = ExperimentConfig::from_toml(&format!("horizn = 5\n{MINIMAL}")).unwrap_err();
        assert!(err.to_string().contains("horizn"), "{err}");
    }

    #[test]
    fn hash_tracks_semantic_fields_only() {
        let a = ExperimentConfig::from_toml(MINIMAL).unwrap();
        let mut b = a.clone();
        b.name = "other".into();
        b.output_dir = "elsewhere".into();
        assert_eq!(a.hash(), b.hash());
        b.horizon += 1;
        assert_ne!(a.hash(), b.hash());
        let mut c = a.clone();
        c.rng_seed = 9;
        assert_ne!(a.hash(), c.hash());
        let mut d = a.clone();
        d.policies[0].alpha = AlphaSpec::Constant(0.3);
        assert_ne!(a.hash(), d.hash());
    }
}
