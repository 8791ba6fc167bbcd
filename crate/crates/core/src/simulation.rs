//! The sequential round loop.

use crate::environment::Environment;
use crate::error::Result;
use crate::evaluation::RegretLedger;
use crate::policy::Policy;
use crate::UserId;

#[derive(Debug, Clone, PartialEq)]
pub struct SimulationOptions {
    /// Rounds to play when not running until termination.
    pub horizon: u64,
    /// Keep playing until the policy's clustering terminates, ignoring the
    /// horizon, up to `round_cap` rounds.
    pub until_termination: bool,
    pub round_cap: u64,
    /// Snapshot the policy's clusters every this many rounds (0 = never).
    pub checkpoint_every: u64,
}

impl SimulationOptions {
    pub fn horizon(horizon: u64) -> Self {
        Self {
            horizon,
            until_termination: false,
            round_cap: 1_000_000,
            checkpoint_every: 0,
        }
    }

    pub fn until_termination(round_cap: u64) -> Self {
        Self {
            horizon: 0,
            until_termination: true,
            round_cap,
            checkpoint_every: 0,
        }
    }
}

pub type ClusterSnapshot = Vec<(UserId, Vec<UserId>)>;

#[derive(Debug, Clone, PartialEq)]
pub struct SimulationOutcome {
    pub regret: RegretLedger,
    /// Arm index chosen in every round.
    pub choices: Vec<usize>,
    pub users: Vec<UserId>,
    /// Rounds in which the policy fell back to single-user selection.
    pub fallback_rounds: u64,
    pub terminated_round: Option<u64>,
    /// The round cap was hit before the clustering terminated.
    pub aborted: bool,
    pub checkpoints: Vec<(u64, ClusterSnapshot)>,
    pub skipped: u64,
    pub final_clusters: Option<ClusterSnapshot>,
}

impl SimulationOutcome {
    pub fn rounds(&self) -> u64 {
        self.choices.len() as u64
    }
}

/// Plays rounds `t = 1, 2, …`: draw context, select, realize reward,
/// update the policy, account regret.
pub fn simulate(
    env: &mut dyn Environment,
    policy: &mut dyn Policy,
    opts: &SimulationOptions,
) -> Result<SimulationOutcome> {
    let mut out = SimulationOutcome {
        regret: RegretLedger::new(),
        choices: Vec::new(),
        users: Vec::new(),
        fallback_rounds: 0,
        terminated_round: policy.terminated_round(),
        aborted: false,
        checkpoints: Vec::new(),
        skipped: 0,
        final_clusters: None,
    };
    let limit = if opts.until_termination {
        opts.round_cap
    } else {
        opts.horizon
    };
    let mut t = 0;
    while t < limit {
        if opts.until_termination && policy.terminated_round().is_some() {
            break;
        }
        t += 1;
        let round = env.next_round()?;
        let decision = policy.select(t, round.user, &round.arms)?;
        let chosen = decision.chosen_arm_index;
        let reward = env.reward(&round, chosen);
        policy.observe(t, round.user, &round.arms[chosen], reward)?;
        out.regret.push(env.regret(&round, chosen));
        out.choices.push(chosen);
        out.users.push(round.user);
        if decision.fallback_used {
            out.fallback_rounds += 1;
        }
        if opts.checkpoint_every > 0 && t % opts.checkpoint_every == 0 {
            if let Some(c) = policy.clusters() {
                out.checkpoints.push((t, c));
            }
        }
    }
    out.terminated_round = policy.terminated_round();
    out.aborted = opts.until_termination && out.terminated_round.is_none();
    out.skipped = env.skipped();
    out.final_clusters = policy.clusters();
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::clustering::ClusteringConfig;
    use crate::environment::{generate_synthetic, SyntheticEnv, SyntheticParams};
    use crate::estimator::{ConfidenceConfig, RadiusMode};
    use crate::policy::{AlphaSchedule, LinUcbPolicy, LocbPolicy};
    use crate::rng::{stream, Stream};

    fn world(n: usize) -> crate::SyntheticWorld {
        let p = SyntheticParams {
            n,
            n_clusters: 2,
            ..SyntheticParams::default()
        };
        generate_synthetic(&p, &mut stream(1, 0, Stream::World)).unwrap()
    }

    #[test]
    fn horizon_run_records_every_round() {
        let w = world(10);
        let mut env = SyntheticEnv::new(&w, stream(1, 0, Stream::Rounds), stream(1, 0, Stream::Noise));
        let mut pol = LinUcbPolicy::individual(10, 6, AlphaSchedule::PracticalRegret).unwrap();
        let out = simulate(&mut env, &mut pol, &SimulationOptions::horizon(500)).unwrap();
        assert_eq!(out.rounds(), 500);
        assert_eq!(out.regret.rounds(), 500);
        assert!(out.regret.instantaneous().iter().all(|&r| r >= 0.0));
        assert!(!out.aborted);
        assert!(out.final_clusters.is_none());
    }

    #[test]
    fn run_until_termination_and_cap() {
        let w = world(10);
        let conf = ConfidenceConfig::new(0.1, 10, 0.1, 6, RadiusMode::PracticalClustering).unwrap();
        let cfg = ClusteringConfig {
            gamma: 0.2,
            tau: 10.0,
            seeds: (0..10).collect(),
        };
        let mk = || LocbPolicy::new(10, &cfg, conf.clone(), AlphaSchedule::PracticalRegret).unwrap();

        let mut env = SyntheticEnv::new(&w, stream(2, 0, Stream::Rounds), stream(2, 0, Stream::Noise));
        let mut pol = mk();
        let mut opts = SimulationOptions::until_termination(1_000_000);
        opts.checkpoint_every = 100;
        let out = simulate(&mut env, &mut pol, &opts).unwrap();
        let t = out.terminated_round.expect("terminates under the cap");
        assert_eq!(out.rounds(), t);
        assert!(!out.aborted);
        assert_eq!(out.checkpoints.len() as u64, t / 100);
        assert_eq!(out.final_clusters.unwrap().len(), 10);

        let mut env = SyntheticEnv::new(&w, stream(2, 0, Stream::Rounds), stream(2, 0, Stream::Noise));
        let mut pol = mk();
        let out = simulate(&mut env, &mut pol, &SimulationOptions::until_termination(10)).unwrap();
        assert!(out.aborted);
        assert_eq!(out.rounds(), 10);
    }
}
