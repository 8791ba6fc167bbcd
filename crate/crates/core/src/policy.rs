//! Arm-selection policies.
//!
//! [`LocbPolicy`] couples the clustering module with overlapping-cluster UCB
//! selection: for the served user it maximises the cluster-averaged index
//! `θ̂_Nᵀx + CB_N(x)` jointly over the arms and over every seed whose
//! neighbourhood currently contains the user. When no neighbourhood contains
//! the user it falls back to the user's own LinUCB index.
//!
//! All arg-max operations break ties towards the lowest index; scores within
//! [`TIE_TOLERANCE`] (relative) of the incumbent count as ties.

use std::fmt;
use std::str::FromStr;

use crate::clustering::{
    self, ClusteringConfig, MemberSet, SeedClusterState, StopRule, SupRadiusRule,
};
use crate::error::{Error, Result};
use crate::estimator::{radius_practical_regret, ConfidenceConfig, UserRidgeState};
use crate::linalg;
use crate::UserId;

pub const TIE_TOLERANCE: f64 = 1e-12;

#[inline]
fn beats(score: f64, best: f64) -> bool {
    score > best + TIE_TOLERANCE * (1.0 + best.abs())
}

#[derive(Debug, Clone, PartialEq)]
pub struct PolicyDecision {
    pub chosen_arm_index: usize,
    /// The maximised UCB value.
    pub score: f64,
    /// The maximising seed, when a cluster index was used.
    pub chosen_seed: Option<UserId>,
    /// `true` when the decision used an individual (non-cluster) index.
    pub fallback_used: bool,
}

/// Exploration multiplier `α_t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum AlphaSchedule {
    /// `√((1 + log(1 + t)) / (1 + t))`.
    PracticalRegret,
    /// `scale · √(d · log(1 + t))`.
    Theory { scale: f64 },
    Constant(f64),
}

impl AlphaSchedule {
    pub fn alpha(&self, t: u64, d: usize) -> f64 {
        match *self {
            AlphaSchedule::PracticalRegret => radius_practical_regret(t as f64),
            AlphaSchedule::Theory { scale } => scale * (d as f64 * (t as f64).ln_1p()).sqrt(),
            AlphaSchedule::Constant(a) => a,
        }
    }
}

/// `θ̂ᵀx + α √(xᵀ A⁻¹ x)`.
#[inline]
pub fn linucb_index(state: &UserRidgeState, x: &[f64], alpha: f64) -> f64 {
    linalg::dot(state.theta_hat(), x) + alpha * state.acc().quad_form_unchecked(x).sqrt()
}

fn check_arms(arms: &[Vec<f64>], d: usize) -> Result<()> {
    if arms.is_empty() {
        return Err(Error::EmptyArmSet);
    }
    for a in arms {
        linalg::check_dim(d, a.len())?;
    }
    Ok(())
}

/// LinUCB selection on a single ridge state.
pub fn select_arm_linucb(
    state: &UserRidgeState,
    arms: &[Vec<f64>],
    alpha: f64,
) -> Result<PolicyDecision> {
    check_arms(arms, state.dim())?;
    let mut best = 0;
    let mut best_score = linucb_index(state, &arms[0], alpha);
    for (a, x) in arms.iter().enumerate().skip(1) {
        let s = linucb_index(state, x, alpha);
        if beats(s, best_score) {
            best = a;
            best_score = s;
        }
    }
    Ok(PolicyDecision {
        chosen_arm_index: best,
        score: best_score,
        chosen_seed: None,
        fallback_used: true,
    })
}

/// Slots of the seeds whose neighbourhood currently contains `user`.
pub fn candidate_seeds(user: UserId, states: &[SeedClusterState]) -> Vec<usize> {
    states
        .iter()
        .enumerate()
        .filter_map(|(slot, s)| s.members().contains(user).then_some(slot))
        .collect()
}

/// Uniform average of member estimates, with the matching averaged bonus.
#[derive(Debug, Clone)]
pub struct ClusterEstimate<'a> {
    pub theta: Vec<f64>,
    members: Vec<&'a UserRidgeState>,
}

impl ClusterEstimate<'_> {
    /// `(1/|N|) Σ α √(xᵀ A_j⁻¹ x)`.
    pub fn reward_cb(&self, x: &[f64], alpha: f64) -> f64 {
        let sum: f64 = self
            .members
            .iter()
            .map(|u| alpha * u.acc().quad_form_unchecked(x).sqrt())
            .sum();
        sum / self.members.len() as f64
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }
}

pub fn cluster_estimate<'a>(
    members: &MemberSet,
    users: &'a [UserRidgeState],
) -> Result<ClusterEstimate<'a>> {
    if members.is_empty() {
        return Err(Error::EmptyMembers);
    }
    let d = users[0].dim();
    let mut theta = vec![0.0; d];
    let refs: Vec<&UserRidgeState> = members.iter().map(|i| &users[i]).collect();
    for u in &refs {
        linalg::axpy(1.0, u.theta_hat(), &mut theta);
    }
    let k = refs.len() as f64;
    theta.iter_mut().for_each(|v| *v /= k);
    Ok(ClusterEstimate { theta, members: refs })
}

/// Overlapping-cluster UCB selection for the served user `user`.
///
/// Maximises `θ̂_Nᵀx + CB_N(x)` over all `(arm, candidate seed)` pairs,
/// scanning arms in the outer loop. Falls back to the user's own LinUCB
/// index when no neighbourhood contains the user.
pub fn select_arm_locb(
    user: UserId,
    arms: &[Vec<f64>],
    states: &[SeedClusterState],
    users: &[UserRidgeState],
    alpha: f64,
) -> Result<PolicyDecision> {
    check_arms(arms, users[user].dim())?;
    let cands = candidate_seeds(user, states);
    if cands.is_empty() {
        return select_arm_linucb(&users[user], arms, alpha);
    }

    let k = arms.len();
    // per-user (Σ over arms) mean and bonus terms, computed on demand
    let mut per_user: Vec<Option<Vec<(f64, f64)>>> = vec![None; users.len()];
    // scores[c * k + a]
    let mut scores = vec![0.0; cands.len() * k];
    let mut mean_sum = vec![0.0; k];
    let mut cb_sum = vec![0.0; k];
    for (c, &slot) in cands.iter().enumerate() {
        let members = states[slot].members();
        mean_sum.iter_mut().for_each(|v| *v = 0.0);
        cb_sum.iter_mut().for_each(|v| *v = 0.0);
        for j in members.iter() {
            let terms = per_user[j].get_or_insert_with(|| {
                let u = &users[j];
                arms.iter()
                    .map(|x| {
                        (
                            linalg::dot(u.theta_hat(), x),
                            alpha * u.acc().quad_form_unchecked(x).sqrt(),
                        )
                    })
                    .collect()
            });
            for (a, &(mean, cb)) in terms.iter().enumerate() {
                mean_sum[a] += mean;
                cb_sum[a] += cb;
            }
        }
        let size = members.len() as f64;
        for a in 0..k {
            scores[c * k + a] = mean_sum[a] / size + cb_sum[a] / size;
        }
    }

    let mut best = (0usize, 0usize);
    let mut best_score = scores[0];
    for a in 0..k {
        for c in 0..cands.len() {
            let s = scores[c * k + a];
            if beats(s, best_score) {
                best = (a, c);
                best_score = s;
            }
        }
    }
    Ok(PolicyDecision {
        chosen_arm_index: best.0,
        score: best_score,
        chosen_seed: Some(states[cands[best.1]].seed),
        fallback_used: false,
    })
}

/// Number of consecutive unchanged rounds the naive rule waits for: `⌈10/δ⌉`.
pub fn nlocb_window(delta: f64) -> usize {
    // 10 / 0.1 evaluates to 100.00000000000001 in binary floating point.
    (10.0 / delta - 1e-9).ceil().max(1.0) as usize
}

/// Naive stopping rule: the neighbourhood size was constant over the most
/// recent `⌈10/δ⌉` recorded rounds.
pub fn nlocb_should_stop(size_history: &[usize], delta: f64) -> bool {
    let w = nlocb_window(delta);
    if size_history.len() < w {
        return false;
    }
    let recent = &size_history[size_history.len() - w..];
    recent.iter().all(|&s| s == recent[0])
}

/// Incremental form of [`nlocb_should_stop`]: tracks the length of the
/// current constant-size run per seed.
#[derive(Debug, Clone)]
pub struct SizeStabilityRule {
    window: usize,
    runs: Vec<(usize, usize)>,
}

impl SizeStabilityRule {
    pub fn new(delta: f64, n_seeds: usize) -> Self {
        Self {
            window: nlocb_window(delta),
            runs: vec![(usize::MAX, 0); n_seeds],
        }
    }

    pub fn window(&self) -> usize {
        self.window
    }

    /// Records `size` for `slot`; returns `true` once the run is long enough.
    pub fn record(&mut self, slot: usize, size: usize) -> bool {
        let (last, run) = &mut self.runs[slot];
        if *last == size {
            *run += 1;
        } else {
            *last = size;
            *run = 1;
        }
        *run >= self.window
    }
}

impl StopRule for SizeStabilityRule {
    fn should_stop(
        &mut self,
        slot: usize,
        state: &SeedClusterState,
        _users: &[UserRidgeState],
        _conf: &ConfidenceConfig,
        _t: u64,
    ) -> bool {
        self.record(slot, state.members().len())
    }
}

/// A bandit policy driven by the simulation loop.
pub trait Policy: Send {
    fn name(&self) -> &str;

    fn select(&mut self, t: u64, user: UserId, arms: &[Vec<f64>]) -> Result<PolicyDecision>;

    fn observe(&mut self, t: u64, user: UserId, x: &[f64], reward: f64) -> Result<()>;

    /// Current `(seed, members)` neighbourhoods, for clustering policies.
    fn clusters(&self) -> Option<Vec<(UserId, Vec<UserId>)>> {
        None
    }

    /// Round at which every neighbourhood froze, for clustering policies.
    fn terminated_round(&self) -> Option<u64> {
        None
    }

    fn is_clustering(&self) -> bool {
        false
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PolicyKind {
    Locb,
    Nlocb,
    LinUcbOne,
    LinUcbInd,
}

impl PolicyKind {
    pub const ALL: [PolicyKind; 4] = [
        PolicyKind::Locb,
        PolicyKind::Nlocb,
        PolicyKind::LinUcbOne,
        PolicyKind::LinUcbInd,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            PolicyKind::Locb => "locb",
            PolicyKind::Nlocb => "nlocb",
            PolicyKind::LinUcbOne => "linucb-one",
            PolicyKind::LinUcbInd => "linucb-ind",
        }
    }

    pub fn is_clustering(&self) -> bool {
        matches!(self, PolicyKind::Locb | PolicyKind::Nlocb)
    }
}

impl fmt::Display for PolicyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PolicyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        PolicyKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| {
                Error::param(
                    "policy",
                    format!("unknown policy `{s}` (expected locb, nlocb, linucb-one or linucb-ind)"),
                )
            })
    }
}

/// LinUCB with one shared state (`linucb-one`) or one state per user
/// (`linucb-ind`).
#[derive(Debug, Clone)]
pub struct LinUcbPolicy {
    shared: bool,
    states: Vec<UserRidgeState>,
    alpha: AlphaSchedule,
    d: usize,
}

impl LinUcbPolicy {
    pub fn shared(d: usize, alpha: AlphaSchedule) -> Result<Self> {
        Ok(Self {
            shared: true,
            states: vec![UserRidgeState::new(d)?],
            alpha,
            d,
        })
    }

    pub fn individual(n: usize, d: usize, alpha: AlphaSchedule) -> Result<Self> {
        Ok(Self {
            shared: false,
            states: vec![UserRidgeState::new(d)?; n],
            alpha,
            d,
        })
    }

    fn slot(&self, user: UserId) -> usize {
        if self.shared {
            0
        } else {
            user
        }
    }

    pub fn state(&self, user: UserId) -> &UserRidgeState {
        &self.states[self.slot(user)]
    }
}

impl Policy for LinUcbPolicy {
    fn name(&self) -> &str {
        if self.shared {
            PolicyKind::LinUcbOne.as_str()
        } else {
            PolicyKind::LinUcbInd.as_str()
        }
    }

    fn select(&mut self, t: u64, user: UserId, arms: &[Vec<f64>]) -> Result<PolicyDecision> {
        let alpha = self.alpha.alpha(t, self.d);
        select_arm_linucb(&self.states[self.slot(user)], arms, alpha)
    }

    fn observe(&mut self, _t: u64, user: UserId, x: &[f64], reward: f64) -> Result<()> {
        let slot = self.slot(user);
        self.states[slot].observe(x, reward)
    }
}

#[derive(Debug, Clone)]
enum Termination {
    SupRadius(SupRadiusRule),
    SizeStable(SizeStabilityRule),
}

/// LOCB: seed-based clustering plus overlapping-cluster UCB selection.
#[derive(Debug, Clone)]
pub struct LocbPolicy {
    kind: PolicyKind,
    users: Vec<UserRidgeState>,
    clusters: Vec<SeedClusterState>,
    conf: ConfidenceConfig,
    termination: Termination,
    alpha: AlphaSchedule,
    terminated_at: Option<u64>,
}

impl LocbPolicy {
    /// LOCB with the supremum-radius stopping rule. An empty seed list is
    /// allowed: every round then uses the individual fallback.
    pub fn new(
        n: usize,
        cfg: &ClusteringConfig,
        conf: ConfidenceConfig,
        alpha: AlphaSchedule,
    ) -> Result<Self> {
        let rule = Termination::SupRadius(SupRadiusRule { threshold: cfg.threshold() });
        Self::build(PolicyKind::Locb, n, cfg, conf, alpha, rule)
    }

    /// N-LOCB: identical to LOCB except that a seed stops once its
    /// neighbourhood size has been constant for `⌈10/δ⌉` rounds.
    pub fn naive(
        n: usize,
        cfg: &ClusteringConfig,
        conf: ConfidenceConfig,
        alpha: AlphaSchedule,
    ) -> Result<Self> {
        let rule = Termination::SizeStable(SizeStabilityRule::new(conf.delta, cfg.seeds.len()));
        Self::build(PolicyKind::Nlocb, n, cfg, conf, alpha, rule)
    }

    fn build(
        kind: PolicyKind,
        n: usize,
        cfg: &ClusteringConfig,
        conf: ConfidenceConfig,
        alpha: AlphaSchedule,
        termination: Termination,
    ) -> Result<Self> {
        conf.validate()?;
        let clusters = if cfg.seeds.is_empty() {
            Vec::new()
        } else {
            clustering::init_clusters(n, cfg)?
        };
        let terminated_at = clusters.is_empty().then_some(0);
        Ok(Self {
            kind,
            users: vec![UserRidgeState::new(conf.d)?; n],
            clusters,
            conf,
            termination,
            alpha,
            terminated_at,
        })
    }

    pub fn users(&self) -> &[UserRidgeState] {
        &self.users
    }

    pub fn cluster_states(&self) -> &[SeedClusterState] {
        &self.clusters
    }
}

impl Policy for LocbPolicy {
    fn name(&self) -> &str {
        self.kind.as_str()
    }

    fn select(&mut self, t: u64, user: UserId, arms: &[Vec<f64>]) -> Result<PolicyDecision> {
        let alpha = self.alpha.alpha(t, self.conf.d);
        select_arm_locb(user, arms, &self.clusters, &self.users, alpha)
    }

    fn observe(&mut self, t: u64, user: UserId, x: &[f64], reward: f64) -> Result<()> {
        self.users[user].observe(x, reward)?;
        if self.terminated_at.is_none() {
            let rule: &mut dyn StopRule = match &mut self.termination {
                Termination::SupRadius(r) => r,
                Termination::SizeStable(r) => r,
            };
            clustering::update_memberships(user, &mut self.clusters, &self.users, &self.conf, t, rule);
            if clustering::all_terminated(&self.clusters) {
                self.terminated_at = Some(t);
            }
        }
        Ok(())
    }

    fn clusters(&self) -> Option<Vec<(UserId, Vec<UserId>)>> {
        Some(clustering::cluster_output(&self.clusters))
    }

    fn terminated_round(&self) -> Option<u64> {
        self.terminated_at
    }

    fn is_clustering(&self) -> bool {
        true
    }
}
