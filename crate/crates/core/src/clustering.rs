//! Seed-based neighbourhood refinement.
//!
//! Every seed `s` starts with the whole user universe as its candidate
//! neighbourhood `N_s`. Each round only the served user is re-tested against
//! every active seed: it stays (or is re-inserted) when the two confidence
//! balls overlap, and is removed otherwise. A seed freezes once its stopping
//! rule fires; frozen neighbourhoods never change again.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::estimator::{ConfidenceConfig, UserRidgeState};
use crate::linalg;
use crate::UserId;

/// Dense membership flags over the user universe `0..n`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MemberSet {
    flags: Vec<bool>,
    len: usize,
}

impl MemberSet {
    pub fn empty(n: usize) -> Self {
        Self {
            flags: vec![false; n],
            len: 0,
        }
    }

    pub fn full(n: usize) -> Self {
        Self {
            flags: vec![true; n],
            len: n,
        }
    }

    pub fn from_ids(n: usize, ids: impl IntoIterator<Item = UserId>) -> Self {
        let mut s = Self::empty(n);
        for i in ids {
            s.insert(i);
        }
        s
    }

    #[inline]
    pub fn contains(&self, i: UserId) -> bool {
        self.flags.get(i).copied().unwrap_or(false)
    }

    /// Returns `true` if the set changed.
    pub fn insert(&mut self, i: UserId) -> bool {
        if self.flags[i] {
            false
        } else {
            self.flags[i] = true;
            self.len += 1;
            true
        }
    }

    /// Returns `true` if the set changed.
    pub fn remove(&mut self, i: UserId) -> bool {
        if self.flags[i] {
            self.flags[i] = false;
            self.len -= 1;
            true
        } else {
            false
        }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn universe(&self) -> usize {
        self.flags.len()
    }

    /// Members in ascending order.
    pub fn iter(&self) -> impl Iterator<Item = UserId> + '_ {
        self.flags
            .iter()
            .enumerate()
            .filter_map(|(i, &f)| f.then_some(i))
    }

    pub fn to_vec(&self) -> Vec<UserId> {
        self.iter().collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SeedClusterState {
    pub seed: UserId,
    members: MemberSet,
    active: bool,
    terminated_round: Option<u64>,
}

impl SeedClusterState {
    pub fn new(seed: UserId, members: MemberSet) -> Self {
        Self {
            seed,
            members,
            active: true,
            terminated_round: None,
        }
    }

    pub fn members(&self) -> &MemberSet {
        &self.members
    }

    pub fn is_active(&self) -> bool {
        self.active
    }

    pub fn terminated_round(&self) -> Option<u64> {
        self.terminated_round
    }

    /// Freezes the neighbourhood. Calling it on a frozen state is a no-op.
    pub fn freeze(&mut self, t: u64) {
        if self.active {
            self.active = false;
            self.terminated_round = Some(t);
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClusteringConfig {
    /// Cluster diameter threshold γ.
    pub gamma: f64,
    /// Termination tuning factor τ (`τ = 1` is the exact criterion).
    pub tau: f64,
    pub seeds: Vec<UserId>,
}

impl ClusteringConfig {
    /// Radius threshold `γτ/8` below which a neighbourhood is returned.
    pub fn threshold(&self) -> f64 {
        self.gamma * self.tau / 8.0
    }
}

/// One state per seed, each starting from the full universe.
pub fn init_clusters(n_users: usize, cfg: &ClusteringConfig) -> Result<Vec<SeedClusterState>> {
    if cfg.seeds.is_empty() {
        return Err(Error::EmptySeedSet);
    }
    if cfg.gamma.is_nan() || cfg.gamma <= 0.0 || cfg.tau.is_nan() || cfg.tau <= 0.0 {
        return Err(Error::param("gamma/tau", "must be positive"));
    }
    if let Some(&bad) = cfg.seeds.iter().find(|&&s| s >= n_users) {
        return Err(Error::param("seeds", format!("seed {bad} outside universe of {n_users}")));
    }
    Ok(cfg
        .seeds
        .iter()
        .map(|&s| SeedClusterState::new(s, MemberSet::full(n_users)))
        .collect())
}

/// Interval-overlap test `‖θ̂_i − θ̂_s‖ ≤ B_i + B_s`.
#[inline]
pub fn neighbor_test(theta_i: &[f64], theta_s: &[f64], radius_i: f64, radius_s: f64) -> bool {
    linalg::distance(theta_i, theta_s) <= radius_i + radius_s
}

/// `sup { B(m_i, t) : i ∈ members }`.
///
/// Every radius family is non-increasing in `m`, so the supremum is attained
/// at the least-served member.
pub fn sup_radius(
    members: &MemberSet,
    users: &[UserRidgeState],
    conf: &ConfidenceConfig,
    t: u64,
) -> f64 {
    match members.iter().map(|i| users[i].m()).min() {
        Some(m) => conf.radius(m, t),
        None => 0.0,
    }
}

/// Supremum-radius criterion: freezes `state` and returns `true` when every
/// member's radius is strictly below `γτ/8`.
pub fn check_termination(
    state: &mut SeedClusterState,
    users: &[UserRidgeState],
    conf: &ConfidenceConfig,
    threshold: f64,
    t: u64,
) -> bool {
    if !state.active {
        return false;
    }
    if sup_radius(&state.members, users, conf, t) < threshold {
        state.freeze(t);
        true
    } else {
        false
    }
}

/// Decides, once per round and active seed, whether that seed's
/// neighbourhood is final.
pub trait StopRule {
    fn should_stop(
        &mut self,
        slot: usize,
        state: &SeedClusterState,
        users: &[UserRidgeState],
        conf: &ConfidenceConfig,
        t: u64,
    ) -> bool;
}

/// The supremum-radius criterion with threshold `γτ/8`.
#[derive(Debug, Clone, Copy)]
pub struct SupRadiusRule {
    pub threshold: f64,
}

impl StopRule for SupRadiusRule {
    fn should_stop(
        &mut self,
        _slot: usize,
        state: &SeedClusterState,
        users: &[UserRidgeState],
        conf: &ConfidenceConfig,
        t: u64,
    ) -> bool {
        sup_radius(&state.members, users, conf, t) < self.threshold
    }
}

/// Re-tests the served user `i_t` against every active seed, then applies the
/// stopping rule to each active seed. Returns the slots frozen this round.
pub fn update_memberships(
    i_t: UserId,
    states: &mut [SeedClusterState],
    users: &[UserRidgeState],
    conf: &ConfidenceConfig,
    t: u64,
    rule: &mut dyn StopRule,
) -> Vec<usize> {
    let theta_i = users[i_t].theta_hat();
    let radius_i = conf.radius(users[i_t].m(), t);
    let mut frozen = Vec::new();
    for (slot, state) in states.iter_mut().enumerate() {
        if !state.active {
            continue;
        }
        let s = state.seed;
        let radius_s = conf.radius(users[s].m(), t);
        if neighbor_test(theta_i, users[s].theta_hat(), radius_i, radius_s) {
            state.members.insert(i_t);
        } else {
            state.members.remove(i_t);
        }
        if rule.should_stop(slot, state, users, conf, t) {
            state.freeze(t);
            frozen.push(slot);
        }
    }
    frozen
}

/// `true` once no seed is active.
pub fn all_terminated(states: &[SeedClusterState]) -> bool {
    states.iter().all(|s| !s.active)
}

/// `(seed, members)` for every seed, in seed order.
pub fn cluster_output(states: &[SeedClusterState]) -> Vec<(UserId, Vec<UserId>)> {
    states.iter().map(|s| (s.seed, s.members.to_vec())).collect()
}

/// Renders clusters as `seed: m1,m2,...` lines, mapping dense indices to
/// external labels.
pub fn format_clusters(clusters: &[(UserId, Vec<UserId>)], label: impl Fn(UserId) -> u64) -> String {
    let mut out = String::new();
    for (seed, members) in clusters {
        let _ = write!(out, "{}:", label(*seed));
        for (k, m) in members.iter().enumerate() {
            let sep = if k == 0 { " " } else { "," };
            let _ = write!(out, "{sep}{}", label(*m));
        }
        out.push('\n');
    }
    out
}

/// Inverse of [`format_clusters`] on external labels.
pub fn parse_clusters(text: &str) -> std::result::Result<Vec<(u64, Vec<u64>)>, String> {
    let mut out = Vec::new();
    for (no, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (seed, rest) = line
            .split_once(':')
            .ok_or_else(|| format!("line {}: missing ':'", no + 1))?;
        let seed = seed
            .trim()
            .parse::<u64>()
            .map_err(|e| format!("line {}: bad seed: {e}", no + 1))?;
        let mut members = Vec::new();
        for tok in rest.split(',').map(str::trim).filter(|t| !t.is_empty()) {
            members.push(
                tok.parse::<u64>()
                    .map_err(|e| format!("line {}: bad member `{tok}`: {e}", no + 1))?,
            );
        }
        out.push((seed, members));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimator::RadiusMode;

    fn conf(n: usize) -> ConfidenceConfig {
        ConfidenceConfig::new(0.1, n, 0.1, 2, RadiusMode::PracticalClustering).unwrap()
    }

    #[test]
    fn init_variants() {
        let cfg = ClusteringConfig { gamma: 0.2, tau: 1.0, seeds: vec![2] };
        let st = init_clusters(5, &cfg).unwrap();
        assert_eq!(st.len(), 1);
        assert_eq!(st[0].members().to_vec(), vec![0, 1, 2, 3, 4]);
        assert!(st[0].is_active());

        let cfg = ClusteringConfig { gamma: 0.2, tau: 1.0, seeds: (0..5).collect() };
        let st = init_clusters(5, &cfg).unwrap();
        assert_eq!(st.len(), 5);
        assert!(st.iter().all(|s| s.members().len() == 5));

        let cfg = ClusteringConfig { gamma: 0.2, tau: 1.0, seeds: vec![0] };
        assert_eq!(init_clusters(1, &cfg).unwrap()[0].members().to_vec(), vec![0]);

        let empty = ClusteringConfig { gamma: 0.2, tau: 1.0, seeds: vec![] };
        assert!(matches!(init_clusters(3, &empty), Err(Error::EmptySeedSet)));
        let outside = ClusteringConfig { gamma: 0.2, tau: 1.0, seeds: vec![3] };
        assert!(init_clusters(3, &outside).is_err());
    }

    #[test]
    fn neighbor_test_cases() {
        let a = [0.3, -0.1];
        assert!(neighbor_test(&a, &a, 0.0, 0.0));
        assert!(!neighbor_test(&[0.0, 0.0], &[1.0, 0.0], 0.4, 0.4));
        assert!(neighbor_test(&[0.0, 0.0], &[1.0, 0.0], 0.5, 0.5));
        assert_eq!(
            neighbor_test(&[0.1, 0.7], &[0.4, 0.2], 0.3, 0.1),
            neighbor_test(&[0.4, 0.2], &[0.1, 0.7], 0.1, 0.3)
        );
    }

    fn trained(theta: [f64; 2], n: usize) -> UserRidgeState {
        let mut s = UserRidgeState::new(2).unwrap();
        for k in 0..n {
            let x = if k % 2 == 0 { [1.0, 0.0] } else { [0.0, 1.0] };
            s.observe(&x, theta[0] * x[0] + theta[1] * x[1]).unwrap();
        }
        s
    }

    struct Never;
    impl StopRule for Never {
        fn should_stop(&mut self, _: usize, _: &SeedClusterState, _: &[UserRidgeState], _: &ConfidenceConfig, _: u64) -> bool {
            false
        }
    }

    #[test]
    fn served_user_removed_only_from_failing_seed() {
        let users = vec![trained([1.0, 0.0], 4000), trained([0.0, 1.0], 4000), trained([1.0, 0.0], 4000)];
        let c = conf(3);
        let cfg = ClusteringConfig { gamma: 0.2, tau: 1.0, seeds: vec![0, 2] };
        let mut st = init_clusters(3, &cfg).unwrap();
        update_memberships(1, &mut st, &users, &c, 10, &mut Never);
        assert_eq!(st[0].members().to_vec(), vec![0, 2]);
        assert_eq!(st[1].members().to_vec(), vec![0, 2]);
        // seed always keeps itself
        update_memberships(0, &mut st, &users, &c, 11, &mut Never);
        assert!(st[0].members().contains(0));
        // a passing user is re-inserted
        let mut st2 = st.clone();
        st2[0].members.remove(2);
        update_memberships(2, &mut st2, &users, &c, 12, &mut Never);
        assert!(st2[0].members().contains(2));
    }

    #[test]
    fn termination_cases() {
        let c = conf(3);
        let fresh = vec![UserRidgeState::new(2).unwrap(); 3];
        let mut st = SeedClusterState::new(0, MemberSet::full(3));
        assert!(!check_termination(&mut st, &fresh, &c, 0.025, 5));
        assert!(st.is_active());

        // γ = 0.2, τ = 1: threshold 0.025; all members with radius 0.02 pass.
        let cfg = ClusteringConfig { gamma: 0.2, tau: 1.0, seeds: vec![0] };
        assert!((cfg.threshold() - 0.025).abs() < 1e-15);
        let mut m = 0u64;
        while c.radius(m, 5) >= 0.02 {
            m += 1;
        }
        let users: Vec<UserRidgeState> = (0..3).map(|_| trained([0.5, 0.5], m as usize)).collect();
        assert!(sup_radius(st.members(), &users, &c, 5) < 0.02);
        assert!(check_termination(&mut st, &users, &c, cfg.threshold(), 5));
        assert!(!st.is_active());
        assert_eq!(st.terminated_round(), Some(5));
        // frozen states are final
        st.freeze(9);
        assert_eq!(st.terminated_round(), Some(5));
        assert!(!check_termination(&mut st, &users, &c, 1.0, 6));
    }

    #[test]
    fn sup_radius_matches_exhaustive_max() {
        let c = conf(4);
        let users: Vec<UserRidgeState> = [3, 0, 17, 8].iter().map(|&k| trained([0.2, 0.4], k)).collect();
        let members = MemberSet::from_ids(4, [0, 2, 3]);
        let exhaustive = members
            .iter()
            .map(|i| c.radius(users[i].m(), 40))
            .fold(f64::MIN, f64::max);
        assert_eq!(sup_radius(&members, &users, &c, 40), exhaustive);
    }

    #[test]
    fn all_terminated_and_output() {
        let mut a = SeedClusterState::new(0, MemberSet::from_ids(3, [0, 1]));
        let b = SeedClusterState::new(2, MemberSet::from_ids(3, [2]));
        assert!(!all_terminated(&[a.clone(), b.clone()]));
        a.freeze(3);
        assert!(all_terminated(&[a.clone()]));
        assert_eq!(cluster_output(&[a, b]), vec![(0, vec![0, 1]), (2, vec![2])]);
    }

    #[test]
    fn cluster_text_roundtrip() {
        let clusters = vec![(0, vec![0, 1, 3]), (2, vec![2]), (1, vec![])];
        let text = format_clusters(&clusters, |i| i as u64 * 10);
        assert_eq!(text, "0: 0,10,30\n20: 20\n10:\n");
        let back = parse_clusters(&text).unwrap();
        assert_eq!(back, vec![(0, vec![0, 10, 30]), (20, vec![20]), (10, vec![])]);
        assert!(parse_clusters("x: 1").is_err());
    }
}
