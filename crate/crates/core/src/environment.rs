//! Reward-generating worlds.
//!
//! [`SyntheticWorld`] holds clustered unit-norm user parameters and emits
//! Gaussian-noise linear rewards over freshly drawn arms. [`ReplayLog`] holds
//! pre-featurised binary-reward events and forms arm pools of one positive
//! and `k − 1` negative events of the served user.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::{index, SliceRandom};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::evaluation;
use crate::linalg;
use crate::UserId;

/// Maps a nonzero raw vector to `(x / (√2‖x‖), 1/√2)`, a unit vector whose
/// inner product with any other embedded vector lies in `[0, 1]`.
pub fn embed_normalize(x: &[f64]) -> Result<Vec<f64>> {
    linalg::check_finite(x, "raw vector")?;
    let n = linalg::norm(x);
    if n == 0.0 {
        return Err(Error::ZeroVector);
    }
    let s = std::f64::consts::SQRT_2 * n;
    let mut out: Vec<f64> = x.iter().map(|v| v / s).collect();
    out.push(std::f64::consts::FRAC_1_SQRT_2);
    Ok(out)
}

fn gaussian_vec(rng: &mut impl Rng, d: usize) -> Vec<f64> {
    (0..d).map(|_| rng.sample::<f64, _>(StandardNormal)).collect()
}

fn nonzero_gaussian(rng: &mut impl Rng, d: usize) -> Vec<f64> {
    loop {
        let v = gaussian_vec(rng, d);
        if linalg::norm(&v) > 0.0 {
            return v;
        }
    }
}

/// Uniform draw from the unit ball in `d` dimensions.
fn unit_ball(rng: &mut impl Rng, d: usize) -> Vec<f64> {
    let dir = nonzero_gaussian(rng, d);
    let n = linalg::norm(&dir);
    let r = rng.random::<f64>().powf(1.0 / d as f64);
    dir.iter().map(|v| v * r / n).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticParams {
    pub n: usize,
    pub n_clusters: usize,
    /// Inclusive cluster size range.
    pub size_min: usize,
    pub size_max: usize,
    pub d_raw: usize,
    pub gamma_true: f64,
    pub sigma: f64,
    pub arms: usize,
}

impl Default for SyntheticParams {
    fn default() -> Self {
        Self {
            n: 100,
            n_clusters: 5,
            size_min: 5,
            size_max: 40,
            d_raw: 5,
            gamma_true: 0.2,
            sigma: 0.1,
            arms: 10,
        }
    }
}

impl SyntheticParams {
    pub fn validate(&self) -> Result<()> {
        if self.n_clusters == 0 || self.n < self.n_clusters {
            return Err(Error::InfeasibleSizes(format!(
                "{} users cannot form {} clusters",
                self.n, self.n_clusters
            )));
        }
        if self.size_min == 0 || self.size_min > self.size_max {
            return Err(Error::InfeasibleSizes(format!(
                "empty size range [{}, {}]",
                self.size_min, self.size_max
            )));
        }
        if self.n_clusters * self.size_min > self.n || self.n_clusters * self.size_max < self.n {
            return Err(Error::InfeasibleSizes(format!(
                "{} clusters with sizes in [{}, {}] cannot total {}",
                self.n_clusters, self.size_min, self.size_max, self.n
            )));
        }
        if self.d_raw == 0 {
            return Err(Error::InvalidDimension(0));
        }
        if !(self.gamma_true > 0.0 && self.gamma_true.is_finite()) {
            return Err(Error::param("gamma_true", "must be positive"));
        }
        if !(self.sigma >= 0.0 && self.sigma.is_finite()) {
            return Err(Error::param("sigma", "must be non-negative"));
        }
        if self.arms == 0 {
            return Err(Error::EmptyArmSet);
        }
        Ok(())
    }
}

const SIZE_ATTEMPTS: usize = 100_000;
const REJECTIONS_BEFORE_SHRINK: usize = 20;

fn draw_sizes(p: &SyntheticParams, rng: &mut impl Rng) -> Result<Vec<usize>> {
    for _ in 0..SIZE_ATTEMPTS {
        let mut sizes: Vec<usize> = (1..p.n_clusters)
            .map(|_| rng.random_range(p.size_min..=p.size_max))
            .collect();
        let used: usize = sizes.iter().sum();
        if used < p.n {
            let last = p.n - used;
            if (p.size_min..=p.size_max).contains(&last) {
                sizes.push(last);
                return Ok(sizes);
            }
        }
    }
    Err(Error::InfeasibleSizes(format!(
        "no admissible size draw after {SIZE_ATTEMPTS} attempts"
    )))
}

/// Embedded member parameters around one random direction, each within
/// `gamma` of every other.
fn draw_cluster(size: usize, d_raw: usize, gamma: f64, rng: &mut impl Rng) -> Vec<Vec<f64>> {
    let c = nonzero_gaussian(rng, d_raw);
    let cn = linalg::norm(&c);
    let center: Vec<f64> = c.iter().map(|v| v / cn).collect();
    let mut rho = gamma / std::f64::consts::SQRT_2;
    let mut members: Vec<Vec<f64>> = Vec::with_capacity(size);
    let mut failures = 0;
    while members.len() < size {
        let mut raw = unit_ball(rng, d_raw);
        for (r, c) in raw.iter_mut().zip(&center) {
            *r = c + rho * *r;
        }
        let Ok(theta) = embed_normalize(&raw) else {
            continue;
        };
        if members.iter().all(|m| linalg::distance(m, &theta) < gamma) {
            members.push(theta);
            failures = 0;
        } else {
            failures += 1;
            if failures >= REJECTIONS_BEFORE_SHRINK {
                rho *= 0.9;
                failures = 0;
            }
        }
    }
    members
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticWorld {
    pub n: usize,
    pub d_raw: usize,
    /// Embedded unit-norm parameter of each user (dimension `d_raw + 1`).
    pub thetas: Vec<Vec<f64>>,
    /// Generator partition, each cluster sorted ascending.
    pub clusters: Vec<Vec<UserId>>,
    /// Cluster index of each user.
    pub assignment: Vec<usize>,
    pub sigma: f64,
    pub k: usize,
    pub gamma_true: f64,
}

/// Draws a clustered world: sizes, one random direction per cluster, member
/// parameters by rejection so that embedded within-cluster distances stay
/// below `gamma_true`, then a random assignment of user ids to slots.
pub fn generate_synthetic(p: &SyntheticParams, rng: &mut impl Rng) -> Result<SyntheticWorld> {
    p.validate()?;
    let sizes = draw_sizes(p, rng)?;
    let mut slots: Vec<(usize, Vec<f64>)> = Vec::with_capacity(p.n);
    for (c, &size) in sizes.iter().enumerate() {
        for theta in draw_cluster(size, p.d_raw, p.gamma_true, rng) {
            slots.push((c, theta));
        }
    }
    slots.shuffle(rng);
    let mut clusters = vec![Vec::new(); sizes.len()];
    let mut assignment = Vec::with_capacity(p.n);
    let mut thetas = Vec::with_capacity(p.n);
    for (user, (c, theta)) in slots.into_iter().enumerate() {
        clusters[c].push(user);
        assignment.push(c);
        thetas.push(theta);
    }
    Ok(SyntheticWorld {
        n: p.n,
        d_raw: p.d_raw,
        thetas,
        clusters,
        assignment,
        sigma: p.sigma,
        k: p.arms,
        gamma_true: p.gamma_true,
    })
}

/// One round's context: the served user, the arm pool and, for replay
/// pools, the logged reward of every arm.
#[derive(Debug, Clone, PartialEq)]
pub struct Round {
    pub user: UserId,
    pub arms: Vec<Vec<f64>>,
    pub pool_rewards: Option<Vec<f64>>,
}

pub fn draw_round_synthetic(world: &SyntheticWorld, rng: &mut impl Rng) -> Round {
    let user = rng.random_range(0..world.n);
    let arms = (0..world.k)
        .map(|_| {
            let raw = nonzero_gaussian(rng, world.d_raw);
            embed_normalize(&raw).expect("nonzero finite draw")
        })
        .collect();
    Round {
        user,
        arms,
        pool_rewards: None,
    }
}

/// `θ_userᵀx + σ·ε` with `ε ~ N(0, 1)`; the normal draw is consumed even at
/// `σ = 0` so the noise stream stays aligned across noise levels.
pub fn realize_reward(world: &SyntheticWorld, user: UserId, x: &[f64], rng: &mut impl Rng) -> f64 {
    let eps: f64 = rng.sample(StandardNormal);
    linalg::dot(&world.thetas[user], x) + world.sigma * eps
}

impl SyntheticWorld {
    pub fn dim(&self) -> usize {
        self.d_raw + 1
    }

    /// Largest embedded distance between two users of the same cluster.
    pub fn max_within_cluster_distance(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for c in &self.clusters {
            for (a, &i) in c.iter().enumerate() {
                for &j in &c[a + 1..] {
                    worst = worst.max(linalg::distance(&self.thetas[i], &self.thetas[j]));
                }
            }
        }
        worst
    }

    /// Text form: `key=value` header lines followed by a `[theta]` section
    /// with one `user_id,cluster_id,θ_1,…,θ_d` line per user.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "d={}", self.dim());
        let _ = writeln!(s, "sigma={}", self.sigma);
        let _ = writeln!(s, "arms={}", self.k);
        let _ = writeln!(s, "gamma_true={}", self.gamma_true);
        s.push_str("[theta]\n");
        for (u, theta) in self.thetas.iter().enumerate() {
            let _ = write!(s, "{u},{}", self.assignment[u]);
            for v in theta {
                let _ = write!(s, ",{v}");
            }
            s.push('\n');
        }
        s
    }

    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let err = |line: usize, message: String| Error::Parse {
            path: path.to_path_buf(),
            line,
            message,
        };
        let mut d = None;
        let mut sigma = None;
        let mut arms = None;
        let mut gamma = None;
        let mut in_theta = false;
        let mut rows: Vec<(usize, usize, Vec<f64>)> = Vec::new();
        for (idx, raw) in text.lines().enumerate() {
            let line_no = idx + 1;
            let line = raw.trim();
            if line.is_empty() {
                continue;
            }
            if line == "[theta]" {
                in_theta = true;
                continue;
            }
            if !in_theta {
                let (key, value) = line
                    .split_once('=')
                    .ok_or_else(|| err(line_no, format!("expected key=value, got `{line}`")))?;
                let bad = |_| err(line_no, format!("bad value for `{key}`: `{value}`"));
                match key.trim() {
                    "d" => d = Some(value.trim().parse::<usize>().map_err(|e| bad(e.to_string()))?),
                    "sigma" => sigma = Some(value.trim().parse::<f64>().map_err(|e| bad(e.to_string()))?),
                    "arms" => arms = Some(value.trim().parse::<usize>().map_err(|e| bad(e.to_string()))?),
                    "gamma_true" => gamma = Some(value.trim().parse::<f64>().map_err(|e| bad(e.to_string()))?),
                    other => return Err(err(line_no, format!("unknown key `{other}`"))),
                }
                continue;
            }
            let d = d.ok_or_else(|| err(line_no, "missing `d=` header".into()))?;
            let fields: Vec<&str> = line.split(',').map(str::trim).collect();
            if fields.len() != d + 2 {
                return Err(err(line_no, format!("expected {} fields, got {}", d + 2, fields.len())));
            }
            let user = fields[0]
                .parse::<usize>()
                .map_err(|_| err(line_no, format!("bad user id `{}`", fields[0])))?;
            let cluster = fields[1]
                .parse::<usize>()
                .map_err(|_| err(line_no, format!("bad cluster id `{}`", fields[1])))?;
            let theta = parse_floats(&fields[2..]).map_err(|m| err(line_no, m))?;
            rows.push((user, cluster, theta));
        }
        let d = d.ok_or_else(|| err(0, "missing `d=` header".into()))?;
        if d < 2 {
            return Err(err(0, format!("dimension {d} leaves no raw coordinates")));
        }
        rows.sort_by_key(|r| r.0);
        let n = rows.len();
        if rows.iter().enumerate().any(|(i, r)| r.0 != i) {
            return Err(err(0, "user ids must be exactly 0..n".into()));
        }
        let n_clusters = rows.iter().map(|r| r.1 + 1).max().unwrap_or(0);
        let mut clusters = vec![Vec::new(); n_clusters];
        for r in &rows {
            clusters[r.1].push(r.0);
        }
        Ok(SyntheticWorld {
            n,
            d_raw: d - 1,
            assignment: rows.iter().map(|r| r.1).collect(),
            thetas: rows.into_iter().map(|r| r.2).collect(),
            clusters,
            sigma: sigma.unwrap_or(0.1),
            k: arms.unwrap_or(10),
            gamma_true: gamma.unwrap_or(0.2),
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&read(path)?, path)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_atomic(path, self.to_text().as_bytes())
    }
}

fn parse_floats(fields: &[&str]) -> std::result::Result<Vec<f64>, String> {
    fields
        .iter()
        .map(|f| {
            let v: f64 = f.parse().map_err(|_| format!("bad number `{f}`"))?;
            if v.is_finite() {
                Ok(v)
            } else {
                Err(format!("non-finite value `{f}`"))
            }
        })
        .collect()
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Writes through a sibling temporary file and a rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let io = |source| Error::Io {
        path: path.to_path_buf(),
        source,
    };
    let mut tmp = PathBuf::from(path);
    let name = path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    tmp.set_file_name(format!(".{name}.tmp"));
    fs::write(&tmp, bytes).map_err(io)?;
    fs::rename(&tmp, path).map_err(io)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReplayEvent {
    /// Dense user index (position of the label in [`ReplayLog::labels`]).
    pub user: UserId,
    pub reward: f64,
    pub features: Vec<f64>,
}

/// Binary-reward event log.
///
/// Text format: a `d=<int>` header, then one `user_id,reward,f_1,…,f_d`
/// line per event. User labels are mapped to dense ids in ascending label
/// order.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplayLog {
    d: usize,
    labels: Vec<u64>,
    events: Vec<ReplayEvent>,
    positives: Vec<Vec<usize>>,
    negatives: Vec<Vec<usize>>,
}

impl ReplayLog {
    /// Builds a log from `(label, reward, features)` triples.
    pub fn from_events(d: usize, events: Vec<(u64, f64, Vec<f64>)>) -> Result<Self> {
        if d == 0 {
            return Err(Error::InvalidDimension(0));
        }
        let mut labels: Vec<u64> = events.iter().map(|e| e.0).collect();
        labels.sort_unstable();
        labels.dedup();
        let n = labels.len();
        let mut positives = vec![Vec::new(); n];
        let mut negatives = vec![Vec::new(); n];
        let mut out = Vec::with_capacity(events.len());
        for (idx, (label, reward, features)) in events.into_iter().enumerate() {
            linalg::check_dim(d, features.len())?;
            linalg::check_finite(&features, "event features")?;
            let user = labels.binary_search(&label).expect("label collected above");
            if reward == 1.0 {
                positives[user].push(idx);
            } else if reward == 0.0 {
                negatives[user].push(idx);
            } else {
                return Err(Error::param("reward", format!("{reward} is not 0 or 1")));
            }
            out.push(ReplayEvent {
                user,
                reward,
                features,
            });
        }
        Ok(Self {
            d,
            labels,
            events: out,
            positives,
            negatives,
        })
    }

    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let err = |line: usize, message: String| Error::Parse {
            path: path.to_path_buf(),
            line,
            message,
        };
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let (hline, header) = lines.next().ok_or_else(|| err(1, "empty log".into()))?;
        let d = header
            .trim()
            .strip_prefix("d=")
            .and_then(|v| v.trim().parse::<usize>().ok())
            .filter(|&d| d > 0)
            .ok_or_else(|| err(hline + 1, format!("expected header `d=<int>`, got `{}`", header.trim())))?;
        let mut events = Vec::new();
        for (idx, raw) in lines {
            let line_no = idx + 1;
            let fields: Vec<&str> = raw.trim().split(',').map(str::trim).collect();
            if fields.len() != d + 2 {
                return Err(err(
                    line_no,
                    format!("expected {} fields (d={d}), got {}", d + 2, fields.len()),
                ));
            }
            let label = fields[0]
                .parse::<u64>()
                .map_err(|_| err(line_no, format!("bad user id `{}`", fields[0])))?;
            let reward = match fields[1].parse::<f64>() {
                Ok(r) if r == 0.0 || r == 1.0 => r,
                _ => return Err(err(line_no, format!("reward must be 0 or 1, got `{}`", fields[1]))),
            };
            let features = parse_floats(&fields[2..]).map_err(|m| err(line_no, m))?;
            events.push((label, reward, features));
        }
        Self::from_events(d, events)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&read(path)?, path)
    }

    pub fn to_text(&self) -> String {
        let mut s = format!("d={}\n", self.d);
        for e in &self.events {
            let _ = write!(s, "{},{}", self.labels[e.user], e.reward);
            for v in &e.features {
                let _ = write!(s, ",{v}");
            }
            s.push('\n');
        }
        s
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_atomic(path, self.to_text().as_bytes())
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn n_users(&self) -> usize {
        self.labels.len()
    }

    /// Original user label of each dense id.
    pub fn labels(&self) -> &[u64] {
        &self.labels
    }

    pub fn events(&self) -> &[ReplayEvent] {
        &self.events
    }

    pub fn positives(&self, user: UserId) -> &[usize] {
        &self.positives[user]
    }

    pub fn negatives(&self, user: UserId) -> &[usize] {
        &self.negatives[user]
    }

    pub fn is_eligible(&self, user: UserId, k: usize) -> bool {
        !self.positives[user].is_empty() && self.negatives[user].len() + 1 >= k
    }

    /// One-line description: users, events and positive count.
    pub fn summary(&self) -> String {
        let pos: usize = self.positives.iter().map(Vec::len).sum();
        format!(
            "{} users, {} events ({} positive), d={}",
            self.n_users(),
            self.events.len(),
            pos,
            self.d
        )
    }

    /// Per-user batch ridge estimates over all logged events.
    pub fn batch_thetas(&self) -> Vec<Vec<f64>> {
        let mut per_user: Vec<Vec<(&[f64], f64)>> = vec![Vec::new(); self.n_users()];
        for e in &self.events {
            per_user[e.user].push((&e.features, e.reward));
        }
        per_user
            .into_iter()
            .map(|ev| evaluation::batch_theta(ev, self.d))
            .collect()
    }
}

/// Draws users uniformly until one can fill a `k`-arm pool, then returns
/// that pool (one positive, `k − 1` negatives, shuffled) together with the
/// number of users skipped on the way.
pub fn draw_round_replay(log: &ReplayLog, rng: &mut impl Rng, k: usize) -> Result<(Round, u64)> {
    if k == 0 {
        return Err(Error::EmptyArmSet);
    }
    if log.n_users() == 0 || !(0..log.n_users()).any(|u| log.is_eligible(u, k)) {
        return Err(Error::NoEligibleUser { arms: k });
    }
    let mut skipped = 0;
    let user = loop {
        let u = rng.random_range(0..log.n_users());
        if log.is_eligible(u, k) {
            break u;
        }
        skipped += 1;
    };
    let pos = log.positives(user);
    let neg = log.negatives(user);
    let mut picks = vec![pos[rng.random_range(0..pos.len())]];
    picks.extend(index::sample(rng, neg.len(), k - 1).into_iter().map(|i| neg[i]));
    picks.shuffle(rng);
    let arms = picks.iter().map(|&e| log.events[e].features.clone()).collect();
    let rewards = picks.iter().map(|&e| log.events[e].reward).collect();
    Ok((
        Round {
            user,
            arms,
            pool_rewards: Some(rewards),
        },
        skipped,
    ))
}

/// Source of rounds and rewards for a simulation.
pub trait Environment: Send {
    fn n_users(&self) -> usize;

    fn dim(&self) -> usize;

    fn next_round(&mut self) -> Result<Round>;

    /// Realized reward of `round.arms[chosen]`.
    fn reward(&mut self, round: &Round, chosen: usize) -> f64;

    /// Per-round regret of `chosen` against the best arm in the pool.
    fn regret(&self, round: &Round, chosen: usize) -> f64;

    /// Users skipped so far for lacking enough events.
    fn skipped(&self) -> u64 {
        0
    }
}

pub struct SyntheticEnv<'w> {
    world: &'w SyntheticWorld,
    rounds: ChaCha8Rng,
    noise: ChaCha8Rng,
}

impl<'w> SyntheticEnv<'w> {
    pub fn new(world: &'w SyntheticWorld, rounds: ChaCha8Rng, noise: ChaCha8Rng) -> Self {
        Self {
            world,
            rounds,
            noise,
        }
    }

    pub fn world(&self) -> &SyntheticWorld {
        self.world
    }
}

impl Environment for SyntheticEnv<'_> {
    fn n_users(&self) -> usize {
        self.world.n
    }

    fn dim(&self) -> usize {
        self.world.dim()
    }

    fn next_round(&mut self) -> Result<Round> {
        Ok(draw_round_synthetic(self.world, &mut self.rounds))
    }

    fn reward(&mut self, round: &Round, chosen: usize) -> f64 {
        realize_reward(self.world, round.user, &round.arms[chosen], &mut self.noise)
    }

    fn regret(&self, round: &Round, chosen: usize) -> f64 {
        evaluation::regret_step_synthetic(&self.world.thetas[round.user], &round.arms, chosen)
    }
}

pub struct ReplayEnv<'l> {
    log: &'l ReplayLog,
    rounds: ChaCha8Rng,
    k: usize,
    skipped: u64,
}

impl<'l> ReplayEnv<'l> {
    pub fn new(log: &'l ReplayLog, rounds: ChaCha8Rng, k: usize) -> Result<Self> {
        if k == 0 {
            return Err(Error::EmptyArmSet);
        }
        if !(0..log.n_users()).any(|u| log.is_eligible(u, k)) {
            return Err(Error::NoEligibleUser { arms: k });
        }
        Ok(Self {
            log,
            rounds,
            k,
            skipped: 0,
        })
    }
}

impl Environment for ReplayEnv<'_> {
    fn n_users(&self) -> usize {
        self.log.n_users()
    }

    fn dim(&self) -> usize {
        self.log.dim()
    }

    fn next_round(&mut self) -> Result<Round> {
        let (round, skipped) = draw_round_replay(self.log, &mut self.rounds, self.k)?;
        self.skipped += skipped;
        Ok(round)
    }

    fn reward(&mut self, round: &Round, chosen: usize) -> f64 {
        round.pool_rewards.as_ref().map_or(0.0, |r| r[chosen])
    }

    fn regret(&self, round: &Round, chosen: usize) -> f64 {
        round
            .pool_rewards
            .as_ref()
            .map_or(0.0, |r| evaluation::regret_step_replay(r, chosen))
    }

    fn skipped(&self) -> u64 {
        self.skipped
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    #[test]
    fn embed_examples() {
        let e = embed_normalize(&[3.0, 4.0]).unwrap();
        let s = 5.0 * 2f64.sqrt();
        assert!((e[0] - 3.0 / s).abs() < 1e-15);
        assert!((e[1] - 4.0 / s).abs() < 1e-15);
        assert_eq!(e[2], std::f64::consts::FRAC_1_SQRT_2);
        assert!((linalg::norm(&e) - 1.0).abs() < 1e-15);

        for c in [1e-3, 1.0, 7.5, 1e6] {
            let e = embed_normalize(&[c, 0.0, 0.0]).unwrap();
            assert!((e[0] - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-15);
            assert_eq!(&e[1..3], &[0.0, 0.0]);
            assert_eq!(e[3], std::f64::consts::FRAC_1_SQRT_2);
        }
        assert!(matches!(embed_normalize(&[0.0, 0.0]), Err(Error::ZeroVector)));
        assert!(embed_normalize(&[f64::NAN, 1.0]).is_err());
    }

    #[test]
    fn embedded_inner_products_lie_in_unit_interval() {
        let mut r = rng(11);
        for _ in 0..100_000 {
            let a = embed_normalize(&nonzero_gaussian(&mut r, 5)).unwrap();
            let b = embed_normalize(&nonzero_gaussian(&mut r, 5)).unwrap();
            let ip = linalg::dot(&a, &b);
            assert!((-1e-12..=1.0 + 1e-12).contains(&ip), "{ip}");
        }
    }

    fn pairwise_scan(world: &SyntheticWorld) {
        for i in 0..world.n {
            assert!((linalg::norm(&world.thetas[i]) - 1.0).abs() < 1e-12);
            for j in i + 1..world.n {
                if world.assignment[i] == world.assignment[j] {
                    assert!(linalg::distance(&world.thetas[i], &world.thetas[j]) < world.gamma_true);
                }
            }
        }
        let mut seen = vec![false; world.n];
        for (c, members) in world.clusters.iter().enumerate() {
            for &u in members {
                assert!(!seen[u]);
                seen[u] = true;
                assert_eq!(world.assignment[u], c);
            }
        }
        assert!(seen.iter().all(|&s| s));
    }

    #[test]
    fn default_world_satisfies_invariants() {
        for seed in 0..5 {
            let p = SyntheticParams::default();
            let w = generate_synthetic(&p, &mut rng(seed)).unwrap();
            assert_eq!(w.n, 100);
            assert_eq!(w.clusters.len(), 5);
            assert!(w.clusters.iter().all(|c| (5..=40).contains(&c.len())));
            assert_eq!(w.dim(), 6);
            pairwise_scan(&w);
            assert!(w.max_within_cluster_distance() < 0.2);
        }
    }

    #[test]
    fn single_cluster_world() {
        let p = SyntheticParams {
            n: 5,
            n_clusters: 1,
            ..SyntheticParams::default()
        };
        let w = generate_synthetic(&p, &mut rng(1)).unwrap();
        assert_eq!(w.clusters, vec![vec![0, 1, 2, 3, 4]]);
        pairwise_scan(&w);
    }

    #[test]
    fn infeasible_sizes_rejected() {
        let base = SyntheticParams::default();
        for p in [
            SyntheticParams { n: 10, ..base.clone() },
            SyntheticParams { n: 300, ..base.clone() },
            SyntheticParams { n: 3, n_clusters: 5, ..base.clone() },
            SyntheticParams { n_clusters: 0, ..base.clone() },
        ] {
            assert!(matches!(
                generate_synthetic(&p, &mut rng(0)),
                Err(Error::InfeasibleSizes(_))
            ));
        }
    }

    #[test]
    fn user_draws_are_uniform() {
        let p = SyntheticParams {
            n: 10,
            n_clusters: 2,
            ..SyntheticParams::default()
        };
        let w = generate_synthetic(&p, &mut rng(2)).unwrap();
        let mut r = rng(3);
        let draws = 100_000;
        let mut counts = vec![0usize; 10];
        for _ in 0..draws {
            let round = draw_round_synthetic(&w, &mut r);
            assert_eq!(round.arms.len(), 10);
            for a in &round.arms {
                assert!((linalg::norm(a) - 1.0).abs() < 1e-12);
            }
            counts[round.user] += 1;
        }
        let mean = draws as f64 / 10.0;
        let sd = (draws as f64 * 0.1 * 0.9).sqrt();
        for c in counts {
            assert!((c as f64 - mean).abs() < 3.0 * sd, "{c}");
        }
    }

    #[test]
    fn draws_are_deterministic() {
        let w = generate_synthetic(&SyntheticParams::default(), &mut rng(4)).unwrap();
        let w2 = generate_synthetic(&SyntheticParams::default(), &mut rng(4)).unwrap();
        assert_eq!(w, w2);
        let (mut a, mut b) = (rng(5), rng(5));
        for _ in 0..100 {
            assert_eq!(draw_round_synthetic(&w, &mut a), draw_round_synthetic(&w, &mut b));
        }
    }

    #[test]
    fn reward_cases() {
        let mut w = generate_synthetic(&SyntheticParams::default(), &mut rng(6)).unwrap();
        let x = draw_round_synthetic(&w, &mut rng(7)).arms[0].clone();
        let mean = linalg::dot(&w.thetas[3], &x);

        let mut r = rng(8);
        let n = 100_000;
        let avg: f64 = (0..n).map(|_| realize_reward(&w, 3, &x, &mut r)).sum::<f64>() / n as f64;
        assert!((avg - mean).abs() < 4.0 * w.sigma / (n as f64).sqrt());

        w.sigma = 0.0;
        assert_eq!(realize_reward(&w, 3, &x, &mut r), mean);
        let theta = w.thetas[3].clone();
        assert!((realize_reward(&w, 3, &theta, &mut r) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn world_text_round_trip() {
        let w = generate_synthetic(&SyntheticParams::default(), &mut rng(9)).unwrap();
        let back = SyntheticWorld::parse(&w.to_text(), Path::new("w")).unwrap();
        assert_eq!(w, back);
    }

    const SMALL: &str = "d=2\n7,1,0.5,0.25\n3,0,1,0\n7,0,-0.5,2\n";

    #[test]
    fn replay_smoke_parse() {
        let log = ReplayLog::parse(SMALL, Path::new("log")).unwrap();
        assert_eq!(log.events().len(), 3);
        assert_eq!(log.dim(), 2);
        assert_eq!(log.labels(), &[3, 7]);
        assert_eq!(log.positives(1), &[0]);
        assert_eq!(log.negatives(1), &[2]);
        assert_eq!(log.negatives(0), &[1]);
        assert!(log.events().iter().all(|e| e.features.len() == 2));
    }

    fn parse_err_line(text: &str) -> usize {
        match ReplayLog::parse(text, Path::new("log")) {
            Err(Error::Parse { line, .. }) => line,
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn replay_parse_errors_name_the_line() {
        assert_eq!(parse_err_line("d=2\n1,1,0,0\n1,2,0,0\n"), 3);
        assert_eq!(parse_err_line("d=2\n1,1,0,0\n1,0,0\n"), 3);
        assert_eq!(parse_err_line("d=2\n1,0.5,0,0\n"), 2);
        assert_eq!(parse_err_line("d=2\nx,1,0,0\n"), 2);
        assert_eq!(parse_err_line("d=2\n1,1,0,nan\n"), 2);
        assert_eq!(parse_err_line("dim=2\n"), 1);
        assert_eq!(parse_err_line(""), 1);
    }

    fn synthetic_log(seed: u64, users: u64, per_user: usize, d: usize) -> ReplayLog {
        let mut r = rng(seed);
        let mut events = Vec::new();
        for u in 0..users {
            for e in 0..per_user {
                let f: Vec<f64> = (0..d).map(|_| r.random_range(-1.0..1.0)).collect();
                let reward = if e % 4 == 0 { 1.0 } else { 0.0 };
                events.push((u * 10 + 1, reward, f));
            }
        }
        ReplayLog::from_events(d, events).unwrap()
    }

    #[test]
    fn replay_round_trip() {
        let log = synthetic_log(10, 6, 20, 4);
        let back = ReplayLog::parse(&log.to_text(), Path::new("log")).unwrap();
        assert_eq!(log, back);
    }

    #[test]
    fn replay_pools_have_one_positive_from_the_user() {
        let log = synthetic_log(11, 8, 40, 3);
        let mut r = rng(12);
        for _ in 0..2000 {
            let (round, skipped) = draw_round_replay(&log, &mut r, 10).unwrap();
            assert_eq!(skipped, 0);
            let rewards = round.pool_rewards.as_ref().unwrap();
            assert_eq!(rewards.iter().filter(|&&x| x == 1.0).count(), 1);
            assert_eq!(rewards.iter().copied().fold(f64::MIN, f64::max), 1.0);
            let own: Vec<&Vec<f64>> = log
                .events()
                .iter()
                .filter(|e| e.user == round.user)
                .map(|e| &e.features)
                .collect();
            for (arm, &rew) in round.arms.iter().zip(rewards) {
                let hit = log
                    .events()
                    .iter()
                    .find(|e| e.user == round.user && &e.features == arm)
                    .expect("arm comes from the served user's events");
                assert_eq!(hit.reward, rew);
                assert!(own.contains(&arm));
            }
        }
    }

    #[test]
    fn replay_single_arm_pool_is_the_positive() {
        let log = synthetic_log(13, 3, 8, 2);
        let mut r = rng(14);
        for _ in 0..100 {
            let (round, _) = draw_round_replay(&log, &mut r, 1).unwrap();
            assert_eq!(round.pool_rewards.as_deref(), Some(&[1.0][..]));
            assert_eq!(evaluation::regret_step_replay(&[1.0], 0), 0.0);
        }
    }

    #[test]
    fn replay_skips_ineligible_users() {
        let mut events = vec![(1u64, 1.0, vec![1.0]), (1, 0.0, vec![0.5]), (1, 0.0, vec![0.1])];
        events.push((2, 0.0, vec![0.3]));
        let log = ReplayLog::from_events(1, events).unwrap();
        let mut env = ReplayEnv::new(&log, rng(15), 3).unwrap();
        for _ in 0..200 {
            assert_eq!(env.next_round().unwrap().user, 0);
        }
        assert!(env.skipped() > 0);
        assert!(matches!(
            ReplayEnv::new(&log, rng(15), 4),
            Err(Error::NoEligibleUser { arms: 4 })
        ));
    }
}
