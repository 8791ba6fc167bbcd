//! Ground truth, clustering accuracy and regret accounting.

use std::collections::BTreeSet;

use rand::seq::index;
use rand::Rng;

use crate::error::{Error, Result};
use crate::linalg;
use crate::UserId;

/// Batch ridge solution `(I + Σ x xᵀ)⁻¹ Σ x r` over a full record set.
pub fn batch_theta<'a>(events: impl IntoIterator<Item = (&'a [f64], f64)>, d: usize) -> Vec<f64> {
    let mut a = linalg::identity(d);
    let mut b = vec![0.0; d];
    for (x, r) in events {
        for i in 0..d {
            b[i] += r * x[i];
            for j in 0..d {
                a[i * d + j] += x[i] * x[j];
            }
        }
    }
    linalg::solve_spd(&a, &b).unwrap_or_else(|| vec![0.0; d])
}

/// Whether every pair of `ids` is strictly closer than `gamma`.
pub fn is_gamma_cluster(ids: &[UserId], thetas: &[Vec<f64>], gamma: f64) -> bool {
    ids.iter().enumerate().all(|(k, &i)| {
        ids[k + 1..]
            .iter()
            .all(|&j| linalg::distance(&thetas[i], &thetas[j]) < gamma)
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct KMeans {
    pub assignment: Vec<usize>,
    pub centroids: Vec<Vec<f64>>,
    pub inertia: f64,
    /// Inertia after each assignment step of the winning restart.
    pub history: Vec<f64>,
}

fn nearest(p: &[f64], centroids: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (c, q) in centroids.iter().enumerate() {
        let dist: f64 = p.iter().zip(q).map(|(a, b)| (a - b) * (a - b)).sum();
        if dist < best.1 {
            best = (c, dist);
        }
    }
    best
}

fn lloyd(points: &[Vec<f64>], k: usize, rng: &mut impl Rng, max_iters: usize) -> KMeans {
    let d = points[0].len();
    let mut centroids: Vec<Vec<f64>> = index::sample(rng, points.len(), k)
        .into_iter()
        .map(|i| points[i].clone())
        .collect();
    let mut assignment = vec![usize::MAX; points.len()];
    let mut history = Vec::new();
    for _ in 0..max_iters.max(1) {
        let mut changed = false;
        let mut inertia = 0.0;
        for (i, p) in points.iter().enumerate() {
            let (c, dist) = nearest(p, &centroids);
            inertia += dist;
            if assignment[i] != c {
                assignment[i] = c;
                changed = true;
            }
        }
        history.push(inertia);
        if !changed {
            break;
        }
        let mut sums = vec![vec![0.0; d]; k];
        let mut counts = vec![0usize; k];
        for (p, &c) in points.iter().zip(&assignment) {
            linalg::axpy(1.0, p, &mut sums[c]);
            counts[c] += 1;
        }
        for c in 0..k {
            // an emptied cluster keeps its previous centroid
            if counts[c] > 0 {
                centroids[c] = sums[c].iter().map(|v| v / counts[c] as f64).collect();
            }
        }
    }
    let inertia = *history.last().unwrap_or(&0.0);
    KMeans {
        assignment,
        centroids,
        inertia,
        history,
    }
}

/// Lloyd's k-means, initialised from `k` distinct points drawn uniformly;
/// the restart with the lowest inertia wins (first one on ties).
pub fn kmeans(
    points: &[Vec<f64>],
    k: usize,
    rng: &mut impl Rng,
    max_iters: usize,
    restarts: usize,
) -> Result<KMeans> {
    if k == 0 || k > points.len() {
        return Err(Error::param(
            "k",
            format!("{k} clusters requested for {} points", points.len()),
        ));
    }
    let mut best: Option<KMeans> = None;
    for _ in 0..restarts.max(1) {
        let km = lloyd(points, k, rng, max_iters);
        if best.as_ref().is_none_or(|b| km.inertia < b.inertia) {
            best = Some(km);
        }
    }
    Ok(best.expect("at least one restart"))
}

fn medoid(ids: &[UserId], thetas: &[Vec<f64>]) -> UserId {
    let mut best = (ids[0], f64::INFINITY);
    for &i in ids {
        let total: f64 = ids.iter().map(|&j| linalg::distance(&thetas[i], &thetas[j])).sum();
        if total < best.1 {
            best = (i, total);
        }
    }
    best.0
}

fn grow_from(anchor: UserId, ids: &[UserId], thetas: &[Vec<f64>], gamma: f64) -> Vec<UserId> {
    let mut order: Vec<UserId> = ids.iter().copied().filter(|&i| i != anchor).collect();
    order.sort_by(|&a, &b| {
        linalg::distance(&thetas[a], &thetas[anchor])
            .total_cmp(&linalg::distance(&thetas[b], &thetas[anchor]))
            .then(a.cmp(&b))
    });
    let mut set = vec![anchor];
    for i in order {
        if set.iter().all(|&j| linalg::distance(&thetas[i], &thetas[j]) < gamma) {
            set.push(i);
        }
    }
    set.sort_unstable();
    set
}

/// Large subset of `ids` whose pairwise distances are all below `gamma`.
///
/// Greedy expansion: starting from an anchor, users are added nearest-first
/// whenever they stay within `gamma` of every member already taken. The
/// medoid is tried first, then every other member as anchor; the largest set
/// wins (earliest anchor on ties).
pub fn extract_gamma_cluster(ids: &[UserId], thetas: &[Vec<f64>], gamma: f64) -> Vec<UserId> {
    if ids.is_empty() {
        return Vec::new();
    }
    let m = medoid(ids, thetas);
    let mut best = grow_from(m, ids, thetas, gamma);
    for &anchor in ids {
        if anchor == m || best.len() == ids.len() {
            continue;
        }
        let cand = grow_from(anchor, ids, thetas, gamma);
        if cand.len() > best.len() {
            best = cand;
        }
    }
    best
}

/// Reference bandit parameters and the γ-clusters derived from them.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    pub thetas: Vec<Vec<f64>>,
    pub clusters: Vec<Vec<UserId>>,
}

impl GroundTruth {
    /// Checks every cluster against the pairwise `gamma` criterion.
    pub fn verify(&self, gamma: f64) -> bool {
        self.clusters
            .iter()
            .all(|c| is_gamma_cluster(c, &self.thetas, gamma))
    }
}

/// k-means over the reference parameters, then the largest γ-cluster inside
/// each k-means group.
pub fn derive_ground_truth(
    thetas: Vec<Vec<f64>>,
    k: usize,
    gamma: f64,
    rng: &mut impl Rng,
) -> Result<GroundTruth> {
    let km = kmeans(&thetas, k, rng, 300, 50)?;
    let mut clusters = Vec::new();
    for c in 0..k {
        let ids: Vec<UserId> = (0..thetas.len()).filter(|&i| km.assignment[i] == c).collect();
        if !ids.is_empty() {
            clusters.push(extract_gamma_cluster(&ids, &thetas, gamma));
        }
    }
    Ok(GroundTruth { thetas, clusters })
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Accuracy {
    pub f1: f64,
    pub precision: f64,
    pub recall: f64,
}

fn overlap(a: &BTreeSet<UserId>, b: &BTreeSet<UserId>) -> usize {
    a.intersection(b).count()
}

/// `(precision, recall, F1)` of `returned` against `truth`; F1 is 0 when
/// both precision and recall are 0.
pub fn prf(returned: &BTreeSet<UserId>, truth: &BTreeSet<UserId>) -> (f64, f64, f64) {
    let hit = overlap(returned, truth) as f64;
    let p = if returned.is_empty() { 0.0 } else { hit / returned.len() as f64 };
    let r = if truth.is_empty() { 0.0 } else { hit / truth.len() as f64 };
    let f = if p + r == 0.0 { 0.0 } else { 2.0 * p * r / (p + r) };
    (p, r, f)
}

/// Best-match accuracy: for every truth cluster pick the returned set with
/// the highest F1, then average F1, precision and recall of the picks.
pub fn f1_accuracy(returned: &[Vec<UserId>], truth: &[Vec<UserId>]) -> Result<Accuracy> {
    if truth.is_empty() {
        return Err(Error::param("truth", "no ground-truth clusters"));
    }
    if returned.is_empty() {
        return Ok(Accuracy::default());
    }
    let returned: Vec<BTreeSet<UserId>> = returned.iter().map(|s| s.iter().copied().collect()).collect();
    let mut acc = Accuracy::default();
    for t in truth {
        let t: BTreeSet<UserId> = t.iter().copied().collect();
        let mut best = (0.0, 0.0, -1.0);
        for r in &returned {
            let cand = prf(r, &t);
            if cand.2 > best.2 {
                best = cand;
            }
        }
        acc.precision += best.0;
        acc.recall += best.1;
        acc.f1 += best.2;
    }
    let k = truth.len() as f64;
    acc.f1 /= k;
    acc.precision /= k;
    acc.recall /= k;
    Ok(acc)
}

/// `max_a θᵀx_a − θᵀx_chosen`.
pub fn regret_step_synthetic(theta: &[f64], arms: &[Vec<f64>], chosen: usize) -> f64 {
    let best = arms
        .iter()
        .map(|x| linalg::dot(theta, x))
        .fold(f64::NEG_INFINITY, f64::max);
    (best - linalg::dot(theta, &arms[chosen])).max(0.0)
}

/// Regret in a replay pool: the best logged reward minus the chosen one.
pub fn regret_step_replay(pool_rewards: &[f64], chosen: usize) -> f64 {
    let best = pool_rewards.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    (best - pool_rewards[chosen]).max(0.0)
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RegretLedger {
    instantaneous: Vec<f64>,
    cumulative: Vec<f64>,
}

impl RegretLedger {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, r: f64) {
        let total = self.total() + r;
        self.instantaneous.push(r);
        self.cumulative.push(total);
    }

    pub fn total(&self) -> f64 {
        self.cumulative.last().copied().unwrap_or(0.0)
    }

    pub fn rounds(&self) -> usize {
        self.instantaneous.len()
    }

    pub fn instantaneous(&self) -> &[f64] {
        &self.instantaneous
    }

    pub fn cumulative(&self) -> &[f64] {
        &self.cumulative
    }
}
