use std::collections::BTreeMap;

use rand::seq::index;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{CcrError, Result};
use crate::linalg::dot;
use crate::numerics::l2_normalize;
use crate::scalar::Scalar;
use crate::seed::{derive_seed, rng_for};

pub const DEFAULT_MAX_ITERS: usize = 100;
pub const DEFAULT_K_MAX: usize = 32;
pub const DEFAULT_SAMPLE_CAP: usize = 256;
pub const DEFAULT_N_INIT: usize = 4;

#[derive(Debug, Clone, PartialEq)]
pub struct ClusteringResult<T> {
    pub centroids: Vec<Vec<T>>,
    pub assignments: Vec<usize>,
    /// Mean cosine distance of each point to its centroid.
    pub inertia: f64,
    /// Inertia after every centroid update, in order.
    pub inertia_history: Vec<f64>,
    pub iterations: usize,
}

fn cos_dist<T: Scalar>(a: &[T], b: &[T]) -> f64 {
    1.0 - dot(a, b).as_f64()
}

fn assign_all<T: Scalar>(points: &[Vec<T>], centroids: &[Vec<T>]) -> Vec<usize> {
    points
        .iter()
        .map(|p| {
            let mut best = (0, T::neg_infinity());
            for (c, cen) in centroids.iter().enumerate() {
                let s = dot(p, cen);
                if s > best.1 {
                    best = (c, s);
                }
            }
            best.0
        })
        .collect()
}

/// Gives every empty cluster the point farthest from its current centroid,
/// taken from clusters that can spare one.
fn repair_empty<T: Scalar>(points: &[Vec<T>], centroids: &mut [Vec<T>], assign: &mut [usize]) {
    let k = centroids.len();
    loop {
        let mut sizes = vec![0usize; k];
        for &a in assign.iter() {
            sizes[a] += 1;
        }
        let Some(empty) = sizes.iter().position(|&s| s == 0) else {
            return;
        };
        let mut far: Option<(usize, f64)> = None;
        for (i, p) in points.iter().enumerate() {
            if sizes[assign[i]] < 2 {
                continue;
            }
            let d = cos_dist(p, &centroids[assign[i]]);
            if far.is_none_or(|(_, best)| d > best) {
                far = Some((i, d));
            }
        }
        let Some((i, _)) = far else { return };
        assign[i] = empty;
        centroids[empty] = points[i].clone();
    }
}

fn update<T: Scalar>(points: &[Vec<T>], assign: &[usize], centroids: &mut [Vec<T>]) {
    let dim = points[0].len();
    let mut sums = vec![vec![T::zero(); dim]; centroids.len()];
    for (p, &a) in points.iter().zip(assign) {
        for (s, &v) in sums[a].iter_mut().zip(p) {
            *s += v;
        }
    }
    for (c, s) in centroids.iter_mut().zip(sums) {
        // antipodal members can cancel; keep the previous centroid then
        if let Ok(n) = l2_normalize(&s) {
            *c = n;
        }
    }
}

fn inertia<T: Scalar>(points: &[Vec<T>], assign: &[usize], centroids: &[Vec<T>]) -> f64 {
    let total: f64 = points
        .iter()
        .zip(assign)
        .map(|(p, &a)| cos_dist(p, &centroids[a]))
        .sum();
    total / points.len() as f64
}

/// k-means++ seeding with cosine distance as the sampling weight.
fn seed_centroids<T: Scalar>(points: &[Vec<T>], k: usize, seed: u64) -> Vec<Vec<T>> {
    let mut rng = rng_for(seed, "kmeans-init", &[k as u64, points.len() as u64]);
    let n = points.len();
    let mut chosen = vec![rng.random_range(0..n)];
    let mut dist: Vec<f64> = points.iter().map(|p| cos_dist(p, &points[chosen[0]]).max(0.0)).collect();
    while chosen.len() < k {
        let total: f64 = dist.iter().sum();
        let next = if total > 0.0 {
            let mut u = rng.random::<f64>() * total;
            let mut pick = None;
            for (i, &d) in dist.iter().enumerate() {
                if d <= 0.0 {
                    continue;
                }
                if u < d {
                    pick = Some(i);
                    break;
                }
                u -= d;
            }
            pick.unwrap_or_else(|| dist.iter().rposition(|&d| d > 0.0).unwrap())
        } else {
            let free: Vec<usize> = (0..n).filter(|i| !chosen.contains(i)).collect();
            free[rng.random_range(0..free.len())]
        };
        chosen.push(next);
        for (d, p) in dist.iter_mut().zip(points) {
            *d = d.min(cos_dist(p, &points[next]).max(0.0));
        }
    }
    chosen.into_iter().map(|i| points[i].clone()).collect()
}

/// Spherical k-means: assignments by cosine, centroids are normalised means.
pub fn spherical_kmeans<T: Scalar>(
    points: &[impl AsRef<[T]>],
    k: usize,
    seed: u64,
    max_iters: usize,
) -> Result<ClusteringResult<T>> {
    if k == 0 {
        return Err(CcrError::InvalidArgument("k must be >= 1".into()));
    }
    if k > points.len() {
        return Err(CcrError::InvalidArgument(format!(
            "k = {k} exceeds the number of points ({})",
            points.len()
        )));
    }
    let points: Vec<Vec<T>> = points
        .iter()
        .map(|p| l2_normalize(p.as_ref()))
        .collect::<Result<_>>()?;
    let dim = points[0].len();
    if points.iter().any(|p| p.len() != dim) {
        return Err(CcrError::DimensionMismatch {
            context: "spherical_kmeans points",
            expected: dim,
            got: points.iter().map(|p| p.len()).find(|&l| l != dim).unwrap(),
        });
    }

    let mut centroids = seed_centroids(&points, k, seed);
    let mut assign = assign_all(&points, &centroids);
    repair_empty(&points, &mut centroids, &mut assign);
    let mut history = Vec::new();
    let mut iterations = 0;
    while iterations < max_iters.max(1) {
        iterations += 1;
        update(&points, &assign, &mut centroids);
        history.push(inertia(&points, &assign, &centroids));
        let mut next = assign_all(&points, &centroids);
        repair_empty(&points, &mut centroids, &mut next);
        if next == assign {
            break;
        }
        assign = next;
        if iterations == max_iters.max(1) {
            update(&points, &assign, &mut centroids);
            history.push(inertia(&points, &assign, &centroids));
        }
    }
    Ok(ClusteringResult {
        inertia: *history.last().unwrap(),
        centroids,
        assignments: assign,
        inertia_history: history,
        iterations,
    })
}

/// Best of `n_init` seeded runs by final inertia; ties keep the earlier
/// run. The first run uses `seed` itself.
pub fn spherical_kmeans_restarts<T: Scalar>(
    points: &[impl AsRef<[T]>],
    k: usize,
    seed: u64,
    max_iters: usize,
    n_init: usize,
) -> Result<ClusteringResult<T>> {
    let mut best = spherical_kmeans(points, k, seed, max_iters)?;
    for i in 1..n_init.max(1) {
        let run = spherical_kmeans(points, k, derive_seed(seed, "kmeans-restart", &[i as u64]), max_iters)?;
        if run.inertia < best.inertia {
            best = run;
        }
    }
    Ok(best)
}

/// Mean cosine silhouette. Members of singleton clusters score 0.
pub fn silhouette_cos<T: Scalar>(points: &[impl AsRef<[T]>], assignments: &[usize]) -> Result<f64> {
    if points.len() != assignments.len() {
        return Err(CcrError::DimensionMismatch {
            context: "silhouette assignments",
            expected: points.len(),
            got: assignments.len(),
        });
    }
    let mut clusters: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, &a) in assignments.iter().enumerate() {
        clusters.entry(a).or_default().push(i);
    }
    if clusters.len() < 2 {
        return Err(CcrError::InvalidArgument(
            "silhouette needs at least two non-empty clusters".into(),
        ));
    }
    let unit: Vec<Vec<T>> = points
        .iter()
        .map(|p| l2_normalize(p.as_ref()))
        .collect::<Result<_>>()?;
    let n = unit.len();
    let mut total = 0.0;
    for i in 0..n {
        let own = &clusters[&assignments[i]];
        if own.len() == 1 {
            continue;
        }
        let mean_dist = |members: &[usize]| {
            let s: f64 = members
                .iter()
                .filter(|&&j| j != i)
                .map(|&j| cos_dist(&unit[i], &unit[j]))
                .sum();
            let cnt = members.iter().filter(|&&j| j != i).count();
            s / cnt as f64
        };
        let a = mean_dist(own);
        let b = clusters
            .iter()
            .filter(|(&c, _)| c != assignments[i])
            .map(|(_, m)| mean_dist(m))
            .fold(f64::INFINITY, f64::min);
        let denom = a.max(b);
        if denom > 0.0 {
            total += (b - a) / denom;
        }
    }
    Ok(total / n as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct AutoKConfig {
    pub k_max: usize,
    pub sample_cap: usize,
    pub max_iters: usize,
    /// Seeded k-means restarts per candidate `k`; the lowest inertia wins.
    pub n_init: usize,
}

impl Default for AutoKConfig {
    fn default() -> Self {
        Self {
            k_max: DEFAULT_K_MAX,
            sample_cap: DEFAULT_SAMPLE_CAP,
            max_iters: DEFAULT_MAX_ITERS,
            n_init: DEFAULT_N_INIT,
        }
    }
}

/// Upper end of the Auto-K search range for `n` points.
pub fn auto_k_upper(n: usize, k_max: usize) -> usize {
    k_max.min(n.isqrt())
}

/// Silhouette score of each candidate `k`, in increasing `k`.
pub fn auto_k_scores<T: Scalar>(
    points: &[impl AsRef<[T]>],
    config: &AutoKConfig,
    seed: u64,
) -> Result<Vec<(usize, f64)>> {
    let n = points.len();
    let upper = auto_k_upper(n, config.k_max);
    if upper < 2 {
        return Ok(Vec::new());
    }
    let m = n.min(config.sample_cap);
    let mut rng = rng_for(seed, "autok-sample", &[n as u64]);
    let mut idx = index::sample(&mut rng, n, m).into_vec();
    idx.sort_unstable();
    let sample: Vec<&[T]> = idx.iter().map(|&i| points[i].as_ref()).collect();
    let upper = upper.min(m);
    let mut scores = Vec::new();
    for k in 2..=upper {
        let res = spherical_kmeans_restarts(
            &sample,
            k,
            derive_seed(seed, "autok-kmeans", &[k as u64]),
            config.max_iters,
            config.n_init,
        )?;
        scores.push((k, silhouette_cos(&sample, &res.assignments)?));
    }
    Ok(scores)
}

/// Number of prototypes for one class. Ties go to the smaller `k`.
pub fn auto_k<T: Scalar>(points: &[impl AsRef<[T]>], config: &AutoKConfig, seed: u64) -> Result<usize> {
    if points.is_empty() {
        return Err(CcrError::InvalidArgument("auto_k of an empty class".into()));
    }
    let scores = auto_k_scores(points, config, seed)?;
    let mut best: Option<(usize, f64)> = None;
    for (k, s) in scores {
        if best.is_none_or(|(_, b)| s > b) {
            best = Some((k, s));
        }
    }
    Ok(best.map_or(1, |(k, _)| k))
}
