//! Lloyd's K-means with k-means++ seeding and seeded restarts.

use ndarray::{Array2, ArrayView1, ArrayView2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::LabelVector;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct KMeansConfig {
    pub seed: u64,
    pub max_iter: usize,
    /// Stop once the largest squared center shift drops below this.
    pub tol: f64,
    /// Independent seeded runs; the lowest-inertia run wins.
    pub restarts: usize,
}

impl Default for KMeansConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            max_iter: 300,
            tol: 1e-6,
            restarts: 10,
        }
    }
}

impl KMeansConfig {
    pub fn with_seed(self, seed: u64) -> Self {
        Self { seed, ..self }
    }
}

#[derive(Debug, Clone)]
pub struct KMeansResult {
    pub labels: LabelVector,
    pub centers: Array2<f64>,
    pub inertia: f64,
    pub iterations: usize,
    /// Inertia after every center update, ending with the final assignment.
    pub inertia_trace: Vec<f64>,
}

pub fn kmeans(data: ArrayView2<f64>, k: usize, config: &KMeansConfig) -> Result<KMeansResult> {
    let n = data.nrows();
    if k == 0 || k > n {
        return Err(Error::KTooLarge { k, rows: n });
    }
    if config.max_iter == 0 {
        return Err(Error::Config("kmeans max_iter must be at least 1".into()));
    }
    let mut seeder = ChaCha8Rng::seed_from_u64(config.seed);
    let mut best: Option<KMeansResult> = None;
    for _ in 0..config.restarts.max(1) {
        let mut rng = ChaCha8Rng::seed_from_u64(seeder.random());
        let run = lloyd(data, k, config, &mut rng);
        if best.as_ref().is_none_or(|b| run.inertia < b.inertia) {
            best = Some(run);
        }
    }
    Ok(best.expect("at least one restart"))
}

fn sq_dist(a: ArrayView1<f64>, b: ArrayView1<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn plus_plus_init(data: ArrayView2<f64>, k: usize, rng: &mut ChaCha8Rng) -> Array2<f64> {
    let n = data.nrows();
    let mut chosen = Vec::with_capacity(k);
    chosen.push(rng.random_range(0..n));
    let mut d2: Vec<f64> = (0..n).map(|i| sq_dist(data.row(i), data.row(chosen[0]))).collect();
    while chosen.len() < k {
        let total: f64 = d2.iter().sum();
        let next = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut pick = None;
            for (i, &d) in d2.iter().enumerate() {
                if d > 0.0 {
                    if target < d {
                        pick = Some(i);
                        break;
                    }
                    target -= d;
                }
            }
            // rounding can leave `target` just above the last positive weight
            pick.unwrap_or_else(|| d2.iter().rposition(|&d| d > 0.0).unwrap())
        } else {
            // every remaining point coincides with a chosen center
            let free: Vec<usize> = (0..n).filter(|i| !chosen.contains(i)).collect();
            free[rng.random_range(0..free.len())]
        };
        chosen.push(next);
        for (i, d) in d2.iter_mut().enumerate() {
            *d = d.min(sq_dist(data.row(i), data.row(next)));
        }
    }
    data.select(Axis(0), &chosen)
}

/// Nearest center per point (lowest index on ties) and its squared distance.
pub(crate) fn assign_nearest(data: ArrayView2<f64>, centers: ArrayView2<f64>) -> Vec<(usize, f64)> {
    (0..data.nrows())
        .into_par_iter()
        .map(|i| {
            let x = data.row(i);
            let mut best = (0, f64::INFINITY);
            for (j, c) in centers.axis_iter(Axis(0)).enumerate() {
                let d = sq_dist(x, c);
                if d < best.1 {
                    best = (j, d);
                }
            }
            best
        })
        .collect()
}

/// Moves the point farthest from its own center into each empty cluster.
/// Donor clusters keep at least one member. Returns whether anything moved.
fn repair_empty(labels: &mut [usize], dists: &mut [f64], k: usize) -> bool {
    let mut sizes = vec![0usize; k];
    for &l in labels.iter() {
        sizes[l] += 1;
    }
    let mut moved = false;
    for j in 0..k {
        if sizes[j] > 0 {
            continue;
        }
        let mut pick: Option<usize> = None;
        for i in 0..labels.len() {
            if sizes[labels[i]] > 1 && pick.is_none_or(|p| dists[i] > dists[p]) {
                pick = Some(i);
            }
        }
        let p = pick.expect("k <= n guarantees a donor");
        sizes[labels[p]] -= 1;
        sizes[j] += 1;
        labels[p] = j;
        dists[p] = 0.0;
        moved = true;
    }
    moved
}

pub(crate) fn cluster_means(data: ArrayView2<f64>, labels: &[usize], k: usize) -> Array2<f64> {
    let mut sums = Array2::<f64>::zeros((k, data.ncols()));
    let mut counts = vec![0usize; k];
    for (row, &l) in data.axis_iter(Axis(0)).zip(labels) {
        let mut s = sums.row_mut(l);
        s += &row;
        counts[l] += 1;
    }
    for (mut s, &c) in sums.axis_iter_mut(Axis(0)).zip(&counts) {
        if c > 0 {
            s.mapv_inplace(|v| v / c as f64);
        }
    }
    sums
}

fn inertia_of(data: ArrayView2<f64>, centers: ArrayView2<f64>, labels: &[usize]) -> f64 {
    labels
        .iter()
        .enumerate()
        .map(|(i, &l)| sq_dist(data.row(i), centers.row(l)))
        .sum()
}

fn lloyd(data: ArrayView2<f64>, k: usize, config: &KMeansConfig, rng: &mut ChaCha8Rng) -> KMeansResult {
    let mut centers = plus_plus_init(data, k, rng);
    let mut prev: Option<Vec<usize>> = None;
    let mut trace = Vec::new();
    let mut iterations = 0;
    for it in 1..=config.max_iter {
        iterations = it;
        let (mut labels, mut dists): (Vec<usize>, Vec<f64>) = assign_nearest(data, centers.view()).into_iter().unzip();
        let repaired = repair_empty(&mut labels, &mut dists, k);
        if !repaired && prev.as_ref() == Some(&labels) {
            break;
        }
        let updated = cluster_means(data, &labels, k);
        trace.push(inertia_of(data, updated.view(), &labels));
        let shift = updated
            .axis_iter(Axis(0))
            .zip(centers.axis_iter(Axis(0)))
            .map(|(a, b)| sq_dist(a, b))
            .fold(0.0, f64::max);
        centers = updated;
        prev = Some(labels);
        if shift < config.tol {
            break;
        }
    }
    let (mut labels, mut dists): (Vec<usize>, Vec<f64>) = assign_nearest(data, centers.view()).into_iter().unzip();
    if repair_empty(&mut labels, &mut dists, k) {
        centers = cluster_means(data, &labels, k);
    }
    let inertia = inertia_of(data, centers.view(), &labels);
    if trace.last() != Some(&inertia) {
        trace.push(inertia);
    }
    KMeansResult {
        labels: LabelVector::new(labels, k).expect("labels < k"),
        centers,
        inertia,
        iterations,
        inertia_trace: trace,
    }
}
