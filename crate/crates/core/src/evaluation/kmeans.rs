//! Seeded Lloyd iterations with k-means++ initialization.

use rand::Rng as _;

use super::{squared_distance, EvalError, FeatureSet};
use crate::rng::Rng;

pub const MAX_ITERATIONS: usize = 100;
pub const RELATIVE_TOL: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq)]
pub struct KMeansResult {
    /// `k × d`, row-major.
    pub centroids: Vec<f64>,
    pub assignments: Vec<usize>,
    pub inertia: f64,
    pub iterations: usize,
}

fn nearest(point: &[f64], centroids: &[f64], dim: usize) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (c, centre) in centroids.chunks_exact(dim).enumerate() {
        let d = squared_distance(point, centre);
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

fn plus_plus(fs: &FeatureSet, k: usize, rng: &mut Rng) -> Vec<f64> {
    let n = fs.len();
    let dim = fs.dim();
    let mut centroids = Vec::with_capacity(k * dim);
    centroids.extend_from_slice(fs.row(rng.random_range(0..n)));
    let mut d2: Vec<f64> = (0..n).map(|i| squared_distance(fs.row(i), &centroids[..dim])).collect();
    for _ in 1..k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut chosen = n - 1;
            for (i, w) in d2.iter().enumerate() {
                if *w > 0.0 && target < *w {
                    chosen = i;
                    break;
                }
                target -= w;
            }
            chosen
        } else {
            rng.random_range(0..n)
        };
        let start = centroids.len();
        centroids.extend_from_slice(fs.row(pick));
        for (i, slot) in d2.iter_mut().enumerate() {
            *slot = slot.min(squared_distance(fs.row(i), &centroids[start..]));
        }
    }
    centroids
}

/// Clusters `fs` into `k` groups. Stops after [`MAX_ITERATIONS`] rounds or
/// when inertia changes by less than [`RELATIVE_TOL`] relative. A cluster
/// that empties keeps its previous centroid.
pub fn kmeans(fs: &FeatureSet, k: usize, rng: &mut Rng) -> Result<KMeansResult, EvalError> {
    let n = fs.len();
    let dim = fs.dim();
    if k == 0 || k > n {
        return Err(EvalError::TooManyClusters { clusters: k, points: n });
    }
    let mut centroids = plus_plus(fs, k, rng);
    let mut assignments = vec![0; n];
    let mut inertia = f64::INFINITY;
    let mut iterations = 0;
    while iterations < MAX_ITERATIONS {
        iterations += 1;
        let mut next = 0.0;
        for (i, slot) in assignments.iter_mut().enumerate() {
            let (c, d) = nearest(fs.row(i), &centroids, dim);
            *slot = c;
            next += d;
        }
        let mut sums = vec![0.0; k * dim];
        let mut counts = vec![0usize; k];
        for (i, &c) in assignments.iter().enumerate() {
            counts[c] += 1;
            for (s, x) in sums[c * dim..(c + 1) * dim].iter_mut().zip(fs.row(i)) {
                *s += x;
            }
        }
        for c in 0..k {
            if counts[c] > 0 {
                for j in 0..dim {
                    centroids[c * dim + j] = sums[c * dim + j] / counts[c] as f64;
                }
            }
        }
        let converged = inertia.is_finite() && (inertia - next).abs() <= RELATIVE_TOL * inertia.max(f64::MIN_POSITIVE);
        inertia = next;
        if converged || inertia == 0.0 {
            break;
        }
    }
    let mut final_inertia = 0.0;
    for (i, slot) in assignments.iter_mut().enumerate() {
        let (c, d) = nearest(fs.row(i), &centroids, dim);
        *slot = c;
        final_inertia += d;
    }
    Ok(KMeansResult { centroids, assignments, inertia: final_inertia, iterations })
}
