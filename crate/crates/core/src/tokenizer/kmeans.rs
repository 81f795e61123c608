//! Lloyd's k-means with k-means++ seeding.
//!
//! Conventions used throughout the tokenizer: nearest-centroid ties break to
//! the lowest centroid index, and clusters that come up empty are reseeded to
//! the point currently farthest from its assigned centroid. Every iteration
//! ends with a mean update followed by a fresh assignment, which keeps the
//! total distortion non-increasing across calls that warm-start from the
//! previous centroids.

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;

use crate::linalg::{squared_distance, Mat};

#[derive(Debug, Clone)]
pub struct KMeansFit {
    /// k x dim centroid matrix.
    pub centroids: Mat,
    /// Nearest-centroid index per input point.
    pub assignments: Vec<usize>,
    /// Sum of squared distances to assigned centroids.
    pub distortion: f64,
}

/// Nearest centroid per point; returns (assignments, per-point squared
/// distance, total distortion).
pub fn assign(points: &Mat, centroids: &Mat) -> (Vec<usize>, Vec<f64>, f64) {
    let mut assignments = Vec::with_capacity(points.rows);
    let mut dists = Vec::with_capacity(points.rows);
    let mut total = 0.0;
    for i in 0..points.rows {
        let p = points.row(i);
        let mut best = 0usize;
        let mut best_d = f64::INFINITY;
        for c in 0..centroids.rows {
            let d = squared_distance(p, centroids.row(c));
            if d < best_d {
                best_d = d;
                best = c;
            }
        }
        assignments.push(best);
        dists.push(best_d);
        total += best_d;
    }
    (assignments, dists, total)
}

/// k-means++ seeding (D^2 weighting). Falls back to uniform choice when all
/// remaining distances are zero (duplicated points).
pub fn plus_plus_init(points: &Mat, k: usize, rng: &mut impl Rng) -> Mat {
    assert!(k >= 1 && points.rows >= k, "need at least k points");
    let dim = points.cols;
    let mut centroids = Mat::zeros(k, dim);
    let first = rng.random_range(0..points.rows);
    centroids.row_mut(0).copy_from_slice(points.row(first));

    let mut min_d: Vec<f64> = (0..points.rows)
        .map(|i| squared_distance(points.row(i), centroids.row(0)))
        .collect();

    for c in 1..k {
        let total: f64 = min_d.iter().sum();
        let pick = if total > 0.0 {
            let weights = WeightedIndex::new(&min_d).expect("positive total weight");
            weights.sample(rng)
        } else {
            rng.random_range(0..points.rows)
        };
        centroids.row_mut(c).copy_from_slice(points.row(pick));
        for (i, best) in min_d.iter_mut().enumerate() {
            let d = squared_distance(points.row(i), centroids.row(c));
            if d < *best {
                *best = d;
            }
        }
    }
    centroids
}

/// Lloyd iterations from the given centroids (mutated in place semantics via
/// ownership). Ends with a mean update and a final assignment.
pub fn lloyd(points: &Mat, mut centroids: Mat, iters: usize) -> KMeansFit {
    let k = centroids.rows;
    let dim = centroids.cols;
    for _ in 0..iters {
        let (mut assignments, mut dists, _) = assign(points, &centroids);

        // Reseed empty clusters to the farthest point, one at a time so two
        // empty clusters never grab the same point.
        let mut counts = vec![0usize; k];
        for &a in &assignments {
            counts[a] += 1;
        }
        for c in 0..k {
            if counts[c] == 0 && points.rows > 0 {
                let far = dists
                    .iter()
                    .enumerate()
                    .max_by(|a, b| a.1.partial_cmp(b.1).unwrap().then(b.0.cmp(&a.0)))
                    .map(|(i, _)| i)
                    .unwrap();
                centroids.row_mut(c).copy_from_slice(points.row(far));
                counts[assignments[far]] -= 1;
                assignments[far] = c;
                counts[c] = 1;
                dists[far] = 0.0;
            }
        }

        // Mean update.
        let mut sums = Mat::zeros(k, dim);
        for (i, &a) in assignments.iter().enumerate() {
            let p = points.row(i);
            let s = sums.row_mut(a);
            for (sv, &pv) in s.iter_mut().zip(p.iter()) {
                *sv += pv;
            }
        }
        for (c, &count) in counts.iter().enumerate() {
            if count > 0 {
                let inv = 1.0 / count as f64;
                for (dst, &src) in centroids.row_mut(c).iter_mut().zip(sums.row(c).iter()) {
                    *dst = src * inv;
                }
            }
        }
    }
    let (assignments, _, distortion) = assign(points, &centroids);
    KMeansFit {
        centroids,
        assignments,
        distortion,
    }
}

/// Fresh fit: k-means++ seeding followed by `iters` Lloyd iterations.
pub fn fit(points: &Mat, k: usize, iters: usize, rng: &mut impl Rng) -> KMeansFit {
    let centroids = plus_plus_init(points, k, rng);
    lloyd(points, centroids, iters)
}
