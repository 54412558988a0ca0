use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::critics::squared_l2;
use crate::error::{Error, Result};

pub const KMEANS_MAX_ITERS: usize = 100;

#[derive(Clone, Debug, PartialEq)]
pub struct KMeansResult {
    pub centroids: Vec<Vec<f64>>,
    /// Cluster index of every point.
    pub assignment: Vec<usize>,
    pub iterations: usize,
}

/// Greedy farthest-point initialization from a seeded first center. Stops
/// early once the farthest remaining point is closer than `collapse_distance`
/// to an existing center, so duplicate centers inside one mode never arise.
pub fn farthest_point_init(points: &[Vec<f64>], k: usize, collapse_distance: f64, seed: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let first = rng.gen_range(0..points.len());
    let mut chosen = vec![first];
    let mut min_d: Vec<f64> = points.iter().map(|p| squared_l2(p, &points[first])).collect();
    let collapse_sq = collapse_distance * collapse_distance;
    while chosen.len() < k {
        let (best, &d) = min_d
            .iter()
            .enumerate()
            .fold((0, &f64::NEG_INFINITY), |acc, (i, d)| if *d > *acc.1 { (i, d) } else { acc });
        if d < collapse_sq || d == 0.0 {
            break;
        }
        chosen.push(best);
        for (m, p) in min_d.iter_mut().zip(points) {
            *m = m.min(squared_l2(p, &points[best]));
        }
    }
    chosen
}

fn nearest(p: &[f64], centroids: &[Vec<f64>]) -> usize {
    let mut best = 0;
    let mut bd = f64::INFINITY;
    for (j, c) in centroids.iter().enumerate() {
        let d = squared_l2(p, c);
        if d < bd {
            bd = d;
            best = j;
        }
    }
    best
}

/// Lloyd iterations until assignments are stable or `KMEANS_MAX_ITERS`.
/// Clusters that lose all members are dropped and indices compacted.
pub fn kmeans(points: &[Vec<f64>], k: usize, collapse_distance: f64, seed: u64) -> Result<KMeansResult> {
    if points.is_empty() || k == 0 {
        return Err(Error::InvalidArgument("k-means needs points and k > 0".into()));
    }
    let d = points[0].len();
    if points.iter().any(|p| p.len() != d) {
        return Err(Error::Shape("points differ in dimension".into()));
    }
    let mut centroids: Vec<Vec<f64>> = farthest_point_init(points, k, collapse_distance, seed)
        .into_iter()
        .map(|i| points[i].clone())
        .collect();
    let mut assignment: Vec<usize> = points.iter().map(|p| nearest(p, &centroids)).collect();
    let mut iterations = 0;
    while iterations < KMEANS_MAX_ITERS {
        iterations += 1;
        let mut sums = vec![vec![0.0; d]; centroids.len()];
        let mut counts = vec![0usize; centroids.len()];
        for (p, &a) in points.iter().zip(&assignment) {
            counts[a] += 1;
            for (s, v) in sums[a].iter_mut().zip(p) {
                *s += v;
            }
        }
        let keep: Vec<usize> = (0..centroids.len()).filter(|&j| counts[j] > 0).collect();
        centroids = keep
            .iter()
            .map(|&j| sums[j].iter().map(|s| s / counts[j] as f64).collect())
            .collect();
        let next: Vec<usize> = points.iter().map(|p| nearest(p, &centroids)).collect();
        let stable = keep.len() == counts.len() && next == assignment;
        assignment = next;
        if stable {
            break;
        }
    }
    Ok(KMeansResult {
        centroids,
        assignment,
        iterations,
    })
}
