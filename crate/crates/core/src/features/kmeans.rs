use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct KMeans {
    pub centroids: Vec<Vec<f64>>,
    pub assignments: Vec<usize>,
    /// Total squared error after each assignment step.
    pub inertia_history: Vec<f64>,
    pub iterations: usize,
}

impl KMeans {
    pub fn inertia(&self) -> f64 {
        *self.inertia_history.last().unwrap_or(&0.0)
    }
}

pub(crate) fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Index of the nearest centroid; ties go to the lower index.
pub(crate) fn nearest(point: &[f64], centroids: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (i, c) in centroids.iter().enumerate() {
        let d = sq_dist(point, c);
        if d < best.1 {
            best = (i, d);
        }
    }
    best
}

fn assign(points: &[Vec<f64>], centroids: &[Vec<f64>], out: &mut [usize]) -> f64 {
    let mut total = 0.0;
    for (p, slot) in points.iter().zip(out.iter_mut()) {
        let (i, d) = nearest(p, centroids);
        *slot = i;
        total += d;
    }
    total
}

/// k-means++ seeding: first centre uniform, then proportional to D².
fn seed_centroids(points: &[Vec<f64>], k: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let mut centroids = vec![points[rng.random_range(0..points.len())].clone()];
    let mut d2: Vec<f64> = points.iter().map(|p| sq_dist(p, &centroids[0])).collect();
    while centroids.len() < k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut r = rng.random_range(0.0..total);
            let mut idx = d2.len() - 1;
            for (i, &d) in d2.iter().enumerate() {
                if d > 0.0 && r < d {
                    idx = i;
                    break;
                }
                r -= d;
            }
            // guard against rounding landing on a zero-weight tail
            if d2[idx] == 0.0 {
                idx = d2.iter().rposition(|&d| d > 0.0).unwrap();
            }
            idx
        } else {
            rng.random_range(0..points.len())
        };
        let c = points[pick].clone();
        for (p, d) in points.iter().zip(d2.iter_mut()) {
            *d = d.min(sq_dist(p, &c));
        }
        centroids.push(c);
    }
    centroids
}

/// Lloyd's algorithm with k-means++ initialisation. Stops at an assignment
/// fixpoint or after `max_iter` updates. Empty clusters are reseeded with
/// the point farthest from its current centre.
pub fn kmeans(points: &[Vec<f64>], k: usize, seed: u64, max_iter: usize) -> Result<KMeans> {
    if k == 0 {
        return Err(Error::param("k must be >= 1"));
    }
    if points.len() < k {
        return Err(Error::param(format!(
            "k-means needs at least k={k} points, got {}",
            points.len()
        )));
    }
    let dim = points[0].len();
    if points.iter().any(|p| p.len() != dim) {
        return Err(Error::param("points have mixed dimensions"));
    }
    let mut distinct: Vec<&Vec<f64>> = Vec::new();
    for p in points {
        if distinct.len() >= k {
            break;
        }
        if !distinct.iter().any(|q| *q == p) {
            distinct.push(p);
        }
    }
    if distinct.len() < k {
        return Err(Error::param(format!(
            "k-means needs at least k={k} distinct points, got {}",
            distinct.len()
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids = seed_centroids(points, k, &mut rng);
    let mut assignments = vec![usize::MAX; points.len()];
    let mut history = vec![assign(points, &centroids, &mut assignments)];
    let mut iterations = 0;

    while iterations < max_iter {
        iterations += 1;
        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for (p, &a) in points.iter().zip(&assignments) {
            counts[a] += 1;
            for (s, v) in sums[a].iter_mut().zip(p) {
                *s += v;
            }
        }
        for c in 0..k {
            if counts[c] > 0 {
                centroids[c] = sums[c].iter().map(|s| s / counts[c] as f64).collect();
            }
        }
        for c in 0..k {
            if counts[c] == 0 {
                let (far, d) = points
                    .iter()
                    .enumerate()
                    .map(|(i, p)| (i, sq_dist(p, &centroids[assignments[i]])))
                    .fold((0, -1.0), |best, x| if x.1 > best.1 { x } else { best });
                if d > 0.0 {
                    centroids[c] = points[far].clone();
                    assignments[far] = c;
                }
            }
        }
        let mut next = assignments.clone();
        let inertia = assign(points, &centroids, &mut next);
        history.push(inertia);
        if next == assignments {
            break;
        }
        assignments = next;
    }

    Ok(KMeans {
        centroids,
        assignments,
        inertia_history: history,
        iterations,
    })
}
