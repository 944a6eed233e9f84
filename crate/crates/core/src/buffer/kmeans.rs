//! Lloyd's k-means with k-means++ seeding on flattened images.

use rand::Rng as _;

use crate::rng::Rng;

pub const MAX_ITERATIONS: usize = 100;

#[derive(Debug, Clone, PartialEq)]
pub struct Clustering {
    pub centroids: Vec<Vec<f64>>,
    /// Cluster id per input point.
    pub assignment: Vec<usize>,
    pub iterations: usize,
}

fn dist2(a: &[f32], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(&x, &c)| (f64::from(x) - c) * (f64::from(x) - c)).sum()
}

fn nearest(p: &[f32], centroids: &[Vec<f64>]) -> (usize, f64) {
    centroids.iter().enumerate().map(|(k, c)| (k, dist2(p, c))).fold((0, f64::INFINITY), |best, cur| if cur.1 < best.1 { cur } else { best })
}

fn plus_plus(points: &[&[f32]], k: usize, rng: &mut Rng) -> Vec<Vec<f64>> {
    let to_f64 = |p: &[f32]| p.iter().map(|&v| f64::from(v)).collect::<Vec<f64>>();
    let mut centroids = vec![to_f64(points[rng.random_range(0..points.len())])];
    let mut d2: Vec<f64> = points.iter().map(|p| dist2(p, &centroids[0])).collect();
    while centroids.len() < k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut r = rng.random_range(0.0..total);
            let mut chosen = points.len() - 1;
            for (i, &w) in d2.iter().enumerate() {
                if r < w {
                    chosen = i;
                    break;
                }
                r -= w;
            }
            chosen
        } else {
            rng.random_range(0..points.len())
        };
        let c = to_f64(points[pick]);
        for (d, p) in d2.iter_mut().zip(points) {
            *d = d.min(dist2(p, &c));
        }
        centroids.push(c);
    }
    centroids
}

/// Clusters `points` into `min(k, n)` groups. Empty clusters are re-seeded
/// with the point farthest from its centroid.
pub fn kmeans(points: &[&[f32]], k: usize, rng: &mut Rng) -> Clustering {
    let n = points.len();
    let k = k.min(n).max(1);
    if n == 0 {
        return Clustering { centroids: Vec::new(), assignment: Vec::new(), iterations: 0 };
    }
    let dim = points[0].len();
    let mut centroids = plus_plus(points, k, rng);
    let mut assignment = vec![usize::MAX; n];
    let mut iterations = 0;
    while iterations < MAX_ITERATIONS {
        iterations += 1;
        let mut changed = false;
        let mut dists = vec![0.0; n];
        for (i, p) in points.iter().enumerate() {
            let (c, d) = nearest(p, &centroids);
            dists[i] = d;
            if assignment[i] != c {
                assignment[i] = c;
                changed = true;
            }
        }
        let mut sums = vec![vec![0.0f64; dim]; k];
        let mut counts = vec![0usize; k];
        for (p, &c) in points.iter().zip(&assignment) {
            counts[c] += 1;
            for (s, &v) in sums[c].iter_mut().zip(p.iter()) {
                *s += f64::from(v);
            }
        }
        for c in 0..k {
            if counts[c] == 0 {
                let far = (0..n).max_by(|&a, &b| dists[a].total_cmp(&dists[b])).expect("non-empty");
                centroids[c] = points[far].iter().map(|&v| f64::from(v)).collect();
                dists[far] = 0.0;
                changed = true;
            } else {
                centroids[c] = sums[c].iter().map(|s| s / counts[c] as f64).collect();
            }
        }
        if !changed {
            break;
        }
    }
    Clustering { centroids, assignment, iterations }
}
