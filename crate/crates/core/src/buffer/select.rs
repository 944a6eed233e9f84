//! Heterogeneity scores, roulette selection and balanced allocation.

use rand::Rng as _;

use crate::nn::ClassMask;
use crate::rng::Rng;

/// Pearson (non-excess) kurtosis `m4 / m2^2` of the active logits; 0 for a
/// constant vector.
pub fn kurtosis(logits: &[f32], mask: &ClassMask) -> f64 {
    let v: Vec<f64> = logits.iter().enumerate().filter(|(c, _)| mask.is_active(*c)).map(|(_, &x)| f64::from(x)).collect();
    if v.is_empty() {
        return 0.0;
    }
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let m2 = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    let m4 = v.iter().map(|x| (x - mean).powi(4)).sum::<f64>() / n;
    if m2 <= f64::EPSILON { 0.0 } else { m4 / (m2 * m2) }
}

/// Softmax probability of the most likely active class minus the second.
pub fn peak_difference(logits: &[f32], mask: &ClassMask) -> f64 {
    let v: Vec<f64> = logits.iter().enumerate().filter(|(c, _)| mask.is_active(*c)).map(|(_, &x)| f64::from(x)).collect();
    if v.len() < 2 {
        return if v.is_empty() { 0.0 } else { 1.0 };
    }
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut p: Vec<f64> = v.iter().map(|x| (x - max).exp()).collect();
    let z: f64 = p.iter().sum();
    p.iter_mut().for_each(|x| *x /= z);
    p.sort_by(|a, b| b.total_cmp(a));
    p[0] - p[1]
}

/// Draws `k` distinct indices, each pick proportional to the remaining
/// weights (uniform among the remainder once all of them are zero).
pub fn roulette(weights: &[f64], k: usize, rng: &mut Rng) -> Vec<usize> {
    let mut remaining: Vec<(usize, f64)> = weights.iter().map(|&w| w.max(0.0)).enumerate().filter(|(_, w)| w.is_finite()).collect();
    let mut out = Vec::with_capacity(k.min(remaining.len()));
    while out.len() < k && !remaining.is_empty() {
        let total: f64 = remaining.iter().map(|(_, w)| w).sum();
        let pos = if total > 0.0 {
            let mut r = rng.random_range(0.0..total);
            let mut last_positive = 0;
            let mut pos = None;
            for (j, &(_, w)) in remaining.iter().enumerate() {
                if w > 0.0 {
                    last_positive = j;
                    if r < w {
                        pos = Some(j);
                        break;
                    }
                }
                r -= w;
            }
            pos.unwrap_or(last_positive)
        } else {
            rng.random_range(0..remaining.len())
        };
        out.push(remaining.swap_remove(pos).0);
    }
    out
}

/// Splits `budget` as evenly as possible over bins with the given capacities.
/// Every bin gets `min(cap, level)` where the level is raised until the budget
/// (or the total capacity) is used; leftover units go to the earliest
/// unsaturated bins.
pub fn water_fill(budget: usize, caps: &[usize]) -> Vec<usize> {
    let total: usize = caps.iter().sum();
    let budget = budget.min(total);
    let mut alloc = vec![0usize; caps.len()];
    let mut left = budget;
    loop {
        let open: Vec<usize> = (0..caps.len()).filter(|&i| alloc[i] < caps[i]).collect();
        if left == 0 || open.is_empty() {
            break;
        }
        let share = left / open.len();
        if share == 0 {
            for &i in open.iter().take(left) {
                alloc[i] += 1;
            }
            break;
        }
        for &i in &open {
            let add = share.min(caps[i] - alloc[i]);
            alloc[i] += add;
            left -= add;
        }
    }
    alloc
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from_seed;

    #[test]
    fn kurtosis_of_known_vector() {
        // values {0,0,0,4}: mean 1, m2 = 3, m4 = (1+1+1+81)/4 = 21
        let k = kurtosis(&[0.0, 0.0, 0.0, 4.0], &ClassMask::all(4));
        assert!((k - 21.0 / 9.0).abs() < 1e-12);
        assert_eq!(kurtosis(&[1.0; 5], &ClassMask::all(5)), 0.0);
    }

    #[test]
    fn peak_difference_of_uniform_is_zero() {
        assert!(peak_difference(&[2.0, 2.0, 2.0], &ClassMask::all(3)).abs() < 1e-12);
        assert!(peak_difference(&[50.0, 0.0, 0.0], &ClassMask::all(3)) > 0.99);
        // inactive classes are ignored
        assert!(peak_difference(&[50.0, 0.0, 0.0], &ClassMask::from_classes(3, [1, 2])).abs() < 1e-12);
    }

    #[test]
    fn water_fill_respects_caps() {
        assert_eq!(water_fill(10, &[100, 100]), vec![5, 5]);
        assert_eq!(water_fill(10, &[2, 100, 100]), vec![2, 4, 4]);
        assert_eq!(water_fill(11, &[100, 100]), vec![6, 5]);
        assert_eq!(water_fill(1000, &[3, 4]), vec![3, 4]);
        assert_eq!(water_fill(0, &[3, 4]), vec![0, 0]);
    }

    #[test]
    fn roulette_returns_distinct_indices() {
        let mut rng = rng_from_seed(0);
        let picks = roulette(&[1.0, 0.0, 3.0, 0.5], 4, &mut rng);
        let mut sorted = picks.clone();
        sorted.sort_unstable();
        assert_eq!(sorted, vec![0, 1, 2, 3]);
        assert_eq!(roulette(&[1.0, 0.0], 1, &mut rng), vec![0]);
    }
}
