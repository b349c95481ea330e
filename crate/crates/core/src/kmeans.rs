//! k-means++ seeding.
//!
//! Only the seeding step is used: the mixture fit starts its means at the
//! chosen points and lets EM do the rest.

use nalgebra::DMatrix;
use rand::Rng;

fn sq_dist(data: &DMatrix<f64>, a: usize, b: usize) -> f64 {
    data.column(a)
        .iter()
        .zip(data.column(b).iter())
        .map(|(x, y)| (x - y) * (x - y))
        .sum()
}

/// Picks `k` distinct column indices of `data` (one point per column): the
/// first uniformly, each next one with probability proportional to its
/// squared distance to the nearest already-chosen seed.
pub fn kmeans_pp_seeds<R: Rng + ?Sized>(data: &DMatrix<f64>, k: usize, rng: &mut R) -> Vec<usize> {
    let n = data.ncols();
    assert!(k >= 1 && k <= n, "need 1 <= k <= n");
    let mut seeds = Vec::with_capacity(k);
    let mut chosen = vec![false; n];
    let first = rng.random_range(0..n);
    seeds.push(first);
    chosen[first] = true;
    let mut nearest: Vec<f64> = (0..n).map(|i| sq_dist(data, i, first)).collect();

    while seeds.len() < k {
        let total: f64 = nearest.iter().sum();
        let next = if total > 0.0 && total.is_finite() {
            let target = rng.random::<f64>() * total;
            let mut acc = 0.0;
            let mut pick = None;
            for (i, d) in nearest.iter().enumerate() {
                acc += d;
                if acc > target && !chosen[i] {
                    pick = Some(i);
                    break;
                }
            }
            // Rounding can leave `target` past the final partial sum.
            pick.unwrap_or_else(|| (0..n).rev().find(|&i| !chosen[i] && nearest[i] > 0.0).unwrap_or(0))
        } else {
            // Every remaining point coincides with a seed.
            let free: Vec<usize> = (0..n).filter(|&i| !chosen[i]).collect();
            free[rng.random_range(0..free.len())]
        };
        let next = if chosen[next] {
            (0..n).find(|&i| !chosen[i]).expect("k <= n")
        } else {
            next
        };
        seeds.push(next);
        chosen[next] = true;
        for (i, d) in nearest.iter_mut().enumerate() {
            *d = d.min(sq_dist(data, i, next));
        }
    }
    seeds
}
