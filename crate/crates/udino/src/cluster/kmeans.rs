//! Lloyd's k-means with k-means++ seeding. Distances run in f64; empty
//! clusters are re-seeded from the point farthest from its centroid, which
//! cannot raise the objective; inertia is checked to be non-increasing on
//! every run.

use rand::Rng;

use crate::error::{Error, Result};
use crate::exec;
use crate::rng;
use crate::scoring::EmbeddingSet;

#[derive(Debug, Clone, PartialEq)]
pub struct KmeansResult {
    /// Point index -> cluster index.
    pub assignment: Vec<usize>,
    /// `k` centroids in the embedding space.
    pub centroids: Vec<Vec<f64>>,
    /// Points per cluster.
    pub sizes: Vec<usize>,
    /// Final sum of squared distances to assigned centroids.
    pub inertia: f64,
    /// Lloyd iterations actually run.
    pub iterations: usize,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(&x, &y)| (x - y) * (x - y)).sum()
}

pub fn kmeans(embs: &EmbeddingSet, k: usize, max_iters: usize, seed: u64) -> Result<KmeansResult> {
    let n = embs.len();
    if k == 0 || k > n {
        return Err(Error::Data(format!("kmeans: k = {k} with {n} points")));
    }
    let d = embs.dim();
    let points: Vec<Vec<f64>> = (0..n)
        .map(|i| embs.vector(i).iter().map(|&v| v as f64).collect())
        .collect();

    // k-means++ seeding.
    let mut r = rng::derive(seed, &[rng::TAG_KMEANS]);
    let mut centroids: Vec<Vec<f64>> = Vec::with_capacity(k);
    centroids.push(points[r.gen_range(0..n)].clone());
    let mut min_d2: Vec<f64> = points.iter().map(|p| sq_dist(p, &centroids[0])).collect();
    while centroids.len() < k {
        let total: f64 = min_d2.iter().sum();
        let next = if total <= 0.0 {
            // All remaining points coincide with a centroid; spread
            // deterministically over unused indices.
            (0..n)
                .find(|&i| !centroids.iter().any(|c| c == &points[i]))
                .unwrap_or(r.gen_range(0..n))
        } else {
            let mut draw = r.gen::<f64>() * total;
            let mut pick = n - 1;
            for (i, &w) in min_d2.iter().enumerate() {
                if draw < w {
                    pick = i;
                    break;
                }
                draw -= w;
            }
            pick
        };
        centroids.push(points[next].clone());
        let c = centroids.last().expect("just pushed");
        for (slot, p) in min_d2.iter_mut().zip(&points) {
            let nd = sq_dist(p, c);
            if nd < *slot {
                *slot = nd;
            }
        }
    }

    let mut assignment = vec![0usize; n];
    let mut prev_inertia = f64::INFINITY;
    let mut inertia = f64::INFINITY;
    let mut iterations = 0usize;
    for _iter in 0..max_iters.max(1) {
        // Assignment step (parallel, deterministic).
        let assigned = exec::map_ordered(&points, |_, p| {
            let mut best = 0usize;
            let mut best_d = f64::INFINITY;
            for (c, cent) in centroids.iter().enumerate() {
                let dd = sq_dist(p, cent);
                if dd < best_d {
                    best_d = dd;
                    best = c;
                }
            }
            (best, best_d)
        });
        let new_assignment: Vec<usize> = assigned.iter().map(|&(a, _)| a).collect();
        inertia = assigned.iter().map(|&(_, dd)| dd).sum();
        iterations += 1;
        assert!(
            inertia <= prev_inertia + 1e-9 * (1.0 + prev_inertia.abs().min(1e12)),
            "kmeans inertia increased: {prev_inertia} -> {inertia}"
        );
        let converged = new_assignment == assignment && iterations > 1;
        assignment = new_assignment;
        prev_inertia = inertia;
        if converged {
            break;
        }

        // Update step.
        let mut sums = vec![vec![0.0f64; d]; k];
        let mut counts = vec![0usize; k];
        for (p, &a) in points.iter().zip(&assignment) {
            counts[a] += 1;
            for (s, &v) in sums[a].iter_mut().zip(p) {
                *s += v;
            }
        }
        for c in 0..k {
            if counts[c] > 0 {
                for v in sums[c].iter_mut() {
                    *v /= counts[c] as f64;
                }
                centroids[c] = sums[c].clone();
            }
        }
        // Re-seed empty clusters from the farthest points.
        let empties: Vec<usize> = (0..k).filter(|&c| counts[c] == 0).collect();
        if !empties.is_empty() {
            let mut dist_to_own: Vec<(f64, usize)> = points
                .iter()
                .enumerate()
                .map(|(i, p)| (sq_dist(p, &centroids[assignment[i]]), i))
                .collect();
            dist_to_own.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)));
            for (slot, empty_c) in empties.into_iter().enumerate() {
                if slot < dist_to_own.len() {
                    centroids[empty_c] = points[dist_to_own[slot].1].clone();
                }
            }
        }
    }

    let mut sizes = vec![0usize; k];
    for &a in &assignment {
        sizes[a] += 1;
    }
    Ok(KmeansResult {
        assignment,
        centroids,
        sizes,
        inertia,
        iterations,
    })
}
