//! Agglomerative clustering of k-means centroids under cosine distance with
//! size-weighted average linkage (the Lance-Williams update
//! `d(A+B, C) = (|A| d(A,C) + |B| d(B,C)) / (|A| + |B|)`, which keeps every
//! cluster distance equal to the size-weighted mean of the original
//! pairwise centroid distances). Ties merge the lowest pair index.

use crate::error::{Error, Result};

fn cosine_distance(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(&x, &y)| x * y).sum();
    let na: f64 = a.iter().map(|&x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|&x| x * x).sum::<f64>().sqrt();
    if na <= 0.0 || nb <= 0.0 {
        // A zero centroid is maximally distant from everything.
        return 2.0;
    }
    1.0 - dot / (na * nb)
}

/// Merge `centroids.len()` weighted clusters down to `n_clusters`. Returns
/// the mapping from input index to final cluster label; labels are dense and
/// ordered by each group's smallest input index.
pub fn ahc(centroids: &[Vec<f64>], weights: &[usize], n_clusters: usize) -> Result<Vec<usize>> {
    let k = centroids.len();
    if weights.len() != k {
        return Err(Error::Shape(format!(
            "{k} centroids with {} weights",
            weights.len()
        )));
    }
    if n_clusters == 0 || n_clusters > k {
        return Err(Error::Data(format!(
            "ahc: cannot merge {k} clusters into {n_clusters}"
        )));
    }

    // Dense distance matrix over active clusters.
    let mut dist = vec![0.0f64; k * k];
    for i in 0..k {
        for j in (i + 1)..k {
            let d = cosine_distance(&centroids[i], &centroids[j]);
            dist[i * k + j] = d;
            dist[j * k + i] = d;
        }
    }
    let mut active: Vec<bool> = vec![true; k];
    let mut weight: Vec<f64> = weights.iter().map(|&w| w.max(1) as f64).collect();
    // members[i] = original indices merged into active cluster i.
    let mut members: Vec<Vec<usize>> = (0..k).map(|i| vec![i]).collect();

    let mut remaining = k;
    while remaining > n_clusters {
        // Closest active pair, ties broken by lowest (i, j).
        let mut best = (f64::INFINITY, k, k);
        for i in 0..k {
            if !active[i] {
                continue;
            }
            for j in (i + 1)..k {
                if !active[j] {
                    continue;
                }
                let d = dist[i * k + j];
                if d < best.0 {
                    best = (d, i, j);
                }
            }
        }
        let (_, a, b) = best;
        // Lance-Williams size-weighted average update into slot `a`.
        let (wa, wb) = (weight[a], weight[b]);
        for o in 0..k {
            if !active[o] || o == a || o == b {
                continue;
            }
            let d = (wa * dist[a * k + o] + wb * dist[b * k + o]) / (wa + wb);
            dist[a * k + o] = d;
            dist[o * k + a] = d;
        }
        weight[a] = wa + wb;
        active[b] = false;
        let moved = std::mem::take(&mut members[b]);
        members[a].extend(moved);
        remaining -= 1;
    }

    // Dense labels ordered by smallest member index.
    let mut groups: Vec<Vec<usize>> = members
        .into_iter()
        .zip(&active)
        .filter(|(_, &a)| a)
        .map(|(m, _)| m)
        .collect();
    for g in groups.iter_mut() {
        g.sort_unstable();
    }
    groups.sort_by_key(|g| g[0]);
    let mut mapping = vec![0usize; k];
    for (label, g) in groups.iter().enumerate() {
        for &idx in g {
            mapping[idx] = label;
        }
    }
    Ok(mapping)
}
