//! Normalized mutual information with arithmetic-mean normalization:
//! `NMI = 2 I(A; B) / (H(A) + H(B))`, and 1 for two identical constant
//! partitions.

use std::collections::BTreeMap;

use super::Assignment;
use crate::error::{Error, Result};

/// NMI between an assignment and a reference labeling over the same ids.
pub fn nmi(assignment: &Assignment, truth: &BTreeMap<String, String>) -> Result<f64> {
    if assignment.is_empty() {
        return Err(Error::Data("nmi: empty assignment".into()));
    }
    if assignment.ids.len() != truth.len() {
        return Err(Error::Data(format!(
            "nmi: {} assigned ids vs {} reference ids",
            assignment.ids.len(),
            truth.len()
        )));
    }
    let n = assignment.len() as f64;
    let mut joint: BTreeMap<(usize, &str), f64> = BTreeMap::new();
    let mut pa: BTreeMap<usize, f64> = BTreeMap::new();
    let mut pb: BTreeMap<&str, f64> = BTreeMap::new();
    for (id, &c) in assignment.ids.iter().zip(&assignment.clusters) {
        let label = truth
            .get(id)
            .ok_or_else(|| Error::MissingId(id.clone()))?
            .as_str();
        *joint.entry((c, label)).or_default() += 1.0;
        *pa.entry(c).or_default() += 1.0;
        *pb.entry(label).or_default() += 1.0;
    }
    let h = |counts: &[f64]| -> f64 {
        counts
            .iter()
            .map(|&cnt| {
                let p = cnt / n;
                if p > 0.0 {
                    -p * p.ln()
                } else {
                    0.0
                }
            })
            .sum()
    };
    let ha = h(&pa.values().copied().collect::<Vec<_>>());
    let hb = h(&pb.values().copied().collect::<Vec<_>>());
    let mut mi = 0.0f64;
    for ((c, label), &cnt) in joint.iter().map(|(k, v)| (*k, v)) {
        let pxy = cnt / n;
        let px = pa[&c] / n;
        let py = pb[label] / n;
        mi += pxy * (pxy / (px * py)).ln();
    }
    if ha + hb == 0.0 {
        // Both partitions constant: identical by definition.
        return Ok(1.0);
    }
    Ok((2.0 * mi / (ha + hb)).clamp(0.0, 1.0))
}
