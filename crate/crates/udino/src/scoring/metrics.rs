//! EER and minDCF over threshold sweeps.
//!
//! Both metrics evaluate the decision rule "accept when score >= t" at every
//! distinct score plus a reject-all sentinel, which covers every achievable
//! operating point (thresholds between consecutive distinct scores, e.g. at
//! midpoints, reproduce the counts of the next distinct score). EER linearly
//! interpolates between the two operating points where FAR - FRR changes
//! sign.

use crate::error::{Error, Result};
use crate::scoring::ScoreSet;

fn split_sorted(scores: &ScoreSet) -> Result<(Vec<f64>, Vec<f64>)> {
    if scores.scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::Numeric("scores contain non-finite values".into()));
    }
    let mut targets = Vec::new();
    let mut nontargets = Vec::new();
    for (&s, &l) in scores.scores.iter().zip(&scores.labels) {
        if l {
            targets.push(s);
        } else {
            nontargets.push(s);
        }
    }
    if targets.is_empty() || nontargets.is_empty() {
        return Err(Error::Data(
            "metrics need at least one target and one nontarget trial".into(),
        ));
    }
    targets.sort_by(|a, b| a.partial_cmp(b).unwrap());
    nontargets.sort_by(|a, b| a.partial_cmp(b).unwrap());
    Ok((targets, nontargets))
}

/// Operating points `(far, frr)` in ascending-threshold order.
fn operating_points(targets: &[f64], nontargets: &[f64], all_scores: &ScoreSet) -> Vec<(f64, f64)> {
    let mut distinct: Vec<f64> = all_scores.scores.clone();
    distinct.sort_by(|a, b| a.partial_cmp(b).unwrap());
    distinct.dedup();
    let n_tg = targets.len() as f64;
    let n_nt = nontargets.len() as f64;
    let mut ops = Vec::with_capacity(distinct.len() + 1);
    for &t in &distinct {
        // far = P(nontarget >= t), frr = P(target < t)
        let nt_below = nontargets.partition_point(|&s| s < t);
        let tg_below = targets.partition_point(|&s| s < t);
        ops.push((
            (nontargets.len() - nt_below) as f64 / n_nt,
            tg_below as f64 / n_tg,
        ));
    }
    // Reject-all sentinel (threshold above every score).
    ops.push((0.0, 1.0));
    ops
}

/// Equal error rate in percent.
pub fn eer(scores: &ScoreSet) -> Result<f64> {
    let (targets, nontargets) = split_sorted(scores)?;
    let ops = operating_points(&targets, &nontargets, scores);
    Ok(eer_from_operating_points(&ops) * 100.0)
}

/// Crossing-point EER shared with the brute-force oracle convention:
/// find the first operating point where `far - frr <= 0` and interpolate
/// linearly from its predecessor.
pub fn eer_from_operating_points(ops: &[(f64, f64)]) -> f64 {
    let mut prev = ops[0];
    for &op in ops.iter() {
        let d = op.0 - op.1;
        if d <= 0.0 {
            if d == 0.0 {
                return op.0;
            }
            let d_prev = prev.0 - prev.1;
            if d_prev <= 0.0 {
                // First point already past the crossing (degenerate).
                return op.0.max(op.1).min(prev.0.max(prev.1));
            }
            let lambda = d_prev / (d_prev - d);
            return prev.0 + lambda * (op.0 - prev.0);
        }
        prev = op;
    }
    // FAR stayed above FRR everywhere; the sentinel guarantees this is
    // unreachable, but fall back to the last point.
    let last = ops[ops.len() - 1];
    last.0.max(last.1)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DcfParams {
    pub p_target: f64,
    pub c_miss: f64,
    pub c_fa: f64,
}

impl Default for DcfParams {
    fn default() -> Self {
        DcfParams {
            p_target: 0.01,
            c_miss: 1.0,
            c_fa: 1.0,
        }
    }
}

/// Minimum normalized detection cost over all thresholds (including the
/// accept-all and reject-all rules, so the result never exceeds 1).
pub fn min_dcf(scores: &ScoreSet, params: &DcfParams) -> Result<f64> {
    let (targets, nontargets) = split_sorted(scores)?;
    let ops = operating_points(&targets, &nontargets, scores);
    Ok(min_dcf_from_operating_points(&ops, params))
}

pub fn min_dcf_from_operating_points(ops: &[(f64, f64)], params: &DcfParams) -> f64 {
    let norm = (params.p_target * params.c_miss).min((1.0 - params.p_target) * params.c_fa);
    let mut best = f64::INFINITY;
    for &(far, frr) in ops {
        let cost =
            (params.p_target * params.c_miss * frr + (1.0 - params.p_target) * params.c_fa * far)
                / norm;
        if cost < best {
            best = cost;
        }
    }
    best
}
