//! Finite-difference gradient verification.
//!
//! Runs at `f64`: central differences with `eps = 1e-4` resolve relative
//! errors far below the 1e-4 per-op tolerance, which single precision cannot.

use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::rng;

/// Compare an analytic gradient against central finite differences.
///
/// `f` is evaluated at perturbed copies of `params`; it must be
/// deterministic (two evaluations at the same point must agree exactly,
/// otherwise this returns an error). When `params` has more coordinates than
/// `max_coords`, a seeded sample of `max_coords` coordinates is checked.
///
/// Returns the maximum relative error `|a - n| / max(1, |a|, |n|)`.
pub fn grad_check<F>(
    mut f: F,
    params: &[f64],
    analytic: &[f64],
    eps: f64,
    max_coords: usize,
    seed: u64,
) -> Result<f64>
where
    F: FnMut(&[f64]) -> f64,
{
    if params.len() != analytic.len() {
        return Err(Error::Shape(format!(
            "grad_check: {} params vs {} gradient entries",
            params.len(),
            analytic.len()
        )));
    }
    let v1 = f(params);
    let v2 = f(params);
    if v1 != v2 || !v1.is_finite() {
        return Err(Error::Numeric(format!(
            "grad_check requires a deterministic finite function ({v1} vs {v2})"
        )));
    }

    let mut coords: Vec<usize> = (0..params.len()).collect();
    if coords.len() > max_coords {
        let mut r = rng::derive(seed, &[rng::TAG_GRADCHECK]);
        coords.shuffle(&mut r);
        coords.truncate(max_coords);
        coords.sort_unstable();
    }

    let mut work = params.to_vec();
    let mut max_rel = 0.0f64;
    for &i in &coords {
        let orig = work[i];
        work[i] = orig + eps;
        let fp = f(&work);
        work[i] = orig - eps;
        let fm = f(&work);
        work[i] = orig;
        let numeric = (fp - fm) / (2.0 * eps);
        let a = analytic[i];
        let rel = (a - numeric).abs() / 1.0_f64.max(a.abs()).max(numeric.abs());
        if rel > max_rel {
            max_rel = rel;
        }
    }
    Ok(max_rel)
}
