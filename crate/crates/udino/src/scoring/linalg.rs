//! Small dense f64 linear algebra for the Gaussian back-ends: symmetric
//! matrices in row-major storage, Cholesky factorization, triangular solves,
//! and log-determinants.

use crate::error::{Error, Result};

/// Lower-triangular Cholesky factor of a symmetric positive-definite matrix
/// (row-major `n x n`). Fails if the matrix is not positive definite.
pub fn cholesky(a: &[f64], n: usize) -> Result<Vec<f64>> {
    debug_assert_eq!(a.len(), n * n);
    let mut l = vec![0.0f64; n * n];
    for i in 0..n {
        for j in 0..=i {
            let mut sum = a[i * n + j];
            for k in 0..j {
                sum -= l[i * n + k] * l[j * n + k];
            }
            if i == j {
                if sum <= 0.0 || !sum.is_finite() {
                    return Err(Error::Numeric(format!(
                        "cholesky: matrix not positive definite (pivot {i} = {sum:.3e})"
                    )));
                }
                l[i * n + j] = sum.sqrt();
            } else {
                l[i * n + j] = sum / l[j * n + j];
            }
        }
    }
    Ok(l)
}

/// Solve `L L^T x = b` in place given the Cholesky factor.
pub fn chol_solve(l: &[f64], n: usize, b: &mut [f64]) {
    // Forward substitution: L y = b.
    for i in 0..n {
        let mut sum = b[i];
        for k in 0..i {
            sum -= l[i * n + k] * b[k];
        }
        b[i] = sum / l[i * n + i];
    }
    // Back substitution: L^T x = y.
    for i in (0..n).rev() {
        let mut sum = b[i];
        for k in (i + 1)..n {
            sum -= l[k * n + i] * b[k];
        }
        b[i] = sum / l[i * n + i];
    }
}

/// `log |A|` from the Cholesky factor of `A`.
pub fn logdet_from_chol(l: &[f64], n: usize) -> f64 {
    2.0 * (0..n).map(|i| l[i * n + i].ln()).sum::<f64>()
}

/// Dense symmetric inverse via Cholesky solves against identity columns.
pub fn chol_inverse(l: &[f64], n: usize) -> Vec<f64> {
    let mut inv = vec![0.0f64; n * n];
    let mut col = vec![0.0f64; n];
    for j in 0..n {
        col.iter_mut().for_each(|v| *v = 0.0);
        col[j] = 1.0;
        chol_solve(l, n, &mut col);
        for i in 0..n {
            inv[i * n + j] = col[i];
        }
    }
    // Symmetrize against rounding drift.
    for i in 0..n {
        for j in 0..i {
            let avg = 0.5 * (inv[i * n + j] + inv[j * n + i]);
            inv[i * n + j] = avg;
            inv[j * n + i] = avg;
        }
    }
    inv
}

pub fn mat_vec(a: &[f64], n: usize, x: &[f64], out: &mut [f64]) {
    for i in 0..n {
        let row = &a[i * n..(i + 1) * n];
        out[i] = row.iter().zip(x).map(|(&m, &v)| m * v).sum();
    }
}

/// Quadratic form `x^T A x`.
pub fn quad_form(a: &[f64], n: usize, x: &[f64]) -> f64 {
    let mut acc = 0.0;
    for i in 0..n {
        let row = &a[i * n..(i + 1) * n];
        let rx: f64 = row.iter().zip(x).map(|(&m, &v)| m * v).sum();
        acc += x[i] * rx;
    }
    acc
}
