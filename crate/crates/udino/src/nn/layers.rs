//! Layer forward/backward kernels.
//!
//! Conventions: frame sequences are 2-D tensors `[T, C]` (time major), weight
//! matrices are `[out, in]`, conv weights are `[out, k, in]` so the inner
//! dot products run over contiguous memory.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{Real, Tensor};

/// Epsilon inside the pooled standard deviation: `std = sqrt(var + EPS)`.
pub const STATS_POOL_EPS: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Gelu,
}

impl Activation {
    #[inline]
    pub fn apply<T: Real>(self, x: T) -> T {
        match self {
            Activation::Relu => x.maxv(T::ZERO),
            Activation::Gelu => gelu(x),
        }
    }

    /// Derivative evaluated at the pre-activation value.
    #[inline]
    pub fn grad<T: Real>(self, x: T) -> T {
        match self {
            Activation::Relu => {
                if x > T::ZERO {
                    T::ONE
                } else {
                    T::ZERO
                }
            }
            Activation::Gelu => gelu_grad(x),
        }
    }
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

/// Tanh approximation of GELU.
#[inline]
pub fn gelu<T: Real>(x: T) -> T {
    let c = T::from_f64(GELU_C);
    let a = T::from_f64(GELU_A);
    let half = T::from_f64(0.5);
    let u = c * (x + a * x * x * x);
    half * x * (T::ONE + u.tanh())
}

#[inline]
pub fn gelu_grad<T: Real>(x: T) -> T {
    let c = T::from_f64(GELU_C);
    let a = T::from_f64(GELU_A);
    let half = T::from_f64(0.5);
    let three = T::from_f64(3.0);
    let u = c * (x + a * x * x * x);
    let t = u.tanh();
    let sech2 = T::ONE - t * t;
    half * (T::ONE + t) + half * x * sech2 * c * (T::ONE + three * a * x * x)
}

/// Per-dimension mean and population standard deviation over time:
/// `[T, D] -> [mean(D) || std(D)]` with `std = sqrt(var + eps)`.
pub fn stats_pool<T: Real>(x: &Tensor<T>) -> Tensor<T> {
    let (t, d) = (x.rows(), x.cols());
    assert!(t >= 1, "stats_pool needs at least one frame");
    let tf = T::from_f64(t as f64);
    let eps = T::from_f64(STATS_POOL_EPS);
    let mut out = vec![T::ZERO; 2 * d];
    for r in 0..t {
        let row = x.row(r);
        for (j, &v) in row.iter().enumerate() {
            out[j] += v;
        }
    }
    for j in 0..d {
        out[j] /= tf;
    }
    for r in 0..t {
        let row = x.row(r);
        for (j, &v) in row.iter().enumerate() {
            let c = v - out[j];
            out[d + j] += c * c;
        }
    }
    for j in 0..d {
        out[d + j] = (out[d + j] / tf + eps).sqrt();
    }
    Tensor::new(vec![2 * d], out).expect("stats_pool shape")
}

/// Backward of [`stats_pool`]: `grad` has length `2D`, returns `[T, D]`.
pub fn stats_pool_backward<T: Real>(x: &Tensor<T>, pooled: &Tensor<T>, grad: &[T]) -> Tensor<T> {
    let (t, d) = (x.rows(), x.cols());
    let tf = T::from_f64(t as f64);
    let mut gx = Tensor::zeros(&[t, d]);
    for r in 0..t {
        let row = x.row(r);
        let grow = gx.row_mut(r);
        for j in 0..d {
            let mean = pooled.data()[j];
            let std = pooled.data()[d + j];
            let gm = grad[j];
            let gs = grad[d + j];
            grow[j] = gm / tf + gs * (row[j] - mean) / (tf * std);
        }
    }
    gx
}

/// `v / ||v||`. Errors on the zero vector.
pub fn l2_normalize<T: Real>(v: &[T]) -> Result<(Vec<T>, T)> {
    let norm = v.iter().map(|&x| x * x).sum::<T>().sqrt();
    if norm <= T::ZERO || !norm.is_finite() {
        return Err(Error::Numeric("l2_normalize of zero vector".into()));
    }
    Ok((v.iter().map(|&x| x / norm).collect(), norm))
}

/// Backward of `y = v/||v||`: `gv = (g - y <y,g>) / ||v||`.
pub fn l2_normalize_backward<T: Real>(y: &[T], norm: T, grad: &[T]) -> Vec<T> {
    let dot = y.iter().zip(grad).map(|(&a, &b)| a * b).sum::<T>();
    y.iter()
        .zip(grad)
        .map(|(&yi, &gi)| (gi - yi * dot) / norm)
        .collect()
}

/// Cosine logits of a weight-normalized linear layer:
/// `logit_k = <w_k/||w_k||, v>`. Errors on a zero row.
pub fn weight_norm_linear<T: Real>(w: &Tensor<T>, v: &[T]) -> Result<Vec<T>> {
    let (k, d) = (w.rows(), w.cols());
    assert_eq!(d, v.len(), "weight_norm_linear input dim");
    let mut logits = Vec::with_capacity(k);
    for r in 0..k {
        let row = w.row(r);
        let norm = row.iter().map(|&x| x * x).sum::<T>().sqrt();
        if norm <= T::ZERO {
            return Err(Error::Numeric(format!("weight_norm_linear: zero row {r}")));
        }
        let dot = row.iter().zip(v).map(|(&a, &b)| a * b).sum::<T>();
        logits.push(dot / norm);
    }
    Ok(logits)
}

/// Backward of [`weight_norm_linear`] w.r.t. the input and the raw rows.
pub fn weight_norm_linear_backward<T: Real>(
    w: &Tensor<T>,
    v: &[T],
    grad_logits: &[T],
) -> (Vec<T>, Tensor<T>) {
    let (k, d) = (w.rows(), w.cols());
    let mut gv = vec![T::ZERO; d];
    let mut gw = Tensor::zeros(&[k, d]);
    for r in 0..k {
        let row = w.row(r);
        let norm = row.iter().map(|&x| x * x).sum::<T>().sqrt();
        let unit: Vec<T> = row.iter().map(|&x| x / norm).collect();
        let dot = unit.iter().zip(v).map(|(&a, &b)| a * b).sum::<T>();
        let g = grad_logits[r];
        let grow = gw.row_mut(r);
        for j in 0..d {
            gv[j] += g * unit[j];
            grow[j] = g * (v[j] - unit[j] * dot) / norm;
        }
    }
    (gv, gw)
}

/// `y = W x + b` with `W: [out, in]`.
pub fn linear_forward<T: Real>(w: &Tensor<T>, b: &Tensor<T>, x: &[T]) -> Vec<T> {
    let (out, inp) = (w.rows(), w.cols());
    debug_assert_eq!(inp, x.len());
    debug_assert_eq!(out, b.numel());
    (0..out)
        .map(|r| {
            let row = w.row(r);
            let mut acc = b.data()[r];
            for (a, &xv) in row.iter().zip(x) {
                acc += *a * xv;
            }
            acc
        })
        .collect()
}

/// Backward of [`linear_forward`]; returns `(grad_x, grad_w, grad_b)`.
pub fn linear_backward<T: Real>(w: &Tensor<T>, x: &[T], grad: &[T]) -> (Vec<T>, Tensor<T>, Vec<T>) {
    let (out, inp) = (w.rows(), w.cols());
    let mut gx = vec![T::ZERO; inp];
    let mut gw = Tensor::zeros(&[out, inp]);
    for r in 0..out {
        let g = grad[r];
        let row = w.row(r);
        let grow = gw.row_mut(r);
        for j in 0..inp {
            gx[j] += g * row[j];
            grow[j] = g * x[j];
        }
    }
    (gx, gw, grad.to_vec())
}

/// Numerically stable softmax.
pub fn softmax<T: Real>(logits: &[T]) -> Vec<T> {
    let max = logits
        .iter()
        .fold(T::from_f64(f64::NEG_INFINITY), |a, &b| a.maxv(b));
    let exps: Vec<T> = logits.iter().map(|&z| (z - max).exp()).collect();
    let sum: T = exps.iter().copied().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Numerically stable log-softmax.
pub fn log_softmax<T: Real>(logits: &[T]) -> Vec<T> {
    let max = logits
        .iter()
        .fold(T::from_f64(f64::NEG_INFINITY), |a, &b| a.maxv(b));
    let lse = logits
        .iter()
        .map(|&z| (z - max).exp())
        .sum::<T>()
        .ln()
        + max;
    logits.iter().map(|&z| z - lse).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tensor2(rows: usize, cols: usize, v: Vec<f64>) -> Tensor<f64> {
        Tensor::new(vec![rows, cols], v).unwrap()
    }

    #[test]
    fn stats_pool_constant_frames() {
        let x = tensor2(4, 2, vec![3.0; 8]);
        let out = stats_pool(&x);
        assert!((out.data()[0] - 3.0).abs() < 1e-12);
        assert!((out.data()[2] - STATS_POOL_EPS.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn stats_pool_two_values() {
        let x = tensor2(2, 1, vec![0.0, 2.0]);
        let out = stats_pool(&x);
        assert!((out.data()[0] - 1.0).abs() < 1e-12);
        assert!((out.data()[1] - (1.0 + STATS_POOL_EPS).sqrt()).abs() < 1e-12);
    }

    #[test]
    fn stats_pool_matches_two_pass_oracle() {
        // Independent two-pass mean/var on a random 50x8 input.
        let mut rng = crate::rng::derive(7, &[99]);
        let x = Tensor::<f64>::randn(&[50, 8], 1.3, &mut rng);
        let out = stats_pool(&x);
        for j in 0..8 {
            let col: Vec<f64> = (0..50).map(|r| x.row(r)[j]).collect();
            let mean = col.iter().sum::<f64>() / 50.0;
            let var = col.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / 50.0;
            assert!((out.data()[j] - mean).abs() < 1e-6);
            assert!((out.data()[8 + j] - (var + STATS_POOL_EPS).sqrt()).abs() < 1e-6);
        }
    }

    #[test]
    fn l2_normalize_basics() {
        let (y, _) = l2_normalize(&[3.0f64, 4.0]).unwrap();
        assert!((y[0] - 0.6).abs() < 1e-12 && (y[1] - 0.8).abs() < 1e-12);
        // Idempotence on a unit vector.
        let (y2, n2) = l2_normalize(&y).unwrap();
        assert!((n2 - 1.0).abs() < 1e-12);
        assert!((y2[0] - y[0]).abs() < 1e-12);
        assert!(l2_normalize(&[0.0f64, 0.0]).is_err());
    }

    #[test]
    fn weight_norm_linear_parallel_orthogonal_scale() {
        let v = vec![1.0f64, 0.0];
        let w = tensor2(2, 2, vec![5.0, 0.0, 0.0, -2.0]);
        let logits = weight_norm_linear(&w, &v).unwrap();
        assert!((logits[0] - 1.0).abs() < 1e-12);
        assert!(logits[1].abs() < 1e-12);
        // Scaling a row leaves logits unchanged.
        let w10 = tensor2(2, 2, vec![50.0, 0.0, 0.0, -2.0]);
        let logits10 = weight_norm_linear(&w10, &v).unwrap();
        assert!((logits[0] - logits10[0]).abs() < 1e-12);
        // Zero row errors.
        let wz = tensor2(2, 2, vec![0.0, 0.0, 1.0, 1.0]);
        assert!(weight_norm_linear(&wz, &v).is_err());
    }

    #[test]
    fn softmax_normalizes() {
        let p = softmax(&[0.3f64, -1.2, 2.0]);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        let lp = log_softmax(&[0.3f64, -1.2, 2.0]);
        assert!((lp.iter().map(|x| x.exp()).sum::<f64>() - 1.0).abs() < 1e-12);
    }
}
