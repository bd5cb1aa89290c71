//! Two-covariance PLDA: `x = mu + y + e` with `y ~ N(0, B)` between
//! speakers and `e ~ N(0, W)` within, fitted by EM, scored as the
//! log-likelihood ratio of same-speaker versus different-speaker hypotheses.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::linalg::{chol_inverse, chol_solve, cholesky, logdet_from_chol, mat_vec, quad_form};
use super::EmbeddingSet;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PldaModel {
    pub dim: usize,
    pub mu: Vec<f64>,
    /// Between-speaker covariance, row-major `dim x dim`.
    pub between: Vec<f64>,
    /// Within-speaker covariance, row-major `dim x dim`.
    pub within: Vec<f64>,
}

/// Precomputed quadratic forms for scoring.
///
/// With `T = B + W`, the same-speaker joint covariance is `[[T, B], [B, T]]`
/// whose inverse has blocks `X = (T - B T^-1 B)^-1` on the diagonal and the
/// symmetric `Y = -T^-1 B X` off it. The LLR then needs only `T^-1`, `X`,
/// `Y`, and a log-determinant ratio. Scores are computed through the
/// sum/difference decomposition, which makes them exactly symmetric in the
/// two inputs.
pub struct PldaScorer {
    dim: usize,
    mu: Vec<f64>,
    t_inv: Vec<f64>,
    x_plus_y: Vec<f64>,
    x_minus_y: Vec<f64>,
    log_ratio: f64,
}

impl PldaModel {
    pub fn scorer(&self) -> Result<PldaScorer> {
        let d = self.dim;
        let mut t = vec![0.0f64; d * d];
        for i in 0..d * d {
            t[i] = self.between[i] + self.within[i];
        }
        let chol_t = cholesky(&t, d)?;
        let t_inv = chol_inverse(&chol_t, d);
        let logdet_t = logdet_from_chol(&chol_t, d);

        // Schur complement S = T - B T^-1 B.
        let mut bt = vec![0.0f64; d * d]; // T^-1 B
        for j in 0..d {
            let mut col: Vec<f64> = (0..d).map(|i| self.between[i * d + j]).collect();
            chol_solve(&chol_t, d, &mut col);
            for i in 0..d {
                bt[i * d + j] = col[i];
            }
        }
        let mut s = t.clone();
        for i in 0..d {
            for j in 0..d {
                let mut acc = 0.0;
                for k in 0..d {
                    acc += self.between[i * d + k] * bt[k * d + j];
                }
                s[i * d + j] -= acc;
            }
        }
        let chol_s = cholesky(&s, d)?;
        let x = chol_inverse(&chol_s, d);
        let logdet_s = logdet_from_chol(&chol_s, d);

        // Y = -T^-1 B X.
        let mut y = vec![0.0f64; d * d];
        for i in 0..d {
            for j in 0..d {
                let mut acc = 0.0;
                for k in 0..d {
                    acc += bt[i * d + k] * x[k * d + j];
                }
                y[i * d + j] = -acc;
            }
        }
        // Symmetrize Y (it is symmetric analytically).
        for i in 0..d {
            for j in 0..i {
                let avg = 0.5 * (y[i * d + j] + y[j * d + i]);
                y[i * d + j] = avg;
                y[j * d + i] = avg;
            }
        }
        let mut x_plus_y = vec![0.0f64; d * d];
        let mut x_minus_y = vec![0.0f64; d * d];
        for i in 0..d * d {
            x_plus_y[i] = x[i] + y[i];
            x_minus_y[i] = x[i] - y[i];
        }
        Ok(PldaScorer {
            dim: d,
            mu: self.mu.clone(),
            t_inv,
            x_plus_y,
            x_minus_y,
            // log |Sigma_diff| - log |Sigma_same| = log det T - log det S.
            log_ratio: logdet_t - logdet_s,
        })
    }
}

impl PldaScorer {
    /// Log-likelihood ratio, exactly symmetric in `(e1, e2)`.
    pub fn score(&self, e1: &[f32], e2: &[f32]) -> f64 {
        let d = self.dim;
        debug_assert_eq!(e1.len(), d);
        debug_assert_eq!(e2.len(), d);
        let u: Vec<f64> = e1.iter().zip(&self.mu).map(|(&v, &m)| v as f64 - m).collect();
        let v: Vec<f64> = e2.iter().zip(&self.mu).map(|(&w, &m)| w as f64 - m).collect();
        let s: Vec<f64> = u.iter().zip(&v).map(|(&a, &b)| a + b).collect();
        let df: Vec<f64> = u.iter().zip(&v).map(|(&a, &b)| a - b).collect();
        // q_same = u'Xu + v'Xv + 2u'Yv = (s'(X+Y)s + d'(X-Y)d) / 2
        let q_same = 0.5 * (quad_form(&self.x_plus_y, d, &s) + quad_form(&self.x_minus_y, d, &df));
        let q_diff = quad_form(&self.t_inv, d, &u) + quad_form(&self.t_inv, d, &v);
        0.5 * (q_diff - q_same) + 0.5 * self.log_ratio
    }
}

/// Score one pair. Builds the scorer per call; batch callers should use
/// [`PldaModel::scorer`] once.
pub fn plda_score(model: &PldaModel, e1: &[f32], e2: &[f32]) -> Result<f64> {
    if e1.len() != model.dim || e2.len() != model.dim {
        return Err(Error::Shape(format!(
            "plda_score: inputs of dim {}/{} vs model dim {}",
            e1.len(),
            e2.len(),
            model.dim
        )));
    }
    Ok(model.scorer()?.score(e1, e2))
}

fn sym_outer_acc(acc: &mut [f64], d: usize, v: &[f64], scale: f64) {
    for i in 0..d {
        let vi = v[i] * scale;
        for j in 0..d {
            acc[i * d + j] += vi * v[j];
        }
    }
}

/// Observed-data log-likelihood of the grouped data under (mu, B, W).
fn log_likelihood(groups: &[Vec<Vec<f64>>], d: usize, mu: &[f64], b: &[f64], w: &[f64]) -> Result<f64> {
    let chol_w = cholesky(w, d)?;
    let w_inv = chol_inverse(&chol_w, d);
    let logdet_w = logdet_from_chol(&chol_w, d);
    let chol_b = cholesky(b, d)?;
    let b_inv = chol_inverse(&chol_b, d);
    let logdet_b = logdet_from_chol(&chol_b, d);
    let ln2pi = (2.0 * std::f64::consts::PI).ln();

    let mut ll = 0.0f64;
    let mut prec_cache: BTreeMap<usize, (Vec<f64>, f64)> = BTreeMap::new();
    for obs in groups {
        let n = obs.len();
        let (p_inv, logdet_p) = prec_cache
            .entry(n)
            .or_insert_with(|| {
                // P = B^-1 + n W^-1
                let mut p = vec![0.0f64; d * d];
                for i in 0..d * d {
                    p[i] = b_inv[i] + n as f64 * w_inv[i];
                }
                let chol_p = cholesky(&p, d).expect("posterior precision is PD");
                (chol_inverse(&chol_p, d), logdet_from_chol(&chol_p, d))
            })
            .clone();
        let mut s = vec![0.0f64; d]; // sum of deviations
        let mut quad = 0.0f64;
        for x in obs {
            let dxy: Vec<f64> = x.iter().zip(mu).map(|(&a, &m)| a - m).collect();
            quad += quad_form(&w_inv, d, &dxy);
            for i in 0..d {
                s[i] += dxy[i];
            }
        }
        let mut a = vec![0.0f64; d];
        mat_vec(&w_inv, d, &s, &mut a);
        let gain = quad_form(&p_inv, d, &a);
        ll += -0.5 * (n as f64) * (d as f64) * ln2pi - 0.5 * (n as f64) * logdet_w - 0.5 * quad
            - 0.5 * logdet_b
            - 0.5 * logdet_p
            + 0.5 * gain;
    }
    Ok(ll)
}

/// Fit by EM. Returns the model and the log-likelihood history
/// (`iters + 1` entries, including the initial model). The likelihood is
/// non-decreasing per iteration up to rounding.
pub fn plda_train(embs: &EmbeddingSet, iters: usize, reg: f64) -> Result<(PldaModel, Vec<f64>)> {
    let labels = embs
        .labels()
        .ok_or_else(|| Error::Data("plda_train requires labeled embeddings".into()))?;
    let d = embs.dim();
    let mut by_spk: BTreeMap<&str, Vec<Vec<f64>>> = BTreeMap::new();
    for i in 0..embs.len() {
        by_spk
            .entry(labels[i].as_str())
            .or_default()
            .push(embs.vector(i).iter().map(|&v| v as f64).collect());
    }
    if by_spk.len() < 2 {
        return Err(Error::Data(format!(
            "plda_train needs >= 2 speakers, got {}",
            by_spk.len()
        )));
    }
    if by_spk.values().all(|v| v.len() < 2) {
        return Err(Error::Data(
            "plda_train needs at least one speaker with >= 2 utterances".into(),
        ));
    }
    let groups: Vec<Vec<Vec<f64>>> = by_spk.into_values().collect();
    let n_total: usize = groups.iter().map(|g| g.len()).sum();
    let n_spk = groups.len();

    // Init: global mean; B = W = total covariance / 2 (+ jitter).
    let mut mu = vec![0.0f64; d];
    for g in &groups {
        for x in g {
            for i in 0..d {
                mu[i] += x[i];
            }
        }
    }
    mu.iter_mut().for_each(|v| *v /= n_total as f64);
    let mut total = vec![0.0f64; d * d];
    for g in &groups {
        for x in g {
            let dev: Vec<f64> = x.iter().zip(&mu).map(|(&a, &m)| a - m).collect();
            sym_outer_acc(&mut total, d, &dev, 1.0 / n_total as f64);
        }
    }
    let jitter = reg.max(1e-12);
    let mut b = vec![0.0f64; d * d];
    let mut w = vec![0.0f64; d * d];
    for i in 0..d {
        for j in 0..d {
            b[i * d + j] = 0.5 * total[i * d + j] + if i == j { jitter } else { 0.0 };
            w[i * d + j] = 0.5 * total[i * d + j] + if i == j { jitter } else { 0.0 };
        }
    }

    let mut ll_history = Vec::with_capacity(iters + 1);
    ll_history.push(log_likelihood(&groups, d, &mu, &b, &w)?);

    for _ in 0..iters {
        // E-step.
        let chol_w = cholesky(&w, d)?;
        let w_inv = chol_inverse(&chol_w, d);
        let chol_b = cholesky(&b, d)?;
        let b_inv = chol_inverse(&chol_b, d);
        let mut cov_cache: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
        // Posterior mean and covariance per speaker.
        let mut post_means: Vec<Vec<f64>> = Vec::with_capacity(n_spk);
        let mut post_covs: Vec<Vec<f64>> = Vec::with_capacity(n_spk);
        for g in &groups {
            let n = g.len();
            let c = cov_cache
                .entry(n)
                .or_insert_with(|| {
                    let mut p = vec![0.0f64; d * d];
                    for i in 0..d * d {
                        p[i] = b_inv[i] + n as f64 * w_inv[i];
                    }
                    let chol_p = cholesky(&p, d).expect("posterior precision is PD");
                    chol_inverse(&chol_p, d)
                })
                .clone();
            let mut s = vec![0.0f64; d];
            for x in g {
                for i in 0..d {
                    s[i] += x[i] - mu[i];
                }
            }
            let mut ws = vec![0.0f64; d];
            mat_vec(&w_inv, d, &s, &mut ws);
            let mut m = vec![0.0f64; d];
            mat_vec(&c, d, &ws, &mut m);
            post_means.push(m);
            post_covs.push(c);
        }

        // M-step: mu, then B and W with the new mu.
        let mut new_mu = vec![0.0f64; d];
        for (g, m) in groups.iter().zip(&post_means) {
            for x in g {
                for i in 0..d {
                    new_mu[i] += x[i] - m[i];
                }
            }
        }
        new_mu.iter_mut().for_each(|v| *v /= n_total as f64);

        let mut new_b = vec![0.0f64; d * d];
        for (m, c) in post_means.iter().zip(&post_covs) {
            sym_outer_acc(&mut new_b, d, m, 1.0 / n_spk as f64);
            for i in 0..d * d {
                new_b[i] += c[i] / n_spk as f64;
            }
        }
        let mut new_w = vec![0.0f64; d * d];
        for (g, (m, c)) in groups.iter().zip(post_means.iter().zip(&post_covs)) {
            for x in g {
                let dev: Vec<f64> = (0..d).map(|i| x[i] - new_mu[i] - m[i]).collect();
                sym_outer_acc(&mut new_w, d, &dev, 1.0 / n_total as f64);
            }
            for i in 0..d * d {
                new_w[i] += c[i] * g.len() as f64 / n_total as f64;
            }
        }
        // Keep W positive definite: add eps*I only if factorization fails.
        if cholesky(&new_w, d).is_err() {
            let mut tries = 0;
            loop {
                for i in 0..d {
                    new_w[i * d + i] += jitter;
                }
                if cholesky(&new_w, d).is_ok() {
                    break;
                }
                tries += 1;
                if tries > 8 {
                    return Err(Error::Numeric(
                        "plda_train: within-covariance singular after regularization".into(),
                    ));
                }
            }
        }
        mu = new_mu;
        b = new_b;
        w = new_w;
        ll_history.push(log_likelihood(&groups, d, &mu, &b, &w)?);
    }

    Ok((
        PldaModel {
            dim: d,
            mu,
            between: b,
            within: w,
        },
        ll_history,
    ))
}
