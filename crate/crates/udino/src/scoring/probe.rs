//! Multinomial logistic-regression probe and the support-weighted class-F1
//! it is evaluated with.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::EmbeddingSet;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProbeConfig {
    #[serde(default = "default_l2")]
    pub l2_reg: f64,
    #[serde(default = "default_steps")]
    pub steps: usize,
    #[serde(default = "default_lr")]
    pub lr: f64,
}

fn default_l2() -> f64 {
    1e-3
}
fn default_steps() -> usize {
    500
}
fn default_lr() -> f64 {
    0.5
}

impl Default for ProbeConfig {
    fn default() -> Self {
        ProbeConfig {
            l2_reg: default_l2(),
            steps: default_steps(),
            lr: default_lr(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProbeModel {
    /// Class names in the order of the weight rows.
    pub classes: Vec<String>,
    /// `[C, D]` row-major.
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
    pub dim: usize,
}

/// Regularized NLL and gradients; full-batch, f64.
pub(crate) fn nll_and_grad(
    xs: &[Vec<f64>],
    ys: &[usize],
    n_classes: usize,
    w: &[f64],
    b: &[f64],
    l2: f64,
) -> (f64, Vec<f64>, Vec<f64>) {
    let n = xs.len();
    let d = xs[0].len();
    let mut loss = 0.0f64;
    let mut gw = vec![0.0f64; n_classes * d];
    let mut gb = vec![0.0f64; n_classes];
    for (x, &y) in xs.iter().zip(ys) {
        let mut logits = vec![0.0f64; n_classes];
        for c in 0..n_classes {
            let row = &w[c * d..(c + 1) * d];
            logits[c] = b[c] + row.iter().zip(x).map(|(&wv, &xv)| wv * xv).sum::<f64>();
        }
        let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = logits.iter().map(|z| (z - max).exp()).sum::<f64>().ln() + max;
        loss += (lse - logits[y]) / n as f64;
        for c in 0..n_classes {
            let p = (logits[c] - lse).exp();
            let delta = (p - if c == y { 1.0 } else { 0.0 }) / n as f64;
            gb[c] += delta;
            let grow = &mut gw[c * d..(c + 1) * d];
            for (g, &xv) in grow.iter_mut().zip(x) {
                *g += delta * xv;
            }
        }
    }
    // L2 on the weights only; the bias absorbs class priors.
    let mut reg = 0.0f64;
    for (g, &wv) in gw.iter_mut().zip(w) {
        *g += l2 * wv;
        reg += 0.5 * l2 * wv * wv;
    }
    (loss + reg, gw, gb)
}

/// Train by full-batch gradient descent from zero init; deterministic.
pub fn probe_train(embs: &EmbeddingSet, cfg: &ProbeConfig) -> Result<ProbeModel> {
    let labels = embs
        .labels()
        .ok_or_else(|| Error::Data("probe_train requires labeled embeddings".into()))?;
    let mut classes: Vec<String> = labels.to_vec();
    classes.sort();
    classes.dedup();
    if classes.len() < 2 {
        return Err(Error::Data(format!(
            "probe_train needs >= 2 classes, got {}",
            classes.len()
        )));
    }
    let class_idx: BTreeMap<&str, usize> = classes
        .iter()
        .enumerate()
        .map(|(i, c)| (c.as_str(), i))
        .collect();
    let d = embs.dim();
    let xs: Vec<Vec<f64>> = (0..embs.len())
        .map(|i| embs.vector(i).iter().map(|&v| v as f64).collect())
        .collect();
    let ys: Vec<usize> = labels.iter().map(|l| class_idx[l.as_str()]).collect();
    let c = classes.len();
    let mut w = vec![0.0f64; c * d];
    let mut b = vec![0.0f64; c];
    // Full-batch descent; the quadratic penalty enters as a proximal update
    // so arbitrarily large l2_reg stays stable (and realizes the
    // weights -> 0 limit exactly). The bias is unregularized.
    let shrink = 1.0 / (1.0 + cfg.lr * cfg.l2_reg);
    for _ in 0..cfg.steps {
        let (_, gw, gb) = nll_and_grad(&xs, &ys, c, &w, &b, 0.0);
        for (wv, g) in w.iter_mut().zip(&gw) {
            *wv = (*wv - cfg.lr * g) * shrink;
        }
        for (bv, g) in b.iter_mut().zip(&gb) {
            *bv -= cfg.lr * g;
        }
    }
    if !w.iter().chain(b.iter()).all(|v| v.is_finite()) {
        return Err(Error::Numeric("probe_train diverged to non-finite weights".into()));
    }
    Ok(ProbeModel {
        classes,
        weights: w,
        bias: b,
        dim: d,
    })
}

impl ProbeModel {
    pub fn logits(&self, x: &[f32]) -> Vec<f64> {
        let d = self.dim;
        (0..self.classes.len())
            .map(|c| {
                let row = &self.weights[c * d..(c + 1) * d];
                self.bias[c]
                    + row
                        .iter()
                        .zip(x)
                        .map(|(&wv, &xv)| wv * xv as f64)
                        .sum::<f64>()
            })
            .collect()
    }

    pub fn predict_proba(&self, x: &[f32]) -> Vec<f64> {
        let logits = self.logits(x);
        let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
        let sum: f64 = exps.iter().sum();
        exps.into_iter().map(|e| e / sum).collect()
    }

    pub fn predict(&self, embs: &EmbeddingSet) -> Result<Vec<String>> {
        if embs.dim() != self.dim {
            return Err(Error::Shape(format!(
                "probe dim {} vs embeddings dim {}",
                self.dim,
                embs.dim()
            )));
        }
        Ok((0..embs.len())
            .map(|i| {
                let logits = self.logits(embs.vector(i));
                let best = logits
                    .iter()
                    .enumerate()
                    .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                    .map(|(i, _)| i)
                    .unwrap_or(0);
                self.classes[best].clone()
            })
            .collect())
    }
}

/// Support-weighted average of class-wise F1 scores, in percent:
/// `sum_c (support_c / N) * F1_c` with `F1_c = 0` when precision + recall
/// is zero.
pub fn weighted_f1(preds: &[String], labels: &[String]) -> Result<f64> {
    if preds.is_empty() || preds.len() != labels.len() {
        return Err(Error::Data(format!(
            "weighted_f1: {} predictions vs {} labels",
            preds.len(),
            labels.len()
        )));
    }
    let mut classes: Vec<&String> = labels.iter().collect();
    classes.sort();
    classes.dedup();
    let n = labels.len() as f64;
    let mut total = 0.0f64;
    for class in classes {
        let tp = preds
            .iter()
            .zip(labels)
            .filter(|(p, l)| *p == class && *l == class)
            .count() as f64;
        let fp = preds
            .iter()
            .zip(labels)
            .filter(|(p, l)| *p == class && *l != class)
            .count() as f64;
        let fn_ = preds
            .iter()
            .zip(labels)
            .filter(|(p, l)| *p != class && *l == class)
            .count() as f64;
        let support = tp + fn_;
        let precision = if tp + fp > 0.0 { tp / (tp + fp) } else { 0.0 };
        let recall = if support > 0.0 { tp / support } else { 0.0 };
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        total += (support / n) * f1;
    }
    Ok(total * 100.0)
}
