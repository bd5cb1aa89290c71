//! Projection head: three linear layers with activations, an L2
//! normalization, and a weight-normalized linear layer producing K cosine
//! logits.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{
    l2_normalize, l2_normalize_backward, linear_backward, linear_forward, weight_norm_linear,
    weight_norm_linear_backward, Activation, Linear, Real, Tensor,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HeadConfig {
    #[serde(default = "default_hidden")]
    pub hidden: usize,
    #[serde(default = "default_bottleneck")]
    pub bottleneck: usize,
    #[serde(default = "default_k")]
    pub k: usize,
}

fn default_hidden() -> usize {
    256
}
fn default_bottleneck() -> usize {
    64
}
fn default_k() -> usize {
    1024
}

impl Default for HeadConfig {
    fn default() -> Self {
        HeadConfig {
            hidden: default_hidden(),
            bottleneck: default_bottleneck(),
            k: default_k(),
        }
    }
}

impl HeadConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k < 2 {
            return Err(Error::Config(format!("head.k must be >= 2, got {}", self.k)));
        }
        if self.hidden < self.bottleneck {
            return Err(Error::Config(format!(
                "head.hidden ({}) must be >= head.bottleneck ({})",
                self.hidden, self.bottleneck
            )));
        }
        if self.bottleneck == 0 {
            return Err(Error::Config("head.bottleneck must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionHead<T: Real = f32> {
    pub lin1: Linear<T>,
    pub lin2: Linear<T>,
    pub lin3: Linear<T>,
    /// Weight-normalized output layer, rows are class directions.
    pub wn: Tensor<T>,
    pub activation: Activation,
}

pub struct HeadCache<T: Real> {
    input: Vec<T>,
    pre1: Vec<T>,
    h1: Vec<T>,
    pre2: Vec<T>,
    h2: Vec<T>,
    unit: Vec<T>,
    norm: T,
}

impl<T: Real> ProjectionHead<T> {
    pub fn init(embed_dim: usize, cfg: &HeadConfig, rng: &mut impl Rng) -> Self {
        let he = |fan_in: usize| 1.0 / (fan_in as f64).sqrt();
        ProjectionHead {
            lin1: Linear {
                weight: Tensor::randn(&[cfg.hidden, embed_dim], he(embed_dim), rng),
                bias: Tensor::zeros(&[cfg.hidden]),
            },
            lin2: Linear {
                weight: Tensor::randn(&[cfg.hidden, cfg.hidden], he(cfg.hidden), rng),
                bias: Tensor::zeros(&[cfg.hidden]),
            },
            lin3: Linear {
                weight: Tensor::randn(&[cfg.bottleneck, cfg.hidden], he(cfg.hidden), rng),
                bias: Tensor::zeros(&[cfg.bottleneck]),
            },
            wn: Tensor::randn(&[cfg.k, cfg.bottleneck], 1.0, rng),
            activation: Activation::Gelu,
        }
    }

    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        z.lin1.weight.fill(T::ZERO);
        z.lin1.bias.fill(T::ZERO);
        z.lin2.weight.fill(T::ZERO);
        z.lin2.bias.fill(T::ZERO);
        z.lin3.weight.fill(T::ZERO);
        z.lin3.bias.fill(T::ZERO);
        z.wn.fill(T::ZERO);
        z
    }

    pub fn forward(&self, emb: &[T]) -> Result<(Vec<T>, HeadCache<T>)> {
        let act = self.activation;
        let pre1 = linear_forward(&self.lin1.weight, &self.lin1.bias, emb);
        let h1: Vec<T> = pre1.iter().map(|&v| act.apply(v)).collect();
        let pre2 = linear_forward(&self.lin2.weight, &self.lin2.bias, &h1);
        let h2: Vec<T> = pre2.iter().map(|&v| act.apply(v)).collect();
        let z = linear_forward(&self.lin3.weight, &self.lin3.bias, &h2);
        let (unit, norm) = l2_normalize(&z)?;
        let logits = weight_norm_linear(&self.wn, &unit)?;
        Ok((
            logits,
            HeadCache {
                input: emb.to_vec(),
                pre1,
                h1,
                pre2,
                h2,
                unit,
                norm,
            },
        ))
    }

    /// Accumulate parameter gradients into `grads`, return the gradient
    /// w.r.t. the input embedding.
    pub fn backward(&self, cache: &HeadCache<T>, grad_logits: &[T], grads: &mut Self) -> Vec<T> {
        let act = self.activation;
        let (gunit, gwn) = weight_norm_linear_backward(&self.wn, &cache.unit, grad_logits);
        grads.wn.add_scaled(&gwn, T::ONE);
        let gz = l2_normalize_backward(&cache.unit, cache.norm, &gunit);
        let (gh2, gw3, gb3) = linear_backward(&self.lin3.weight, &cache.h2, &gz);
        grads.lin3.weight.add_scaled(&gw3, T::ONE);
        for (a, b) in grads.lin3.bias.data_mut().iter_mut().zip(&gb3) {
            *a += *b;
        }
        let gpre2: Vec<T> = gh2
            .iter()
            .zip(&cache.pre2)
            .map(|(&g, &p)| g * act.grad(p))
            .collect();
        let (gh1, gw2, gb2) = linear_backward(&self.lin2.weight, &cache.h1, &gpre2);
        grads.lin2.weight.add_scaled(&gw2, T::ONE);
        for (a, b) in grads.lin2.bias.data_mut().iter_mut().zip(&gb2) {
            *a += *b;
        }
        let gpre1: Vec<T> = gh1
            .iter()
            .zip(&cache.pre1)
            .map(|(&g, &p)| g * act.grad(p))
            .collect();
        let (gin, gw1, gb1) = linear_backward(&self.lin1.weight, &cache.input, &gpre1);
        grads.lin1.weight.add_scaled(&gw1, T::ONE);
        for (a, b) in grads.lin1.bias.data_mut().iter_mut().zip(&gb1) {
            *a += *b;
        }
        gin
    }

    pub fn params(&self) -> Vec<(String, &Tensor<T>)> {
        vec![
            ("lin1.weight".into(), &self.lin1.weight),
            ("lin1.bias".into(), &self.lin1.bias),
            ("lin2.weight".into(), &self.lin2.weight),
            ("lin2.bias".into(), &self.lin2.bias),
            ("lin3.weight".into(), &self.lin3.weight),
            ("lin3.bias".into(), &self.lin3.bias),
            ("wn".into(), &self.wn),
        ]
    }

    pub fn params_mut(&mut self) -> Vec<(String, &mut Tensor<T>)> {
        vec![
            ("lin1.weight".into(), &mut self.lin1.weight),
            ("lin1.bias".into(), &mut self.lin1.bias),
            ("lin2.weight".into(), &mut self.lin2.weight),
            ("lin2.bias".into(), &mut self.lin2.bias),
            ("lin3.weight".into(), &mut self.lin3.weight),
            ("lin3.bias".into(), &mut self.lin3.bias),
            ("wn".into(), &mut self.wn),
        ]
    }

    pub fn cast<U: Real>(&self) -> ProjectionHead<U> {
        ProjectionHead {
            lin1: Linear {
                weight: self.lin1.weight.cast(),
                bias: self.lin1.bias.cast(),
            },
            lin2: Linear {
                weight: self.lin2.weight.cast(),
                bias: self.lin2.bias.cast(),
            },
            lin3: Linear {
                weight: self.lin3.weight.cast(),
                bias: self.lin3.bias.cast(),
            },
            wn: self.wn.cast(),
            activation: self.activation,
        }
    }
}
