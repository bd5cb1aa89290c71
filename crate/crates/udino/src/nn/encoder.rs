//! Configurable frame encoder: conv stack over time (same padding),
//! activation after each conv, statistics pooling, and a final affine layer
//! producing the utterance embedding.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::layers::{
    linear_backward, linear_forward, stats_pool, stats_pool_backward, Activation,
};
use crate::nn::{Real, Tensor};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConvSpec {
    pub out_channels: usize,
    pub kernel: usize,
    #[serde(default = "default_dilation")]
    pub dilation: usize,
}

fn default_dilation() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EncoderConfig {
    pub feature_dim: usize,
    pub conv: Vec<ConvSpec>,
    #[serde(default = "default_activation")]
    pub activation: Activation,
    #[serde(default = "default_embed_dim")]
    pub embed_dim: usize,
}

fn default_activation() -> Activation {
    Activation::Relu
}

fn default_embed_dim() -> usize {
    256
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.feature_dim == 0 {
            return Err(Error::Config("encoder.feature_dim must be >= 1".into()));
        }
        if self.embed_dim == 0 {
            return Err(Error::Config("encoder.embed_dim must be >= 1".into()));
        }
        for (i, c) in self.conv.iter().enumerate() {
            if c.kernel % 2 == 0 || c.kernel == 0 {
                return Err(Error::Config(format!(
                    "encoder.conv[{i}].kernel must be odd, got {}",
                    c.kernel
                )));
            }
            if c.out_channels == 0 {
                return Err(Error::Config(format!(
                    "encoder.conv[{i}].out_channels must be >= 1"
                )));
            }
            if c.dilation == 0 {
                return Err(Error::Config(format!(
                    "encoder.conv[{i}].dilation must be >= 1"
                )));
            }
        }
        Ok(())
    }

    /// Channel count feeding the pooling layer.
    pub fn last_channels(&self) -> usize {
        self.conv
            .last()
            .map(|c| c.out_channels)
            .unwrap_or(self.feature_dim)
    }
}

/// 1-D convolution over time. Weights are stored `[out, k, in]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv1d<T: Real> {
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
    pub dilation: usize,
}

impl<T: Real> Conv1d<T> {
    fn out_channels(&self) -> usize {
        self.weight.shape()[0]
    }

    fn kernel(&self) -> usize {
        self.weight.shape()[1]
    }

    fn in_channels(&self) -> usize {
        self.weight.shape()[2]
    }

    /// Same-padded forward: output `[T, out]`.
    fn forward(&self, x: &Tensor<T>) -> Tensor<T> {
        let (t_len, cin) = (x.rows(), x.cols());
        debug_assert_eq!(cin, self.in_channels());
        let (cout, k, dil) = (self.out_channels(), self.kernel(), self.dilation as isize);
        let half = (k / 2) as isize;
        let mut out = Tensor::zeros(&[t_len, cout]);
        for t in 0..t_len {
            let orow = out.row_mut(t);
            for o in 0..cout {
                let mut acc = self.bias.data()[o];
                for kk in 0..k {
                    let src = t as isize + (kk as isize - half) * dil;
                    if src < 0 || src >= t_len as isize {
                        continue;
                    }
                    let xrow = x.row(src as usize);
                    let wrow = &self.weight.data()[(o * k + kk) * cin..(o * k + kk + 1) * cin];
                    for (w, &xv) in wrow.iter().zip(xrow) {
                        acc += *w * xv;
                    }
                }
                orow[o] = acc;
            }
        }
        out
    }

    /// Returns grad_input and accumulates grad_weight/grad_bias into `grads`.
    fn backward(&self, x: &Tensor<T>, grad_out: &Tensor<T>, grads: &mut Conv1d<T>) -> Tensor<T> {
        let (t_len, cin) = (x.rows(), x.cols());
        let (cout, k, dil) = (self.out_channels(), self.kernel(), self.dilation as isize);
        let half = (k / 2) as isize;
        let mut gx = Tensor::zeros(&[t_len, cin]);
        for t in 0..t_len {
            let grow = grad_out.row(t);
            for o in 0..cout {
                let g = grow[o];
                grads.bias.data_mut()[o] += g;
                for kk in 0..k {
                    let src = t as isize + (kk as isize - half) * dil;
                    if src < 0 || src >= t_len as isize {
                        continue;
                    }
                    let src = src as usize;
                    let base = (o * k + kk) * cin;
                    let wrow = &self.weight.data()[base..base + cin];
                    let xrow = x.row(src);
                    let gwrow = &mut grads.weight.data_mut()[base..base + cin];
                    let gxrow = gx.row_mut(src);
                    for j in 0..cin {
                        gxrow[j] += g * wrow[j];
                        gwrow[j] += g * xrow[j];
                    }
                }
            }
        }
        gx
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Linear<T: Real> {
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Encoder<T: Real = f32> {
    pub config: EncoderConfig,
    pub convs: Vec<Conv1d<T>>,
    pub affine: Linear<T>,
}

/// Activations cached by [`Encoder::forward`] for the backward pass.
pub struct EncoderCache<T: Real> {
    /// Input plus each conv layer's post-activation output.
    layer_inputs: Vec<Tensor<T>>,
    /// Each conv layer's pre-activation output.
    pre_acts: Vec<Tensor<T>>,
    pooled: Tensor<T>,
}

impl<T: Real> Encoder<T> {
    /// Random init: conv/affine weights `N(0, 1/sqrt(fan_in))`, zero biases.
    pub fn init(config: &EncoderConfig, rng: &mut impl Rng) -> Result<Self> {
        config.validate()?;
        let mut convs = Vec::with_capacity(config.conv.len());
        let mut cin = config.feature_dim;
        for spec in &config.conv {
            let fan_in = (cin * spec.kernel) as f64;
            convs.push(Conv1d {
                weight: Tensor::randn(
                    &[spec.out_channels, spec.kernel, cin],
                    1.0 / fan_in.sqrt(),
                    rng,
                ),
                bias: Tensor::zeros(&[spec.out_channels]),
                dilation: spec.dilation,
            });
            cin = spec.out_channels;
        }
        let pooled_dim = 2 * config.last_channels();
        let affine = Linear {
            weight: Tensor::randn(
                &[config.embed_dim, pooled_dim],
                1.0 / (pooled_dim as f64).sqrt(),
                rng,
            ),
            bias: Tensor::zeros(&[config.embed_dim]),
        };
        Ok(Encoder {
            config: config.clone(),
            convs,
            affine,
        })
    }

    /// All-zero parameters with the same shapes; used as gradient storage.
    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        for c in &mut z.convs {
            c.weight.fill(T::ZERO);
            c.bias.fill(T::ZERO);
        }
        z.affine.weight.fill(T::ZERO);
        z.affine.bias.fill(T::ZERO);
        z
    }

    pub fn embed_dim(&self) -> usize {
        self.config.embed_dim
    }

    /// Forward with cached activations for the backward pass.
    pub fn forward(&self, frames: &Tensor<T>) -> Result<(Vec<T>, EncoderCache<T>)> {
        if frames.shape().len() != 2 || frames.rows() == 0 {
            return Err(Error::Shape(format!(
                "encoder input must be a non-empty [T, F] matrix, got {:?}",
                frames.shape()
            )));
        }
        if frames.cols() != self.config.feature_dim {
            return Err(Error::Shape(format!(
                "encoder expects feature dim {}, got {}",
                self.config.feature_dim,
                frames.cols()
            )));
        }
        let act = self.config.activation;
        let mut layer_inputs = vec![frames.clone()];
        let mut pre_acts = Vec::with_capacity(self.convs.len());
        for conv in &self.convs {
            let pre = conv.forward(layer_inputs.last().expect("input"));
            let mut post = pre.clone();
            post.data_mut().iter_mut().for_each(|v| *v = act.apply(*v));
            pre_acts.push(pre);
            layer_inputs.push(post);
        }
        let pooled = stats_pool(layer_inputs.last().expect("conv output"));
        let emb = linear_forward(&self.affine.weight, &self.affine.bias, pooled.data());
        if !emb.iter().all(|v| v.is_finite()) {
            return Err(Error::Numeric("encoder produced non-finite embedding".into()));
        }
        Ok((
            emb,
            EncoderCache {
                layer_inputs,
                pre_acts,
                pooled,
            },
        ))
    }

    /// Forward without caching; for extraction and the teacher branch.
    pub fn forward_nograd(&self, frames: &Tensor<T>) -> Result<Vec<T>> {
        self.forward(frames).map(|(e, _)| e)
    }

    /// Accumulate parameter gradients into `grads` and return nothing; the
    /// input gradient is discarded (inputs are data, not parameters).
    pub fn backward(&self, cache: &EncoderCache<T>, grad_emb: &[T], grads: &mut Encoder<T>) {
        let (gp, gw, gb) = linear_backward(&self.affine.weight, cache.pooled.data(), grad_emb);
        grads.affine.weight.add_scaled(&gw, T::ONE);
        for (a, b) in grads.affine.bias.data_mut().iter_mut().zip(&gb) {
            *a += *b;
        }
        let conv_out = cache.layer_inputs.last().expect("conv output");
        let mut grad = stats_pool_backward(conv_out, &cache.pooled, &gp);
        let act = self.config.activation;
        for (i, conv) in self.convs.iter().enumerate().rev() {
            for (g, &p) in grad
                .data_mut()
                .iter_mut()
                .zip(cache.pre_acts[i].data().iter())
            {
                *g *= act.grad(p);
            }
            grad = conv.backward(&cache.layer_inputs[i], &grad, &mut grads.convs[i]);
        }
    }

    /// Named parameter tensors in a stable order.
    pub fn params(&self) -> Vec<(String, &Tensor<T>)> {
        let mut out = Vec::new();
        for (i, c) in self.convs.iter().enumerate() {
            out.push((format!("conv{i}.weight"), &c.weight));
            out.push((format!("conv{i}.bias"), &c.bias));
        }
        out.push(("affine.weight".to_string(), &self.affine.weight));
        out.push(("affine.bias".to_string(), &self.affine.bias));
        out
    }

    pub fn params_mut(&mut self) -> Vec<(String, &mut Tensor<T>)> {
        let mut out: Vec<(String, &mut Tensor<T>)> = Vec::new();
        for (i, c) in self.convs.iter_mut().enumerate() {
            out.push((format!("conv{i}.weight"), &mut c.weight));
            out.push((format!("conv{i}.bias"), &mut c.bias));
        }
        out.push(("affine.weight".to_string(), &mut self.affine.weight));
        out.push(("affine.bias".to_string(), &mut self.affine.bias));
        out
    }

    /// The post-pooling parameters (final affine only), for fine-tuning
    /// phases that freeze the conv stack.
    pub fn post_pooling_params_mut(&mut self) -> Vec<(String, &mut Tensor<T>)> {
        vec![
            ("affine.weight".to_string(), &mut self.affine.weight),
            ("affine.bias".to_string(), &mut self.affine.bias),
        ]
    }

    pub fn cast<U: Real>(&self) -> Encoder<U> {
        Encoder {
            config: self.config.clone(),
            convs: self
                .convs
                .iter()
                .map(|c| Conv1d {
                    weight: c.weight.cast(),
                    bias: c.bias.cast(),
                    dilation: c.dilation,
                })
                .collect(),
            affine: Linear {
                weight: self.affine.weight.cast(),
                bias: self.affine.bias.cast(),
            },
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::layers::STATS_POOL_EPS;
    use crate::rng;

    fn small_config() -> EncoderConfig {
        EncoderConfig {
            feature_dim: 3,
            conv: vec![ConvSpec {
                out_channels: 4,
                kernel: 3,
                dilation: 1,
            }],
            activation: Activation::Relu,
            embed_dim: 5,
        }
    }

    #[test]
    fn rejects_even_kernel() {
        let mut cfg = small_config();
        cfg.conv[0].kernel = 2;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn zero_params_give_zero_embedding() {
        let mut r = rng::derive(3, &[rng::TAG_MODEL_INIT]);
        let enc: Encoder<f32> = Encoder::init(&small_config(), &mut r).unwrap();
        let zeros = enc.zeros_like();
        let x = Tensor::new(vec![6, 3], (0..18).map(|i| i as f32).collect()).unwrap();
        let emb = zeros.forward_nograd(&x).unwrap();
        assert!(emb.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn embedding_dim_independent_of_length() {
        let mut r = rng::derive(4, &[rng::TAG_MODEL_INIT]);
        let enc: Encoder<f32> = Encoder::init(&small_config(), &mut r).unwrap();
        for t in [1usize, 7, 40] {
            let x = Tensor::new(vec![t, 3], vec![0.25; t * 3]).unwrap();
            assert_eq!(enc.forward_nograd(&x).unwrap().len(), 5);
        }
    }

    #[test]
    fn identity_conv_recovers_pooled_stats() {
        // A 1x1 conv with selector weights and a pass-through affine makes
        // the embedding equal the pooled [mean || std] of the input.
        let cfg = EncoderConfig {
            feature_dim: 2,
            conv: vec![ConvSpec {
                out_channels: 2,
                kernel: 1,
                dilation: 1,
            }],
            activation: Activation::Relu,
            embed_dim: 4,
        };
        let mut r = rng::derive(5, &[rng::TAG_MODEL_INIT]);
        let mut enc: Encoder<f64> = Encoder::init(&cfg, &mut r).unwrap();
        // Selector kernel = identity.
        enc.convs[0].weight = Tensor::new(vec![2, 1, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        enc.convs[0].bias = Tensor::zeros(&[2]);
        // Affine = identity on the 4 pooled values.
        let mut w = Tensor::zeros(&[4, 4]);
        for i in 0..4 {
            w.row_mut(i)[i] = 1.0;
        }
        enc.affine.weight = w;
        enc.affine.bias = Tensor::zeros(&[4]);

        // Non-negative input so ReLU is the identity.
        let x = Tensor::new(vec![2, 2], vec![1.0, 2.0, 3.0, 6.0]).unwrap();
        let emb = enc.forward_nograd(&x).unwrap();
        assert!((emb[0] - 2.0).abs() < 1e-12); // mean dim0
        assert!((emb[1] - 4.0).abs() < 1e-12); // mean dim1
        assert!((emb[2] - (1.0 + STATS_POOL_EPS).sqrt()).abs() < 1e-12);
        assert!((emb[3] - (4.0 + STATS_POOL_EPS).sqrt()).abs() < 1e-12);
    }

    #[test]
    fn pooling_invariant_to_exact_tiling() {
        // With a pointwise conv there are no padding edge effects, so the
        // pooled stats of k exact copies equal those of one copy.
        let cfg = EncoderConfig {
            feature_dim: 3,
            conv: vec![ConvSpec {
                out_channels: 4,
                kernel: 1,
                dilation: 1,
            }],
            activation: Activation::Relu,
            embed_dim: 5,
        };
        let mut r = rng::derive(6, &[rng::TAG_MODEL_INIT]);
        let enc: Encoder<f32> = Encoder::init(&cfg, &mut r).unwrap();
        let mut data = Vec::new();
        let mut rr = rng::derive(7, &[rng::TAG_SYNTH]);
        for _ in 0..15 {
            data.push(rng::normal_f32(&mut rr));
        }
        let x = Tensor::new(vec![5, 3], data.clone()).unwrap();
        let tiled = Tensor::new(vec![15, 3], [data.clone(), data.clone(), data].concat()).unwrap();
        let e1 = enc.forward_nograd(&x).unwrap();
        let e3 = enc.forward_nograd(&tiled).unwrap();
        for (a, b) in e1.iter().zip(&e3) {
            assert!((a - b).abs() < 1e-5, "{a} vs {b}");
        }
    }
}
