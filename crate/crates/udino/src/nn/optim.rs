//! SGD with momentum and weight decay.
//!
//! Update rule per parameter tensor:
//! `buf <- momentum * buf + grad + weight_decay * param`
//! `param <- param - lr * buf`

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{Real, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SgdConfig {
    pub lr: f64,
    #[serde(default = "default_momentum")]
    pub momentum: f64,
    #[serde(default)]
    pub weight_decay: f64,
}

fn default_momentum() -> f64 {
    0.9
}

impl SgdConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config(format!(
                "optimizer.momentum must be in [0, 1), got {}",
                self.momentum
            )));
        }
        if self.weight_decay < 0.0 {
            return Err(Error::Config("optimizer.weight_decay must be >= 0".into()));
        }
        if self.lr < 0.0 || !self.lr.is_finite() {
            return Err(Error::Config(format!("optimizer.lr invalid: {}", self.lr)));
        }
        Ok(())
    }
}

/// Per-parameter momentum buffers, aligned with the parameter list order.
#[derive(Debug, Clone)]
pub struct SgdState<T: Real> {
    bufs: Vec<Tensor<T>>,
}

impl<T: Real> SgdState<T> {
    pub fn new(params: &[&Tensor<T>]) -> Self {
        SgdState {
            bufs: params.iter().map(|p| Tensor::zeros(p.shape())).collect(),
        }
    }

    pub fn bufs(&self) -> &[Tensor<T>] {
        &self.bufs
    }
}

/// One optimizer step over an aligned (params, grads) list. `lr` overrides
/// the config rate so callers can apply warmup schedules.
pub fn sgd_step<T: Real>(
    params: &mut [&mut Tensor<T>],
    grads: &[&Tensor<T>],
    state: &mut SgdState<T>,
    cfg: &SgdConfig,
    lr: f64,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.bufs.len() {
        return Err(Error::Shape(format!(
            "sgd_step: {} params, {} grads, {} buffers",
            params.len(),
            grads.len(),
            state.bufs.len()
        )));
    }
    let momentum = T::from_f64(cfg.momentum);
    let wd = T::from_f64(cfg.weight_decay);
    let lr = T::from_f64(lr);
    for ((p, g), buf) in params.iter_mut().zip(grads).zip(state.bufs.iter_mut()) {
        if p.shape() != g.shape() {
            return Err(Error::Shape(format!(
                "sgd_step: param {:?} vs grad {:?}",
                p.shape(),
                g.shape()
            )));
        }
        let pd = p.data_mut();
        let gd = g.data();
        let bd = buf.data_mut();
        for i in 0..pd.len() {
            bd[i] = momentum * bd[i] + gd[i] + wd * pd[i];
            pd[i] -= lr * bd[i];
        }
    }
    Ok(())
}
