//! Multi-crop segment extraction: contiguous frame windows at uniformly
//! random starts, with short utterances tiled (wrapped) to reach the crop
//! length.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::Utterance;
use crate::error::{Error, Result};
use crate::nn::{Real, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CropConfig {
    #[serde(default = "default_n_short")]
    pub n_short: usize,
    #[serde(default = "default_n_long")]
    pub n_long: usize,
    #[serde(default = "default_len_short")]
    pub len_short_frames: usize,
    #[serde(default = "default_len_long")]
    pub len_long_frames: usize,
}

fn default_n_short() -> usize {
    4
}
fn default_n_long() -> usize {
    2
}
// 2 s / 4 s at a 10 ms hop.
fn default_len_short() -> usize {
    200
}
fn default_len_long() -> usize {
    400
}

impl Default for CropConfig {
    fn default() -> Self {
        CropConfig {
            n_short: default_n_short(),
            n_long: default_n_long(),
            len_short_frames: default_len_short(),
            len_long_frames: default_len_long(),
        }
    }
}

impl CropConfig {
    pub fn validate(&self) -> Result<()> {
        if self.len_short_frames >= self.len_long_frames {
            return Err(Error::Config(format!(
                "crop: len_short ({}) must be < len_long ({})",
                self.len_short_frames, self.len_long_frames
            )));
        }
        if self.len_short_frames == 0 {
            return Err(Error::Config("crop: len_short must be >= 1".into()));
        }
        if self.n_long < 2 {
            return Err(Error::Config("crop: n_long must be >= 2".into()));
        }
        Ok(())
    }
}

/// The augmented segment set for one utterance: exactly `n_long` long crops
/// and `n_short` short ones, all sharing the source feature dim.
#[derive(Debug, Clone, PartialEq)]
pub struct CropSet<T: Real = f32> {
    pub longs: Vec<Tensor<T>>,
    pub shorts: Vec<Tensor<T>>,
}

impl<T: Real> CropSet<T> {
    pub fn num_crops(&self) -> usize {
        self.longs.len() + self.shorts.len()
    }

    /// All crops, longs first. This ordering is what the distillation loss
    /// assumes.
    pub fn all(&self) -> impl Iterator<Item = &Tensor<T>> {
        self.longs.iter().chain(self.shorts.iter())
    }

    pub fn cast<U: Real>(&self) -> CropSet<U> {
        CropSet {
            longs: self.longs.iter().map(|t| t.cast()).collect(),
            shorts: self.shorts.iter().map(|t| t.cast()).collect(),
        }
    }
}

/// Extract one crop of `len` frames. For `T >= len` the start is uniform on
/// `[0, T - len]` (inclusive); shorter utterances are tiled cyclically from
/// frame 0, with no randomness.
pub fn crop_segment(frames: &Tensor<f32>, len: usize, rng: &mut impl Rng) -> Tensor<f32> {
    crop_one(frames, len, rng)
}

fn crop_one(frames: &Tensor<f32>, len: usize, rng: &mut impl Rng) -> Tensor<f32> {
    let (t_len, d) = (frames.rows(), frames.cols());
    let mut data = Vec::with_capacity(len * d);
    if t_len >= len {
        let start = rng.gen_range(0..=(t_len - len));
        data.extend_from_slice(&frames.data()[start * d..(start + len) * d]);
    } else {
        for t in 0..len {
            data.extend_from_slice(frames.row(t % t_len));
        }
    }
    Tensor::new(vec![len, d], data).expect("crop shape")
}

/// Draw a full crop set: long crops first, then short crops.
pub fn multi_crop(utt: &Utterance, cfg: &CropConfig, rng: &mut impl Rng) -> Result<CropSet> {
    cfg.validate()?;
    if utt.num_frames() == 0 {
        return Err(Error::Data(format!("utterance {} has no frames", utt.id)));
    }
    let longs = (0..cfg.n_long)
        .map(|_| crop_one(&utt.frames, cfg.len_long_frames, rng))
        .collect();
    let shorts = (0..cfg.n_short)
        .map(|_| crop_one(&utt.frames, cfg.len_short_frames, rng))
        .collect();
    Ok(CropSet { longs, shorts })
}
