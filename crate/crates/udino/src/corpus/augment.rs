//! Feature-domain augmentation.
//!
//! Desk-scale stand-ins for background-noise corpora: additive white/pink
//! noise or a babble surrogate (a sum of five random bank segments) at a
//! sampled SNR, a log-domain gain offset, and a contiguous time mask.
//! Transforms apply in that order, each with its own random draw; disabled
//! transforms consume no randomness.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::Tensor;
use crate::rng::normal_f32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NoiseKind {
    White,
    Pink,
    BabbleSurrogate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AugmentPolicy {
    #[serde(default)]
    pub noise_enabled: bool,
    #[serde(default = "default_snr_range")]
    pub snr_db_range: [f64; 2],
    #[serde(default = "default_noise_kind")]
    pub noise_kind: NoiseKind,
    #[serde(default)]
    pub gain_enabled: bool,
    #[serde(default = "default_gain_range")]
    pub gain_db_range: [f64; 2],
    #[serde(default)]
    pub time_mask_enabled: bool,
    #[serde(default = "default_mask_frames")]
    pub time_mask_max_frames: usize,
    /// Noise bank for the babble surrogate and user-supplied noise features.
    /// Not part of the serialized config; load it at runtime.
    #[serde(skip)]
    pub noise_bank: Vec<Tensor<f32>>,
}

fn default_snr_range() -> [f64; 2] {
    [0.0, 15.0]
}
fn default_gain_range() -> [f64; 2] {
    [-6.0, 6.0]
}
fn default_noise_kind() -> NoiseKind {
    NoiseKind::White
}
fn default_mask_frames() -> usize {
    20
}

impl Default for AugmentPolicy {
    fn default() -> Self {
        AugmentPolicy {
            noise_enabled: false,
            snr_db_range: default_snr_range(),
            noise_kind: default_noise_kind(),
            gain_enabled: false,
            gain_db_range: default_gain_range(),
            time_mask_enabled: false,
            time_mask_max_frames: default_mask_frames(),
            noise_bank: Vec::new(),
        }
    }
}

impl AugmentPolicy {
    /// Everything off: augment becomes the identity.
    pub fn disabled() -> Self {
        AugmentPolicy::default()
    }

    pub fn validate(&self, len_short_frames: usize) -> Result<()> {
        if self.snr_db_range[0] > self.snr_db_range[1] {
            return Err(Error::Config("augment.snr_db_range must be ordered".into()));
        }
        if self.gain_db_range[0] > self.gain_db_range[1] {
            return Err(Error::Config("augment.gain_db_range must be ordered".into()));
        }
        if self.time_mask_enabled && self.time_mask_max_frames >= len_short_frames {
            return Err(Error::Config(format!(
                "augment.time_mask_max_frames ({}) must be < short crop length ({})",
                self.time_mask_max_frames, len_short_frames
            )));
        }
        if self.noise_enabled
            && self.noise_kind == NoiseKind::BabbleSurrogate
            && self.noise_bank.is_empty()
        {
            return Err(Error::Config(
                "babble-surrogate noise requires a non-empty noise bank".into(),
            ));
        }
        Ok(())
    }
}

fn mean_power(x: &[f32]) -> f64 {
    x.iter().map(|&v| (v as f64) * (v as f64)).sum::<f64>() / x.len() as f64
}

fn gen_noise(
    policy: &AugmentPolicy,
    t_len: usize,
    d: usize,
    rng: &mut impl Rng,
) -> Result<Vec<f32>> {
    match policy.noise_kind {
        NoiseKind::White => Ok((0..t_len * d).map(|_| normal_f32(rng)).collect()),
        NoiseKind::Pink => {
            // One-pole lowpass over time per dimension, renormalized to unit
            // variance; a desk-scale 1/f-ish spectrum.
            let alpha = 0.9f32;
            let gain = (1.0 - alpha * alpha).sqrt();
            let mut out = vec![0.0f32; t_len * d];
            let mut state = vec![0.0f32; d];
            for t in 0..t_len {
                for j in 0..d {
                    state[j] = alpha * state[j] + gain * normal_f32(rng);
                    out[t * d + j] = state[j];
                }
            }
            Ok(out)
        }
        NoiseKind::BabbleSurrogate => {
            if policy.noise_bank.is_empty() {
                return Err(Error::Config(
                    "babble-surrogate noise requires a non-empty noise bank".into(),
                ));
            }
            let mut out = vec![0.0f32; t_len * d];
            for _ in 0..5 {
                let seg = &policy.noise_bank[rng.gen_range(0..policy.noise_bank.len())];
                if seg.cols() != d {
                    return Err(Error::Data(format!(
                        "noise bank segment dim {} != segment dim {}",
                        seg.cols(),
                        d
                    )));
                }
                let avail = seg.rows();
                let start = if avail > t_len {
                    rng.gen_range(0..=(avail - t_len))
                } else {
                    0
                };
                for t in 0..t_len {
                    let row = seg.row((start + t) % avail);
                    for j in 0..d {
                        out[t * d + j] += row[j];
                    }
                }
            }
            Ok(out)
        }
    }
}

/// Apply the policy to one segment. Output shape equals input shape.
pub fn augment(
    segment: &Tensor<f32>,
    policy: &AugmentPolicy,
    rng: &mut impl Rng,
) -> Result<Tensor<f32>> {
    let (t_len, d) = (segment.rows(), segment.cols());
    if t_len == 0 || d == 0 {
        return Err(Error::Data("augment: empty segment".into()));
    }
    let mut out = segment.clone();

    if policy.noise_enabled {
        let snr_db = if policy.snr_db_range[0] == policy.snr_db_range[1] {
            policy.snr_db_range[0]
        } else {
            rng.gen_range(policy.snr_db_range[0]..policy.snr_db_range[1])
        };
        let mut noise = gen_noise(policy, t_len, d, rng)?;
        let sig_power = mean_power(out.data());
        let noise_power = mean_power(&noise);
        if noise_power > 0.0 && sig_power > 0.0 {
            // Scale so injected power is sig_power / 10^(snr/10).
            let alpha = (sig_power / (noise_power * 10f64.powf(snr_db / 10.0))).sqrt() as f32;
            noise.iter_mut().for_each(|v| *v *= alpha);
            for (o, n) in out.data_mut().iter_mut().zip(&noise) {
                *o += *n;
            }
        }
    }

    if policy.gain_enabled {
        let gain_db = if policy.gain_db_range[0] == policy.gain_db_range[1] {
            policy.gain_db_range[0]
        } else {
            rng.gen_range(policy.gain_db_range[0]..policy.gain_db_range[1])
        };
        // A gain of G dB multiplies power by 10^(G/10); log-power features
        // shift by G * ln(10) / 10.
        let shift = (gain_db * std::f64::consts::LN_10 / 10.0) as f32;
        out.data_mut().iter_mut().for_each(|v| *v += shift);
    }

    if policy.time_mask_enabled && policy.time_mask_max_frames > 0 {
        let max_len = policy.time_mask_max_frames.min(t_len.saturating_sub(1)).max(1);
        let len = rng.gen_range(1..=max_len);
        let start = rng.gen_range(0..=(t_len - len));
        for t in start..start + len {
            out.row_mut(t).iter_mut().for_each(|v| *v = 0.0);
        }
    }

    Ok(out)
}
