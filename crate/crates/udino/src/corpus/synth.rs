//! Synthetic labeled corpus generator.
//!
//! Per speaker `s`: latent `v_s ~ N(0, speaker_scale^2 I)` and a drift
//! amplitude `a_s = |N(0, (drift_factor * frame_noise_scale)^2 I)|`. Per
//! utterance `u`: channel offset `c_u ~ N(0, channel_scale^2 I)` and a
//! per-dimension drift phase. Frame `t` is then
//!
//! `v_s + c_u + a_s .* sin(2 pi t / T + phase) + N(0, frame_noise_scale^2 I)`.
//!
//! The sinusoid completes exactly one period over the utterance, so its sum
//! over frames is zero and utterance means stay at `v_s + c_u` (plus noise
//! mean). The speaker-dependent amplitude puts speaker information into the
//! pooled standard deviation as well, not just the mean; scaling it with the
//! frame noise keeps that second cue proportionally hard: the slow drift only
//! separates from the fast noise after temporal smoothing.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{Corpus, Utterance};
use crate::error::{Error, Result};
use crate::nn::Tensor;
use crate::rng::{self, normal_f32};

const DRIFT_FACTOR: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthConfig {
    pub n_speakers: usize,
    pub utts_per_speaker: usize,
    pub frames_per_utt: usize,
    pub feature_dim: usize,
    pub speaker_scale: f64,
    pub channel_scale: f64,
    pub frame_noise_scale: f64,
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_speakers == 0
            || self.utts_per_speaker == 0
            || self.frames_per_utt == 0
            || self.feature_dim == 0
        {
            return Err(Error::Config("synth config: all counts must be >= 1".into()));
        }
        if self.speaker_scale < 0.0 || self.channel_scale < 0.0 || self.frame_noise_scale < 0.0 {
            return Err(Error::Config("synth config: scales must be >= 0".into()));
        }
        Ok(())
    }
}

pub fn gen_synthetic_corpus(cfg: &SynthConfig, seed: u64) -> Result<Corpus> {
    cfg.validate()?;
    let mut r = rng::derive(seed, &[rng::TAG_SYNTH]);
    let d = cfg.feature_dim;
    let t_len = cfg.frames_per_utt;
    let mut utterances = Vec::with_capacity(cfg.n_speakers * cfg.utts_per_speaker);

    for s in 0..cfg.n_speakers {
        let speaker_id = format!("spk{s:03}");
        let latent: Vec<f32> = (0..d)
            .map(|_| normal_f32(&mut r) * cfg.speaker_scale as f32)
            .collect();
        let drift_amp: Vec<f32> = (0..d)
            .map(|_| (normal_f32(&mut r) * (DRIFT_FACTOR * cfg.frame_noise_scale) as f32).abs())
            .collect();
        for u in 0..cfg.utts_per_speaker {
            let channel: Vec<f32> = (0..d)
                .map(|_| normal_f32(&mut r) * cfg.channel_scale as f32)
                .collect();
            let phase: Vec<f32> = (0..d)
                .map(|_| r.gen::<f32>() * std::f32::consts::TAU)
                .collect();
            let mut data = Vec::with_capacity(t_len * d);
            for t in 0..t_len {
                let angle = std::f32::consts::TAU * t as f32 / t_len as f32;
                for j in 0..d {
                    let drift = drift_amp[j] * (angle + phase[j]).sin();
                    let noise = normal_f32(&mut r) * cfg.frame_noise_scale as f32;
                    data.push(latent[j] + channel[j] + drift + noise);
                }
            }
            utterances.push(Utterance {
                id: format!("s{s:03}_u{u:03}"),
                speaker_id: Some(speaker_id.clone()),
                frames: Tensor::new(vec![t_len, d], data).expect("synth frame shape"),
            });
        }
    }

    let meta = format!(
        "{{\"generator\":\"synth\",\"seed\":{seed},\"config\":{}}}",
        serde_json::to_string(cfg).expect("synth config json")
    );
    Corpus::new(utterances, meta)
}
