//! Data ingestion and desk-scale corpora: WAV + log-mel features, a
//! synthetic labeled generator for oracle testing, multi-crop segment
//! extraction, and feature-domain augmentation.

mod augment;
mod crop;
mod featio;
mod logmel;
mod synth;
mod wav;

pub use augment::{augment, AugmentPolicy, NoiseKind};
pub use crop::{crop_segment, multi_crop, CropConfig, CropSet};
pub use featio::{read_corpus, read_feat_file, write_corpus, write_feat_file};
pub use logmel::{logmel, mel_center_frequencies, LogMelConfig};
pub use synth::{gen_synthetic_corpus, SynthConfig};
pub use wav::read_wav_pcm16;

use crate::error::{Error, Result};
use crate::nn::Tensor;

/// One utterance: a `[T, F]` frame-feature matrix plus an optional hidden
/// speaker identity. Training code never reads `speaker_id`; it exists for
/// oracle evaluation on synthetic data.
#[derive(Debug, Clone, PartialEq)]
pub struct Utterance {
    pub id: String,
    pub speaker_id: Option<String>,
    pub frames: Tensor<f32>,
}

impl Utterance {
    pub fn num_frames(&self) -> usize {
        self.frames.rows()
    }

    pub fn feature_dim(&self) -> usize {
        self.frames.cols()
    }
}

/// An ordered, immutable collection of utterances with a fixed feature dim.
#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    pub utterances: Vec<Utterance>,
    pub feature_dim: usize,
    /// Free-form generation metadata (config echo, seed).
    pub meta: String,
}

impl Corpus {
    pub fn new(utterances: Vec<Utterance>, meta: String) -> Result<Self> {
        if utterances.is_empty() {
            return Err(Error::Data("corpus must be non-empty".into()));
        }
        let feature_dim = utterances[0].feature_dim();
        let mut seen = std::collections::HashSet::new();
        for u in &utterances {
            if u.feature_dim() != feature_dim {
                return Err(Error::Data(format!(
                    "utterance {} has feature dim {}, corpus uses {}",
                    u.id,
                    u.feature_dim(),
                    feature_dim
                )));
            }
            if u.num_frames() == 0 {
                return Err(Error::Data(format!("utterance {} is empty", u.id)));
            }
            if !u.frames.all_finite() {
                return Err(Error::Data(format!(
                    "utterance {} contains non-finite values",
                    u.id
                )));
            }
            if !seen.insert(u.id.clone()) {
                return Err(Error::Data(format!("duplicate utterance id {}", u.id)));
            }
        }
        Ok(Corpus {
            utterances,
            feature_dim,
            meta,
        })
    }

    pub fn len(&self) -> usize {
        self.utterances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.utterances.is_empty()
    }

    /// A copy with all hidden speaker identities removed. Label-free
    /// pipeline stages operate on this view so they cannot read the truth.
    pub fn without_speaker_ids(&self) -> Corpus {
        Corpus {
            utterances: self
                .utterances
                .iter()
                .map(|u| Utterance {
                    id: u.id.clone(),
                    speaker_id: None,
                    frames: u.frames.clone(),
                })
                .collect(),
            feature_dim: self.feature_dim,
            meta: self.meta.clone(),
        }
    }

    pub fn ids(&self) -> Vec<String> {
        self.utterances.iter().map(|u| u.id.clone()).collect()
    }
}
