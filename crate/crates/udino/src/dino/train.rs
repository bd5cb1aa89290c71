//! The training loop: shuffled utterance batches, multi-crop + augmentation,
//! linear learning-rate warmup, and per-step metrics.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{student_param_refs, train_step, DinoModel};
use crate::corpus::{augment, multi_crop, Corpus, CropSet};
use crate::error::Result;
use crate::exec;
use crate::nn::SgdState;
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepMetrics {
    pub step: usize,
    pub loss: f64,
    pub teacher_entropy: f64,
    pub center_l2: f64,
    pub grad_norm: f64,
}

/// Linear warmup to the configured rate over the first `warmup_frac` of
/// steps, then constant.
fn lr_at(step: usize, total_steps: usize, base_lr: f64, warmup_frac: f64) -> f64 {
    let warmup = (warmup_frac * total_steps as f64).ceil() as usize;
    if warmup == 0 || step + 1 >= warmup {
        base_lr
    } else {
        base_lr * (step + 1) as f64 / warmup as f64
    }
}

/// Prepare one batch of augmented crop sets. Item RNGs derive from
/// `(seed, step, slot)`, so preparation parallelizes deterministically.
pub(crate) fn prepare_batch(
    model_cfg: &crate::dino::DinoConfig,
    corpus: &Corpus,
    order: &[usize],
    step: usize,
    seed: u64,
) -> Result<Vec<CropSet<f32>>> {
    let b = model_cfg.batch_size;
    let slots: Vec<usize> = (0..b)
        .map(|i| order[(step * b + i) % order.len()])
        .collect();
    exec::map_ordered(&slots, |slot, &utt_idx| {
        let utt = &corpus.utterances[utt_idx];
        let mut crop_rng = rng::derive(seed, &[rng::TAG_CROP, step as u64, slot as u64]);
        let crops = multi_crop(utt, &model_cfg.crop, &mut crop_rng)?;
        let mut aug_rng = rng::derive(seed, &[rng::TAG_AUGMENT, step as u64, slot as u64]);
        let longs = crops
            .longs
            .iter()
            .map(|c| augment(c, &model_cfg.augment, &mut aug_rng))
            .collect::<Result<Vec<_>>>()?;
        let shorts = crops
            .shorts
            .iter()
            .map(|c| augment(c, &model_cfg.augment, &mut aug_rng))
            .collect::<Result<Vec<_>>>()?;
        Ok(CropSet { longs, shorts })
    })
    .into_iter()
    .collect()
}

/// Run `config.steps` training steps over shuffled utterance batches.
/// `on_step` fires after every step with the updated model; use it for
/// metric logging and interval checkpoints.
pub fn train(
    model: &mut DinoModel<f32>,
    corpus: &Corpus,
    seed: u64,
    mut on_step: impl FnMut(&DinoModel<f32>, &StepMetrics) -> Result<()>,
) -> Result<Vec<StepMetrics>> {
    let cfg = model.config.clone();
    cfg.validate()?;
    let mut opt_state = SgdState::new(&student_param_refs(model));
    let mut log = Vec::with_capacity(cfg.steps);

    let n = corpus.len();
    let steps_per_epoch = (n + cfg.batch_size - 1) / cfg.batch_size.max(1);
    let mut order: Vec<usize> = Vec::new();
    for step in 0..cfg.steps {
        if step % steps_per_epoch.max(1) == 0 {
            let epoch = step / steps_per_epoch.max(1);
            order = (0..n).collect();
            order.shuffle(&mut rng::derive(seed, &[rng::TAG_SHUFFLE, epoch as u64]));
        }
        let batch = prepare_batch(&cfg, corpus, &order, step, seed)?;
        let lr = lr_at(step, cfg.steps, cfg.optimizer.lr, cfg.warmup_frac);
        let mut metrics = train_step(model, &batch, &mut opt_state, lr)?;
        metrics.step = step;
        on_step(model, &metrics)?;
        log.push(metrics);
    }
    Ok(log)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{gen_synthetic_corpus, SynthConfig};
    use crate::dino::DinoModel;
    use crate::nn::{ConvSpec, EncoderConfig};

    fn tiny_setup() -> (EncoderConfig, crate::dino::DinoConfig, Corpus) {
        let enc_cfg = EncoderConfig {
            feature_dim: 4,
            conv: vec![ConvSpec {
                out_channels: 5,
                kernel: 3,
                dilation: 1,
            }],
            activation: crate::nn::Activation::Relu,
            embed_dim: 6,
        };
        let mut dino_cfg = crate::dino::tests::tiny_dino_config();
        dino_cfg.crop.len_short_frames = 8;
        dino_cfg.crop.len_long_frames = 16;
        dino_cfg.steps = 4;
        dino_cfg.batch_size = 3;
        let corpus = gen_synthetic_corpus(
            &SynthConfig {
                n_speakers: 3,
                utts_per_speaker: 3,
                frames_per_utt: 24,
                feature_dim: 4,
                speaker_scale: 1.0,
                channel_scale: 0.1,
                frame_noise_scale: 0.3,
            },
            21,
        )
        .unwrap();
        (enc_cfg, dino_cfg, corpus)
    }

    #[test]
    fn zero_steps_returns_initial_model_and_empty_log() {
        let (enc_cfg, mut cfg, corpus) = tiny_setup();
        cfg.steps = 0;
        let mut model = DinoModel::init(&enc_cfg, &cfg, 1).unwrap();
        let before = model.clone();
        let log = train(&mut model, &corpus, 1, |_, _| Ok(())).unwrap();
        assert!(log.is_empty());
        assert_eq!(model, before);
    }

    #[test]
    fn same_seed_trains_identically() {
        let (enc_cfg, cfg, corpus) = tiny_setup();
        let mut m1 = DinoModel::init(&enc_cfg, &cfg, 2).unwrap();
        let mut m2 = DinoModel::init(&enc_cfg, &cfg, 2).unwrap();
        let l1 = train(&mut m1, &corpus, 5, |_, _| Ok(())).unwrap();
        let l2 = train(&mut m2, &corpus, 5, |_, _| Ok(())).unwrap();
        assert_eq!(m1, m2);
        assert_eq!(l1, l2);
        // A different seed diverges.
        let mut m3 = DinoModel::init(&enc_cfg, &cfg, 2).unwrap();
        train(&mut m3, &corpus, 6, |_, _| Ok(())).unwrap();
        assert_ne!(m1, m3);
    }

    #[test]
    fn log_length_matches_steps_and_callback_fires() {
        let (enc_cfg, cfg, corpus) = tiny_setup();
        let mut model = DinoModel::init(&enc_cfg, &cfg, 3).unwrap();
        let mut calls = 0usize;
        let log = train(&mut model, &corpus, 7, |_, m| {
            assert!(m.loss.is_finite());
            calls += 1;
            Ok(())
        })
        .unwrap();
        assert_eq!(log.len(), 4);
        assert_eq!(calls, 4);
        assert_eq!(log[3].step, 3);
    }

    #[test]
    fn warmup_schedule_shape() {
        assert!((lr_at(0, 100, 1.0, 0.1) - 0.1).abs() < 1e-12);
        assert!((lr_at(4, 100, 1.0, 0.1) - 0.5).abs() < 1e-12);
        assert!((lr_at(9, 100, 1.0, 0.1) - 1.0).abs() < 1e-12);
        assert!((lr_at(50, 100, 1.0, 0.1) - 1.0).abs() < 1e-12);
        assert!((lr_at(0, 10, 1.0, 0.0) - 1.0).abs() < 1e-12);
    }
}
