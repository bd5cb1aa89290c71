//! Supervised retraining on pseudo labels and the iterative clustering loop.

use serde::{Deserialize, Serialize};

use super::{aam_loss, extract_embeddings, nmi, pseudo_labels, AamHead, Assignment, PseudoLabelConfig};
use crate::corpus::{augment, crop_segment, AugmentPolicy, Corpus};
use crate::error::{Error, Result};
use crate::nn::{sgd_step, Encoder, SgdConfig, SgdState, Tensor};
use crate::rng;
use crate::scoring::{eer, preprocess, score_trials, PreprocessStats, Scorer, Trial};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SupervisedConfig {
    /// Passes over the corpus; one utterance per step.
    pub epochs: usize,
    pub optimizer: SgdConfig,
    #[serde(default = "default_margin")]
    pub margin: f64,
    #[serde(default = "default_scale")]
    pub scale: f64,
    #[serde(default = "default_segment_len")]
    pub segment_len: usize,
    #[serde(default = "default_warmup_frac")]
    pub warmup_frac: f64,
    #[serde(default)]
    pub augment: AugmentPolicy,
}

fn default_margin() -> f64 {
    0.3
}
fn default_scale() -> f64 {
    30.0
}
fn default_segment_len() -> usize {
    200
}
fn default_warmup_frac() -> f64 {
    0.1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FineTuneConfig {
    pub epochs: usize,
    pub optimizer: SgdConfig,
    /// The large-margin phase default.
    #[serde(default = "default_ft_margin")]
    pub margin: f64,
    #[serde(default = "default_scale")]
    pub scale: f64,
    #[serde(default = "default_ft_segment_len")]
    pub segment_len: usize,
    #[serde(default)]
    pub augment: AugmentPolicy,
}

fn default_ft_margin() -> f64 {
    0.5
}
fn default_ft_segment_len() -> usize {
    300
}

fn labels_for_corpus(corpus: &Corpus, labels: &Assignment) -> Result<Vec<usize>> {
    let map = labels.as_map();
    corpus
        .utterances
        .iter()
        .map(|u| {
            map.get(u.id.as_str())
                .copied()
                .ok_or_else(|| Error::MissingId(u.id.clone()))
        })
        .collect()
}

fn lr_at(step: usize, total: usize, base: f64, warmup_frac: f64) -> f64 {
    let warmup = (warmup_frac * total as f64).ceil() as usize;
    if warmup == 0 || step + 1 >= warmup {
        base
    } else {
        base * (step + 1) as f64 / warmup as f64
    }
}

struct Phase<'a> {
    epochs: usize,
    optimizer: &'a SgdConfig,
    margin: f64,
    scale: f64,
    segment_len: usize,
    warmup_frac: f64,
    augment: &'a AugmentPolicy,
    post_pooling_only: bool,
}

/// Inner loop shared by full training and fine-tuning. One utterance per
/// step: crop, augment, forward, AAM loss, SGD.
fn run_phase(
    encoder: &mut Encoder<f32>,
    head: &mut AamHead<f32>,
    corpus: &Corpus,
    class_of: &[usize],
    phase: &Phase<'_>,
    seed: u64,
) -> Result<Vec<f64>> {
    let n = corpus.len();
    let steps = phase.epochs * n;
    let mut losses = Vec::with_capacity(steps);
    if steps == 0 {
        return Ok(losses);
    }
    head.margin = phase.margin;
    head.scale = phase.scale;

    let mut state = {
        let mut refs: Vec<&Tensor<f32>> = Vec::new();
        if phase.post_pooling_only {
            refs.push(&encoder.affine.weight);
            refs.push(&encoder.affine.bias);
        } else {
            for (_, p) in encoder.params() {
                refs.push(p);
            }
        }
        refs.push(&head.weight);
        SgdState::new(&refs)
    };

    let mut order: Vec<usize> = Vec::new();
    for step in 0..steps {
        if step % n == 0 {
            let epoch = (step / n) as u64;
            order = (0..n).collect();
            use rand::seq::SliceRandom;
            order.shuffle(&mut rng::derive(seed, &[rng::TAG_SHUFFLE, 1000 + epoch]));
        }
        let utt = &corpus.utterances[order[step % n]];
        let mut crop_rng = rng::derive(seed, &[rng::TAG_CROP, 1000, step as u64]);
        let segment = crop_segment(&utt.frames, phase.segment_len, &mut crop_rng);
        let mut aug_rng = rng::derive(seed, &[rng::TAG_AUGMENT, 1000, step as u64]);
        let segment = augment(&segment, phase.augment, &mut aug_rng)?;

        let (emb, cache) = encoder.forward(&segment)?;
        let label = class_of[order[step % n]];
        let out = aam_loss(&emb, head, label)?;
        if !out.value.is_finite() {
            return Err(Error::Numeric(format!(
                "NaN/Inf AAM loss at step {step} (utterance {})",
                utt.id
            )));
        }
        losses.push(out.value as f64);

        let mut grad_enc = encoder.zeros_like();
        encoder.backward(&cache, &out.grad_embedding, &mut grad_enc);
        let lr = lr_at(step, steps, phase.optimizer.lr, phase.warmup_frac);
        if phase.post_pooling_only {
            let mut params: Vec<&mut Tensor<f32>> = vec![
                &mut encoder.affine.weight,
                &mut encoder.affine.bias,
                &mut head.weight,
            ];
            let grads: Vec<&Tensor<f32>> = vec![
                &grad_enc.affine.weight,
                &grad_enc.affine.bias,
                &out.grad_weight,
            ];
            sgd_step(&mut params, &grads, &mut state, phase.optimizer, lr)?;
        } else {
            let mut params: Vec<&mut Tensor<f32>> = Vec::new();
            for (_, p) in encoder.params_mut() {
                params.push(p);
            }
            params.push(&mut head.weight);
            let mut grads: Vec<&Tensor<f32>> = Vec::new();
            for (_, g) in grad_enc.params() {
                grads.push(g);
            }
            grads.push(&out.grad_weight);
            sgd_step(&mut params, &grads, &mut state, phase.optimizer, lr)?;
        }
    }
    Ok(losses)
}

/// Train an encoder plus a fresh AAM head on (pseudo) labels. Returns the
/// trained pair and the per-step loss history.
pub fn train_supervised(
    init: &Encoder<f32>,
    corpus: &Corpus,
    labels: &Assignment,
    cfg: &SupervisedConfig,
    seed: u64,
) -> Result<(Encoder<f32>, AamHead<f32>, Vec<f64>)> {
    let class_of = labels_for_corpus(corpus, labels)?;
    let n_classes = labels.k.max(2);
    let mut encoder = init.clone();
    let mut head = AamHead::init(
        n_classes,
        encoder.embed_dim(),
        cfg.margin,
        cfg.scale,
        &mut rng::derive(seed, &[rng::TAG_MODEL_INIT, 2]),
    )?;
    let phase = Phase {
        epochs: cfg.epochs,
        optimizer: &cfg.optimizer,
        margin: cfg.margin,
        scale: cfg.scale,
        segment_len: cfg.segment_len,
        warmup_frac: cfg.warmup_frac,
        augment: &cfg.augment,
        post_pooling_only: false,
    };
    let losses = run_phase(&mut encoder, &mut head, corpus, &class_of, &phase, seed)?;
    Ok((encoder, head, losses))
}

/// Large-margin fine-tuning: only the post-pooling parameters (final affine
/// and the AAM head) move, with longer segments and the raised margin.
pub fn fine_tune(
    encoder: &Encoder<f32>,
    head: &AamHead<f32>,
    corpus: &Corpus,
    labels: &Assignment,
    cfg: &FineTuneConfig,
    seed: u64,
) -> Result<(Encoder<f32>, AamHead<f32>, Vec<f64>)> {
    let class_of = labels_for_corpus(corpus, labels)?;
    let mut encoder = encoder.clone();
    let mut head = head.clone();
    let phase = Phase {
        epochs: cfg.epochs,
        optimizer: &cfg.optimizer,
        margin: cfg.margin,
        scale: cfg.scale,
        segment_len: cfg.segment_len,
        warmup_frac: 0.0,
        augment: &cfg.augment,
        post_pooling_only: true,
    };
    let losses = run_phase(&mut encoder, &mut head, corpus, &class_of, &phase, seed)?;
    Ok((encoder, head, losses))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub eer_pct: f64,
    pub n_pseudo_clusters: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub nmi_vs_truth: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IterateConfig {
    pub pseudo: PseudoLabelConfig,
    pub supervised: SupervisedConfig,
    pub n_iterations: usize,
    /// Continue from the previous iteration's encoder (the default) or
    /// retrain from a fresh random init each round.
    #[serde(default = "default_warm_start")]
    pub warm_start: bool,
    /// Stop early when |EER_i - EER_{i-1}| falls below this absolute delta.
    #[serde(default = "default_early_stop")]
    pub early_stop_eer_delta: Option<f64>,
}

fn default_warm_start() -> bool {
    true
}

fn default_early_stop() -> Option<f64> {
    Some(0.1)
}

/// Cosine EER of an encoder on held-out trials, preprocessing with
/// statistics fitted on the training corpus embeddings.
pub fn evaluate_encoder(
    encoder: &Encoder<f32>,
    train_corpus: &Corpus,
    eval_corpus: &Corpus,
    trials: &[Trial],
) -> Result<f64> {
    let train_embs = extract_embeddings(encoder, train_corpus)?;
    let stats = PreprocessStats::fit(&train_embs)?;
    let eval_embs = extract_embeddings(encoder, eval_corpus)?;
    let eval_embs = preprocess(&eval_embs, &stats)?;
    let scores = score_trials(&eval_embs, trials, &Scorer::Cosine)?;
    eer(&scores)
}

/// The iterative clustering loop: pseudo-label with the current model,
/// retrain, evaluate, repeat. Returns the final encoder and one record per
/// completed iteration.
pub fn iterate(
    corpus: &Corpus,
    init_encoder: &Encoder<f32>,
    eval_corpus: &Corpus,
    trials: &[Trial],
    cfg: &IterateConfig,
    seed: u64,
) -> Result<(Encoder<f32>, Vec<IterationRecord>)> {
    let truth: Option<std::collections::BTreeMap<String, String>> = {
        let labeled: Vec<(String, String)> = corpus
            .utterances
            .iter()
            .filter_map(|u| u.speaker_id.clone().map(|s| (u.id.clone(), s)))
            .collect();
        if labeled.len() == corpus.len() {
            Some(labeled.into_iter().collect())
        } else {
            None
        }
    };

    let mut current = init_encoder.clone();
    let mut history = Vec::new();
    let mut prev_eer: Option<f64> = None;
    for iteration in 1..=cfg.n_iterations {
        let labels = pseudo_labels(corpus, &current, &cfg.pseudo, seed)?;
        let nmi_vs_truth = match &truth {
            Some(t) => Some(nmi(&labels, t)?),
            None => None,
        };
        let init = if cfg.warm_start {
            current.clone()
        } else {
            Encoder::init(
                &current.config,
                &mut rng::derive(seed, &[rng::TAG_MODEL_INIT, 100 + iteration as u64]),
            )?
        };
        let (trained, _head, _losses) = train_supervised(
            &init,
            corpus,
            &labels,
            &cfg.supervised,
            rng::mix(seed, &[iteration as u64]),
        )?;
        let eer_pct = evaluate_encoder(&trained, corpus, eval_corpus, trials)?;
        history.push(IterationRecord {
            iteration,
            eer_pct,
            n_pseudo_clusters: labels.k,
            nmi_vs_truth,
        });
        current = trained;
        if let (Some(delta), Some(prev)) = (cfg.early_stop_eer_delta, prev_eer) {
            if (eer_pct - prev).abs() < delta {
                break;
            }
        }
        prev_eer = Some(eer_pct);
    }
    Ok((current, history))
}
