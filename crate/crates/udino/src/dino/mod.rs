//! Self-distillation trainer.
//!
//! A student and a teacher share one architecture (encoder + projection
//! head). All crops of an utterance pass through the student; only the long
//! crops pass through the teacher, whose logits are centered and sharpened
//! into target distributions. The student minimizes the multi-crop
//! cross-entropy; the teacher is updated only by an exponential moving
//! average of the student (stop-gradient), and the center only by a running
//! mean of teacher logits.

mod ckpt;
mod head;
mod train;

pub use ckpt::{
    load_any_encoder, load_dino, load_encoder, read_checkpoint, save_dino, save_encoder,
    write_checkpoint, CheckpointMeta,
};
pub use head::{HeadCache, HeadConfig, ProjectionHead};
pub use train::{train, StepMetrics};

use serde::{Deserialize, Serialize};

use crate::corpus::{AugmentPolicy, CropConfig, CropSet};
use crate::error::{Error, Result};
use crate::exec;
use crate::nn::{
    log_softmax, sgd_step, softmax, Encoder, EncoderConfig, Real, SgdConfig, SgdState, Tensor,
};
use crate::rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DinoConfig {
    #[serde(default = "default_tau_student")]
    pub tau_student: f64,
    #[serde(default = "default_tau_teacher")]
    pub tau_teacher: f64,
    #[serde(default = "default_ema_lambda")]
    pub ema_lambda: f64,
    #[serde(default = "default_center_momentum")]
    pub center_momentum: f64,
    #[serde(default)]
    pub crop: CropConfig,
    #[serde(default)]
    pub head: HeadConfig,
    pub steps: usize,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    pub optimizer: SgdConfig,
    #[serde(default = "default_warmup_frac")]
    pub warmup_frac: f64,
    #[serde(default)]
    pub augment: AugmentPolicy,
}

fn default_tau_student() -> f64 {
    0.1
}
fn default_tau_teacher() -> f64 {
    0.04
}
fn default_ema_lambda() -> f64 {
    0.996
}
fn default_center_momentum() -> f64 {
    0.9
}
fn default_batch_size() -> usize {
    8
}
fn default_warmup_frac() -> f64 {
    0.1
}

impl DinoConfig {
    pub fn validate(&self) -> Result<()> {
        // Strict inequality gives sharpening; equality is allowed so the
        // centering/sharpening ablation can switch both mechanisms off.
        if !(self.tau_teacher > 0.0 && self.tau_teacher <= self.tau_student) {
            return Err(Error::Config(format!(
                "temperatures must satisfy 0 < tau_teacher <= tau_student, got {} vs {}",
                self.tau_teacher, self.tau_student
            )));
        }
        if !(0.0..=1.0).contains(&self.ema_lambda) {
            return Err(Error::Config(format!(
                "ema_lambda must be in [0, 1], got {}",
                self.ema_lambda
            )));
        }
        if !(0.0..=1.0).contains(&self.center_momentum) {
            return Err(Error::Config(format!(
                "center_momentum must be in [0, 1], got {}",
                self.center_momentum
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be >= 1".into()));
        }
        if !(0.0..=1.0).contains(&self.warmup_frac) {
            return Err(Error::Config("warmup_frac must be in [0, 1]".into()));
        }
        self.crop.validate()?;
        self.head.validate()?;
        self.optimizer.validate()?;
        self.augment.validate(self.crop.len_short_frames)?;
        Ok(())
    }
}

/// Which branch an embedding comes from. The teacher is the default: its
/// averaged parameters track ahead of the student during training.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Branch {
    Teacher,
    Student,
}

impl Default for Branch {
    fn default() -> Self {
        Branch::Teacher
    }
}

/// Student/teacher encoder+head pairs plus the teacher-logit center.
#[derive(Debug, Clone, PartialEq)]
pub struct DinoModel<T: Real = f32> {
    pub student_enc: Encoder<T>,
    pub student_head: ProjectionHead<T>,
    pub teacher_enc: Encoder<T>,
    pub teacher_head: ProjectionHead<T>,
    pub center: Tensor<T>,
    pub config: DinoConfig,
}

impl DinoModel<f32> {
    /// Initialize with teacher = student and a zero center.
    pub fn init(enc_cfg: &EncoderConfig, cfg: &DinoConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut r = rng::derive(seed, &[rng::TAG_MODEL_INIT]);
        let student_enc = Encoder::init(enc_cfg, &mut r)?;
        let student_head = ProjectionHead::init(enc_cfg.embed_dim, &cfg.head, &mut r);
        let teacher_enc = student_enc.clone();
        let teacher_head = student_head.clone();
        Ok(DinoModel {
            student_enc,
            student_head,
            teacher_enc,
            teacher_head,
            center: Tensor::zeros(&[cfg.head.k]),
            config: cfg.clone(),
        })
    }
}

impl<T: Real> DinoModel<T> {
    pub fn encoder(&self, branch: Branch) -> &Encoder<T> {
        match branch {
            Branch::Teacher => &self.teacher_enc,
            Branch::Student => &self.student_enc,
        }
    }

    /// Full-utterance embedding through the chosen branch's encoder only.
    pub fn extract_embedding(&self, frames: &Tensor<T>, branch: Branch) -> Result<Vec<T>> {
        self.encoder(branch).forward_nograd(frames)
    }

    pub fn cast<U: Real>(&self) -> DinoModel<U> {
        DinoModel {
            student_enc: self.student_enc.cast(),
            student_head: self.student_head.cast(),
            teacher_enc: self.teacher_enc.cast(),
            teacher_head: self.teacher_head.cast(),
            center: self.center.cast(),
            config: self.config.clone(),
        }
    }
}

/// Centered, sharpened teacher distribution:
/// `softmax((logits - center) / tau_teacher)`.
pub fn teacher_distribution<T: Real>(logits: &[T], center: &[T], tau_teacher: f64) -> Vec<T> {
    debug_assert_eq!(logits.len(), center.len());
    let tau = T::from_f64(tau_teacher);
    let shifted: Vec<T> = logits
        .iter()
        .zip(center)
        .map(|(&z, &c)| (z - c) / tau)
        .collect();
    softmax(&shifted)
}

/// Student log-distribution: `log_softmax(logits / tau_student)`. No
/// centering on the student branch.
pub fn student_log_distribution<T: Real>(logits: &[T], tau_student: f64) -> Vec<T> {
    let tau = T::from_f64(tau_student);
    let scaled: Vec<T> = logits.iter().map(|&z| z / tau).collect();
    log_softmax(&scaled)
}

/// Multi-crop distillation loss value plus its term count (the
/// instrumentation hook for structural checks).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DinoLossOutput<T: Real> {
    pub value: T,
    pub n_terms: usize,
}

/// Sum of cross-entropies `H(p_teacher(s), p_student(s'))` over teacher long
/// crops `s` and student crops `s' != s`, divided by the term count so the
/// scale is crop-count invariant.
///
/// `student_logp[0..teacher_p.len()]` must be the long crops, in teacher
/// order; the remaining entries are the short crops.
pub fn dino_loss<T: Real>(teacher_p: &[Vec<T>], student_logp: &[Vec<T>]) -> Result<DinoLossOutput<T>> {
    let n_long = teacher_p.len();
    if n_long < 2 {
        return Err(Error::Data(format!(
            "dino_loss needs at least 2 long crops, got {n_long}"
        )));
    }
    if student_logp.len() < n_long {
        return Err(Error::Shape(format!(
            "student must see every teacher crop: {} student crops < {} long crops",
            student_logp.len(),
            n_long
        )));
    }
    let mut sum = T::ZERO;
    let mut n_terms = 0usize;
    for (s, p2) in teacher_p.iter().enumerate() {
        for (sp, logp1) in student_logp.iter().enumerate() {
            if sp == s {
                continue;
            }
            debug_assert_eq!(p2.len(), logp1.len());
            let h = -p2.iter().zip(logp1).map(|(&a, &b)| a * b).sum::<T>();
            sum += h;
            n_terms += 1;
        }
    }
    Ok(DinoLossOutput {
        value: sum / T::from_f64(n_terms as f64),
        n_terms,
    })
}

/// Center update: `c <- m_c * c + (1 - m_c) * mean(teacher logits batch)`.
pub fn update_center<T: Real>(center: &mut Tensor<T>, teacher_logits: &[Vec<T>], m_c: f64) -> Result<()> {
    if teacher_logits.is_empty() {
        return Err(Error::Data("update_center: empty logit batch".into()));
    }
    let k = center.numel();
    let m = T::from_f64(m_c);
    let one_minus = T::from_f64(1.0 - m_c);
    let n = T::from_f64(teacher_logits.len() as f64);
    let mut mean = vec![T::ZERO; k];
    for row in teacher_logits {
        debug_assert_eq!(row.len(), k);
        for (a, &b) in mean.iter_mut().zip(row) {
            *a += b;
        }
    }
    for (c, sum) in center.data_mut().iter_mut().zip(mean) {
        *c = m * *c + one_minus * (sum / n);
    }
    Ok(())
}

/// EMA teacher update over aligned parameter lists:
/// `theta_t <- lambda * theta_t + (1 - lambda) * theta_s`.
pub fn ema_update<T: Real>(
    teacher: &mut [(String, &mut Tensor<T>)],
    student: &[(String, &Tensor<T>)],
    lambda: f64,
) -> Result<()> {
    if teacher.len() != student.len() {
        return Err(Error::Shape(format!(
            "ema_update: {} teacher tensors vs {} student tensors",
            teacher.len(),
            student.len()
        )));
    }
    if lambda == 1.0 {
        return Ok(());
    }
    for ((tn, t), (sn, s)) in teacher.iter_mut().zip(student) {
        if t.shape() != s.shape() {
            return Err(Error::Shape(format!(
                "ema_update: {tn} {:?} vs {sn} {:?}",
                t.shape(),
                s.shape()
            )));
        }
        if lambda == 0.0 {
            t.data_mut().copy_from_slice(s.data());
            continue;
        }
        let l = T::from_f64(lambda);
        let one_minus = T::from_f64(1.0 - lambda);
        for (a, &b) in t.data_mut().iter_mut().zip(s.data()) {
            *a = l * *a + one_minus * b;
        }
    }
    Ok(())
}

/// Per-item result of the forward/backward pass, reduced sequentially in
/// batch order for bit-stable gradients.
struct ItemGrads<T: Real> {
    loss: T,
    grad_enc: Encoder<T>,
    grad_head: ProjectionHead<T>,
    teacher_logits: Vec<Vec<T>>,
    teacher_entropy: f64,
}

fn item_loss_and_grads<T: Real>(model: &DinoModel<T>, crops: &CropSet<T>) -> Result<ItemGrads<T>> {
    let cfg = &model.config;
    let n_long = crops.longs.len();
    // Teacher forward on long crops only; no gradients flow here.
    let mut teacher_logits = Vec::with_capacity(n_long);
    for long in &crops.longs {
        let emb = model.teacher_enc.forward_nograd(long)?;
        let (logits, _) = model.teacher_head.forward(&emb)?;
        teacher_logits.push(logits);
    }
    let teacher_p: Vec<Vec<T>> = teacher_logits
        .iter()
        .map(|z| teacher_distribution(z, model.center.data(), cfg.tau_teacher))
        .collect();
    let teacher_entropy = teacher_p
        .iter()
        .map(|p| {
            -p.iter()
                .map(|&v| {
                    let v = v.to_f64();
                    if v > 0.0 {
                        v * v.ln()
                    } else {
                        0.0
                    }
                })
                .sum::<f64>()
        })
        .sum::<f64>()
        / teacher_p.len() as f64;

    // Student forward on every crop, caching activations.
    let all_crops: Vec<&Tensor<T>> = crops.all().collect();
    let mut student_logits = Vec::with_capacity(all_crops.len());
    let mut caches = Vec::with_capacity(all_crops.len());
    for c in &all_crops {
        let (emb, enc_cache) = model.student_enc.forward(c)?;
        let (logits, head_cache) = model.student_head.forward(&emb)?;
        student_logits.push(logits);
        caches.push((enc_cache, head_cache));
    }
    let student_logp: Vec<Vec<T>> = student_logits
        .iter()
        .map(|z| student_log_distribution(z, cfg.tau_student))
        .collect();
    let loss = dino_loss(&teacher_p, &student_logp)?;

    // d loss / d student logits: for crop c,
    //   (1/n_terms) * sum over teacher longs s != c of
    //     (softmax(z_c / tau_s) - p2_s) / tau_s
    let inv_terms = T::from_f64(1.0 / loss.n_terms as f64);
    let inv_tau = T::from_f64(1.0 / cfg.tau_student);
    let mut grad_enc = model.student_enc.zeros_like();
    let mut grad_head = model.student_head.zeros_like();
    for (c, logits) in student_logits.iter().enumerate() {
        let p1: Vec<T> = {
            let scaled: Vec<T> = logits.iter().map(|&z| z * inv_tau).collect();
            softmax(&scaled)
        };
        let mut glogits = vec![T::ZERO; logits.len()];
        let mut pairs = 0usize;
        for (s, p2) in teacher_p.iter().enumerate() {
            if s == c {
                continue;
            }
            pairs += 1;
            for j in 0..glogits.len() {
                glogits[j] += (p1[j] - p2[j]) * inv_tau * inv_terms;
            }
        }
        if pairs == 0 {
            continue;
        }
        let (enc_cache, head_cache) = &caches[c];
        let grad_emb = model
            .student_head
            .backward(head_cache, &glogits, &mut grad_head);
        model.student_enc.backward(enc_cache, &grad_emb, &mut grad_enc);
    }

    Ok(ItemGrads {
        loss: loss.value,
        grad_enc,
        grad_head,
        teacher_logits,
        teacher_entropy,
    })
}

/// Loss and student gradients averaged over a batch of crop sets. Exposed
/// within the crate for the finite-difference oracle; `train_step` is the
/// public path.
pub(crate) struct BatchResult<T: Real> {
    pub loss: T,
    pub grad_enc: Encoder<T>,
    pub grad_head: ProjectionHead<T>,
    pub teacher_logits: Vec<Vec<T>>,
    pub teacher_entropy: f64,
}

pub(crate) fn batch_loss_and_grads<T: Real>(
    model: &DinoModel<T>,
    batch: &[CropSet<T>],
) -> Result<BatchResult<T>> {
    if batch.is_empty() {
        return Err(Error::Data("train_step: empty batch".into()));
    }
    let items = exec::map_ordered(batch, |_, crops| item_loss_and_grads(model, crops));
    let mut grad_enc = model.student_enc.zeros_like();
    let mut grad_head = model.student_head.zeros_like();
    let mut loss = T::ZERO;
    let mut teacher_logits = Vec::new();
    let mut entropy = 0.0f64;
    let scale = T::from_f64(1.0 / batch.len() as f64);
    for item in items {
        let item = item?;
        loss += item.loss * scale;
        entropy += item.teacher_entropy / batch.len() as f64;
        for (dst, src) in grad_enc
            .params_mut()
            .into_iter()
            .zip(item.grad_enc.params())
        {
            dst.1.add_scaled(src.1, scale);
        }
        for (dst, src) in grad_head
            .params_mut()
            .into_iter()
            .zip(item.grad_head.params())
        {
            dst.1.add_scaled(src.1, scale);
        }
        teacher_logits.extend(item.teacher_logits);
    }
    Ok(BatchResult {
        loss,
        grad_enc,
        grad_head,
        teacher_logits,
        teacher_entropy: entropy,
    })
}

/// One training step: student forward/backward on all crops, optimizer step,
/// EMA teacher update, then the center update from this batch's teacher
/// logits. Deterministic given the batch.
pub fn train_step(
    model: &mut DinoModel<f32>,
    batch: &[CropSet<f32>],
    opt_state: &mut SgdState<f32>,
    lr: f64,
) -> Result<StepMetrics> {
    let result = batch_loss_and_grads(model, batch)?;
    let loss = result.loss.to_f64();
    if !loss.is_finite() {
        return Err(Error::Numeric(format!(
            "NaN/Inf loss in train_step (teacher_entropy={:.4}, batch={} crop sets)",
            result.teacher_entropy,
            batch.len()
        )));
    }
    let grad_norm = {
        let mut sq = 0.0f64;
        for (_, g) in result.grad_enc.params() {
            let n = g.l2_norm();
            sq += n * n;
        }
        for (_, g) in result.grad_head.params() {
            let n = g.l2_norm();
            sq += n * n;
        }
        sq.sqrt()
    };

    {
        let mut params: Vec<&mut Tensor<f32>> = Vec::new();
        for (_, p) in model.student_enc.params_mut() {
            params.push(p);
        }
        for (_, p) in model.student_head.params_mut() {
            params.push(p);
        }
        let mut grads: Vec<&Tensor<f32>> = Vec::new();
        for (_, g) in result.grad_enc.params() {
            grads.push(g);
        }
        for (_, g) in result.grad_head.params() {
            grads.push(g);
        }
        sgd_step(&mut params, &grads, opt_state, &model.config.optimizer, lr)?;
    }

    {
        let lambda = model.config.ema_lambda;
        let mut teacher: Vec<(String, &mut Tensor<f32>)> = model.teacher_enc.params_mut();
        let student: Vec<(String, &Tensor<f32>)> = model.student_enc.params();
        ema_update(&mut teacher, &student, lambda)?;
        let mut teacher: Vec<(String, &mut Tensor<f32>)> = model.teacher_head.params_mut();
        let student: Vec<(String, &Tensor<f32>)> = model.student_head.params();
        ema_update(&mut teacher, &student, lambda)?;
    }

    update_center(
        &mut model.center,
        &result.teacher_logits,
        model.config.center_momentum,
    )?;

    Ok(StepMetrics {
        step: 0,
        loss,
        teacher_entropy: result.teacher_entropy,
        center_l2: model.center.l2_norm(),
        grad_norm,
    })
}

/// Batch loss plus the student gradients, for external verification
/// harnesses (finite-difference checks of the full step loss).
pub fn batch_loss_for_check<T: Real>(
    model: &DinoModel<T>,
    batch: &[CropSet<T>],
) -> Result<(T, Encoder<T>, ProjectionHead<T>)> {
    let out = batch_loss_and_grads(model, batch)?;
    Ok((out.loss, out.grad_enc, out.grad_head))
}

/// Number of student parameters updated per step; used by optimizer-state
/// constructors.
pub fn student_param_refs<'m>(model: &'m DinoModel<f32>) -> Vec<&'m Tensor<f32>> {
    let mut out: Vec<&Tensor<f32>> = Vec::new();
    for (_, p) in model.student_enc.params() {
        out.push(p);
    }
    for (_, p) in model.student_head.params() {
        out.push(p);
    }
    out
}
