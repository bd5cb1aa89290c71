//! Utterance-level embedding toolkit built around non-contrastive
//! self-distillation (DINO-style teacher/student training without labels).
//!
//! The crate covers the full desk-scale pipeline:
//!
//! * [`corpus`] — WAV/log-mel ingestion, synthetic oracle corpora, multi-crop
//!   segment extraction and feature-domain augmentation.
//! * [`nn`] — a minimal differentiable core: tensors, conv/affine layers,
//!   statistics pooling, hand-derived backward passes, SGD, and a
//!   finite-difference gradient checker.
//! * [`dino`] — the self-distillation trainer: multi-crop cross-entropy loss,
//!   EMA teacher, centering and sharpening, checkpointing.
//! * [`scoring`] — verification back-ends: cosine and PLDA trial scoring,
//!   EER/minDCF, a logistic-regression probe and weighted class-F1.
//! * [`cluster`] — iterative pseudo-labeling: k-means, agglomerative
//!   clustering over centroids, AAM-softmax retraining, NMI.
//!
//! Data-parallel inner loops (batch forwards, trial scoring, k-means
//! assignment) run on rayon when the default `parallel` feature is enabled
//! and fall back to sequential loops otherwise; both paths reduce in a fixed
//! order, so results are bit-identical across thread counts and features.

pub mod cluster;
pub mod corpus;
pub mod dino;
mod error;
pub mod exec;
pub mod nn;
pub mod rng;
pub mod scoring;

pub use error::{Error, Result};
