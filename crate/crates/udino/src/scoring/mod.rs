//! Verification and probing back-ends: embedding preprocessing, cosine and
//! PLDA trial scoring, EER/minDCF, a logistic-regression probe, and weighted
//! class-F1.

mod embio;
mod linalg;
mod metrics;
mod plda;
mod probe;

pub use embio::{
    read_embeddings, read_label_map, read_trials, write_embeddings, write_embeddings_tsv,
    write_label_map, write_trials,
};
pub use metrics::{eer, min_dcf, DcfParams};
pub use plda::{plda_score, plda_train, PldaModel, PldaScorer};
pub use probe::{probe_train, weighted_f1, ProbeConfig, ProbeModel};

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec;

/// A set of fixed-dimensional embeddings with unique ids and optional
/// class/speaker labels.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingSet {
    ids: Vec<String>,
    dim: usize,
    /// Row-major `[N, dim]`.
    data: Vec<f32>,
    labels: Option<Vec<String>>,
    index: HashMap<String, usize>,
}

impl EmbeddingSet {
    pub fn new(ids: Vec<String>, dim: usize, data: Vec<f32>) -> Result<Self> {
        if ids.len() * dim != data.len() {
            return Err(Error::Shape(format!(
                "{} ids with dim {} needs {} values, got {}",
                ids.len(),
                dim,
                ids.len() * dim,
                data.len()
            )));
        }
        if !data.iter().all(|v| v.is_finite()) {
            return Err(Error::Data("embedding set contains non-finite values".into()));
        }
        let mut index = HashMap::with_capacity(ids.len());
        for (i, id) in ids.iter().enumerate() {
            if index.insert(id.clone(), i).is_some() {
                return Err(Error::Data(format!("duplicate embedding id {id}")));
            }
        }
        Ok(EmbeddingSet {
            ids,
            dim,
            data,
            labels: None,
            index,
        })
    }

    pub fn with_labels(mut self, labels: Vec<String>) -> Result<Self> {
        if labels.len() != self.ids.len() {
            return Err(Error::Shape(format!(
                "{} labels for {} embeddings",
                labels.len(),
                self.ids.len()
            )));
        }
        self.labels = Some(labels);
        Ok(self)
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn labels(&self) -> Option<&[String]> {
        self.labels.as_deref()
    }

    pub fn vector(&self, i: usize) -> &[f32] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn index_of(&self, id: &str) -> Result<usize> {
        self.index
            .get(id)
            .copied()
            .ok_or_else(|| Error::MissingId(id.to_string()))
    }

    pub fn vector_by_id(&self, id: &str) -> Result<&[f32]> {
        Ok(self.vector(self.index_of(id)?))
    }
}

/// Statistics learned on a designated training set and applied everywhere.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreprocessStats {
    pub mean: Vec<f32>,
}

impl PreprocessStats {
    pub fn fit(embs: &EmbeddingSet) -> Result<Self> {
        if embs.is_empty() {
            return Err(Error::Data("cannot fit preprocessing on an empty set".into()));
        }
        let d = embs.dim();
        let mut mean = vec![0.0f64; d];
        for i in 0..embs.len() {
            for (m, &v) in mean.iter_mut().zip(embs.vector(i)) {
                *m += v as f64;
            }
        }
        let n = embs.len() as f64;
        Ok(PreprocessStats {
            mean: mean.into_iter().map(|v| (v / n) as f32).collect(),
        })
    }
}

/// Subtract the training-set mean, then length-normalize each vector.
pub fn preprocess(embs: &EmbeddingSet, stats: &PreprocessStats) -> Result<EmbeddingSet> {
    if stats.mean.len() != embs.dim() {
        return Err(Error::Shape(format!(
            "preprocess mean dim {} vs embeddings dim {}",
            stats.mean.len(),
            embs.dim()
        )));
    }
    let d = embs.dim();
    let mut data = Vec::with_capacity(embs.len() * d);
    for i in 0..embs.len() {
        let centered: Vec<f64> = embs
            .vector(i)
            .iter()
            .zip(&stats.mean)
            .map(|(&v, &m)| (v - m) as f64)
            .collect();
        let norm = centered.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm <= 0.0 {
            return Err(Error::Numeric(format!(
                "embedding {} is zero after centering",
                embs.ids[i]
            )));
        }
        data.extend(centered.iter().map(|v| (v / norm) as f32));
    }
    let mut out = EmbeddingSet::new(embs.ids.clone(), d, data)?;
    if let Some(labels) = &embs.labels {
        out = out.with_labels(labels.clone())?;
    }
    Ok(out)
}

/// Cosine similarity in `[-1, 1]`. Errors on zero vectors.
pub fn cosine_score(a: &[f32], b: &[f32]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Shape(format!(
            "cosine_score: {} vs {} dims",
            a.len(),
            b.len()
        )));
    }
    let (mut dot, mut na, mut nb) = (0.0f64, 0.0f64, 0.0f64);
    for (&x, &y) in a.iter().zip(b) {
        let (x, y) = (x as f64, y as f64);
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if na <= 0.0 || nb <= 0.0 {
        return Err(Error::Numeric("cosine_score of zero vector".into()));
    }
    Ok(dot / (na.sqrt() * nb.sqrt()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrialLabel {
    Target,
    Nontarget,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Trial {
    pub enroll_id: String,
    pub test_id: String,
    pub label: TrialLabel,
}

pub type TrialList = Vec<Trial>;

/// Scores aligned with their target/nontarget labels.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreSet {
    pub scores: Vec<f64>,
    /// `true` marks a target trial.
    pub labels: Vec<bool>,
}

impl ScoreSet {
    pub fn new(scores: Vec<f64>, labels: Vec<bool>) -> Result<Self> {
        if scores.len() != labels.len() {
            return Err(Error::Shape(format!(
                "{} scores vs {} labels",
                scores.len(),
                labels.len()
            )));
        }
        Ok(ScoreSet { scores, labels })
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    pub fn n_target(&self) -> usize {
        self.labels.iter().filter(|&&l| l).count()
    }

    pub fn n_nontarget(&self) -> usize {
        self.len() - self.n_target()
    }
}

pub enum Scorer<'a> {
    Cosine,
    Plda(&'a PldaModel),
}

/// Score every trial, order preserved. Unknown ids error with the id named.
pub fn score_trials(embs: &EmbeddingSet, trials: &[Trial], scorer: &Scorer) -> Result<ScoreSet> {
    // Resolve ids up front so the error points at the first missing one.
    let mut resolved = Vec::with_capacity(trials.len());
    for t in trials {
        resolved.push((embs.index_of(&t.enroll_id)?, embs.index_of(&t.test_id)?));
    }
    let plda_scorer = match scorer {
        Scorer::Cosine => None,
        Scorer::Plda(model) => Some(model.scorer()?),
    };
    let scores = exec::map_ordered(&resolved, |_, &(a, b)| match &plda_scorer {
        None => cosine_score(embs.vector(a), embs.vector(b)),
        Some(s) => Ok(s.score(embs.vector(a), embs.vector(b))),
    });
    let scores = scores.into_iter().collect::<Result<Vec<f64>>>()?;
    let labels = trials.iter().map(|t| t.label == TrialLabel::Target).collect();
    ScoreSet::new(scores, labels)
}
