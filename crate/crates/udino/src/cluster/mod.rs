//! Iterative pseudo-labeling: k-means over embeddings, agglomerative
//! merging of the k-means centroids, cluster indices as surrogate speaker
//! labels, AAM-softmax supervised retraining, and the iterate-until-converged
//! loop with large-margin fine-tuning.

mod aam;
mod ahc;
mod kmeans;
mod nmi;
mod supervised;

pub use aam::{aam_loss, AamHead, AamLoss};
pub use ahc::ahc;
pub use kmeans::{kmeans, KmeansResult};
pub use nmi::nmi;
pub use supervised::{
    evaluate_encoder, fine_tune, iterate, train_supervised, FineTuneConfig, IterateConfig,
    IterationRecord, SupervisedConfig,
};

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use crate::corpus::Corpus;
use crate::error::{Error, Result};
use crate::exec;
use crate::nn::Encoder;
use crate::scoring::{preprocess, EmbeddingSet, PreprocessStats};

/// Cluster assignment: utterance id -> cluster index in `[0, k)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Assignment {
    pub ids: Vec<String>,
    pub clusters: Vec<usize>,
    pub k: usize,
}

impl Assignment {
    pub fn new(ids: Vec<String>, clusters: Vec<usize>) -> Result<Self> {
        if ids.len() != clusters.len() {
            return Err(Error::Shape(format!(
                "{} ids vs {} cluster indices",
                ids.len(),
                clusters.len()
            )));
        }
        let k = clusters.iter().copied().max().map_or(0, |m| m + 1);
        Ok(Assignment { ids, clusters, k })
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn as_map(&self) -> BTreeMap<&str, usize> {
        self.ids
            .iter()
            .map(|s| s.as_str())
            .zip(self.clusters.iter().copied())
            .collect()
    }

    /// Re-index cluster labels densely in order of first appearance.
    pub fn densify(&mut self) {
        let mut remap: BTreeMap<usize, usize> = BTreeMap::new();
        let mut next = 0usize;
        for c in self.clusters.iter_mut() {
            let idx = *remap.entry(*c).or_insert_with(|| {
                let v = next;
                next += 1;
                v
            });
            *c = idx;
        }
        self.k = next;
    }

    pub fn write_tsv(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = std::io::BufWriter::new(file);
        for (id, c) in self.ids.iter().zip(&self.clusters) {
            writeln!(w, "{id}\t{c}").map_err(|e| Error::io(path, e))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn read_tsv(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut ids = Vec::new();
        let mut clusters = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let parts: Vec<&str> = line.split('\t').collect();
            if parts.len() != 2 {
                return Err(Error::Format(format!(
                    "{}:{}: expected `id<TAB>cluster`",
                    path.display(),
                    lineno + 1
                )));
            }
            ids.push(parts[0].to_string());
            clusters.push(parts[1].parse().map_err(|_| {
                Error::Format(format!(
                    "{}:{}: bad cluster index `{}`",
                    path.display(),
                    lineno + 1,
                    parts[1]
                ))
            })?);
        }
        Assignment::new(ids, clusters)
    }
}

/// Full-utterance embeddings for a corpus through one encoder.
pub fn extract_embeddings(encoder: &Encoder<f32>, corpus: &Corpus) -> Result<EmbeddingSet> {
    if corpus.is_empty() {
        return Err(Error::Data("cannot extract embeddings from an empty corpus".into()));
    }
    let rows = exec::map_ordered(&corpus.utterances, |_, utt| {
        encoder.forward_nograd(&utt.frames)
    });
    let dim = encoder.embed_dim();
    let mut data = Vec::with_capacity(corpus.len() * dim);
    for r in rows {
        data.extend(r?);
    }
    EmbeddingSet::new(corpus.ids(), dim, data)
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PseudoLabelConfig {
    pub kmeans_k: usize,
    #[serde(default = "default_kmeans_iters")]
    pub kmeans_iters: usize,
    pub ahc_clusters: usize,
}

fn default_kmeans_iters() -> usize {
    50
}

/// Embeddings -> preprocess -> k-means -> AHC over centroids -> dense labels.
///
/// The corpus view is stripped of speaker ids before anything runs, so the
/// hidden truth cannot leak into the labels.
pub fn pseudo_labels(
    corpus: &Corpus,
    encoder: &Encoder<f32>,
    cfg: &PseudoLabelConfig,
    seed: u64,
) -> Result<Assignment> {
    if cfg.ahc_clusters > cfg.kmeans_k {
        return Err(Error::Config(format!(
            "ahc_clusters ({}) must be <= kmeans_k ({})",
            cfg.ahc_clusters, cfg.kmeans_k
        )));
    }
    let unlabeled = corpus.without_speaker_ids();
    let embs = extract_embeddings(encoder, &unlabeled)?;
    let stats = PreprocessStats::fit(&embs)?;
    let embs = preprocess(&embs, &stats)?;
    let km = kmeans(&embs, cfg.kmeans_k, cfg.kmeans_iters, seed)?;
    let merge = ahc(&km.centroids, &km.sizes, cfg.ahc_clusters)?;
    let clusters: Vec<usize> = km.assignment.iter().map(|&c| merge[c]).collect();
    let mut out = Assignment::new(unlabeled.ids(), clusters)?;
    out.densify();
    Ok(out)
}
