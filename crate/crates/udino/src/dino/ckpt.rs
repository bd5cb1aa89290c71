//! DINOCKPT1 checkpoint container, used for every model in the repo.
//!
//! Layout: the magic line `DINOCKPT1\n`, one line of JSON metadata (kind,
//! step, config, and the tensor manifest with byte offsets into the
//! payload), then the concatenated little-endian f32 tensor payloads.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{DinoConfig, DinoModel};
use crate::error::{Error, Result};
use crate::nn::{Encoder, EncoderConfig, Tensor};
use crate::rng;

pub const MAGIC: &[u8] = b"DINOCKPT1\n";

#[derive(Debug, Clone, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    offset: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub kind: String,
    pub step: u64,
    pub config: Value,
    tensors: Vec<TensorEntry>,
}

/// Write a checkpoint. Tensor order defines payload order.
pub fn write_checkpoint(
    path: &Path,
    kind: &str,
    step: u64,
    config: Value,
    tensors: &[(String, &Tensor<f32>)],
) -> Result<()> {
    let mut entries = Vec::with_capacity(tensors.len());
    let mut offset = 0usize;
    for (name, t) in tensors {
        entries.push(TensorEntry {
            name: name.clone(),
            shape: t.shape().to_vec(),
            offset,
        });
        offset += t.numel() * 4;
    }
    let meta = CheckpointMeta {
        kind: kind.to_string(),
        step,
        config,
        tensors: entries,
    };
    let meta_json = serde_json::to_string(&meta)
        .map_err(|e| Error::Format(format!("checkpoint meta serialization: {e}")))?;

    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    w.write_all(MAGIC).map_err(|e| Error::io(path, e))?;
    w.write_all(meta_json.as_bytes()).map_err(|e| Error::io(path, e))?;
    w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    for (_, t) in tensors {
        for &v in t.data() {
            w.write_all(&v.to_le_bytes()).map_err(|e| Error::io(path, e))?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Read a checkpoint into metadata plus named tensors.
pub fn read_checkpoint(path: &Path) -> Result<(CheckpointMeta, BTreeMap<String, Tensor<f32>>)> {
    let mut file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut bytes = Vec::new();
    file.read_to_end(&mut bytes).map_err(|e| Error::io(path, e))?;
    if bytes.len() < MAGIC.len() || &bytes[..MAGIC.len()] != MAGIC {
        return Err(Error::Format(format!(
            "{}: not a DINOCKPT1 checkpoint",
            path.display()
        )));
    }
    let rest = &bytes[MAGIC.len()..];
    let nl = rest
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| Error::Format(format!("{}: missing metadata line", path.display())))?;
    let meta: CheckpointMeta = serde_json::from_slice(&rest[..nl])
        .map_err(|e| Error::Format(format!("{}: bad metadata: {e}", path.display())))?;
    let payload = &rest[nl + 1..];
    let mut tensors = BTreeMap::new();
    for entry in &meta.tensors {
        let numel: usize = entry.shape.iter().product();
        let end = entry.offset + numel * 4;
        if end > payload.len() {
            return Err(Error::Format(format!(
                "{}: tensor {} overruns payload",
                path.display(),
                entry.name
            )));
        }
        let data: Vec<f32> = payload[entry.offset..end]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        tensors.insert(entry.name.clone(), Tensor::new(entry.shape.clone(), data)?);
    }
    Ok((meta, tensors))
}

fn fill_from_map(
    prefix: &str,
    params: Vec<(String, &mut Tensor<f32>)>,
    map: &BTreeMap<String, Tensor<f32>>,
) -> Result<()> {
    for (name, p) in params {
        let key = format!("{prefix}.{name}");
        let t = map
            .get(&key)
            .ok_or_else(|| Error::Format(format!("checkpoint missing tensor {key}")))?;
        if t.shape() != p.shape() {
            return Err(Error::Shape(format!(
                "checkpoint tensor {key}: {:?} vs expected {:?}",
                t.shape(),
                p.shape()
            )));
        }
        p.data_mut().copy_from_slice(t.data());
    }
    Ok(())
}

#[derive(Debug, Serialize, Deserialize)]
struct DinoCkptConfig {
    encoder: EncoderConfig,
    dino: DinoConfig,
    seed: u64,
}

pub fn save_dino(path: &Path, model: &DinoModel<f32>, step: u64, seed: u64) -> Result<()> {
    let cfg = DinoCkptConfig {
        encoder: model.student_enc.config.clone(),
        dino: model.config.clone(),
        seed,
    };
    let config = serde_json::to_value(&cfg)
        .map_err(|e| Error::Format(format!("dino config serialization: {e}")))?;
    let mut tensors: Vec<(String, &Tensor<f32>)> = Vec::new();
    for (n, t) in model.student_enc.params() {
        tensors.push((format!("student.{n}"), t));
    }
    for (n, t) in model.student_head.params() {
        tensors.push((format!("student_head.{n}"), t));
    }
    for (n, t) in model.teacher_enc.params() {
        tensors.push((format!("teacher.{n}"), t));
    }
    for (n, t) in model.teacher_head.params() {
        tensors.push((format!("teacher_head.{n}"), t));
    }
    tensors.push(("center".to_string(), &model.center));
    write_checkpoint(path, "dino", step, config, &tensors)
}

pub fn load_dino(path: &Path) -> Result<(DinoModel<f32>, u64)> {
    let (meta, tensors) = read_checkpoint(path)?;
    if meta.kind != "dino" {
        return Err(Error::Format(format!(
            "{}: expected a dino checkpoint, found kind `{}`",
            path.display(),
            meta.kind
        )));
    }
    let cfg: DinoCkptConfig = serde_json::from_value(meta.config.clone())
        .map_err(|e| Error::Format(format!("{}: bad dino config: {e}", path.display())))?;
    let mut model = DinoModel::init(&cfg.encoder, &cfg.dino, 0)?;
    fill_from_map("student", model.student_enc.params_mut(), &tensors)?;
    fill_from_map("student_head", model.student_head.params_mut(), &tensors)?;
    fill_from_map("teacher", model.teacher_enc.params_mut(), &tensors)?;
    fill_from_map("teacher_head", model.teacher_head.params_mut(), &tensors)?;
    let center = tensors
        .get("center")
        .ok_or_else(|| Error::Format("checkpoint missing tensor center".into()))?;
    if center.shape() != model.center.shape() {
        return Err(Error::Shape("checkpoint center shape mismatch".into()));
    }
    model.center = center.clone();
    Ok((model, meta.step))
}

#[derive(Debug, Serialize, Deserialize)]
struct EncoderCkptConfig {
    encoder: EncoderConfig,
    seed: u64,
}

pub fn save_encoder(path: &Path, enc: &Encoder<f32>, step: u64, seed: u64) -> Result<()> {
    let cfg = EncoderCkptConfig {
        encoder: enc.config.clone(),
        seed,
    };
    let config = serde_json::to_value(&cfg)
        .map_err(|e| Error::Format(format!("encoder config serialization: {e}")))?;
    let mut tensors: Vec<(String, &Tensor<f32>)> = Vec::new();
    for (n, t) in enc.params() {
        tensors.push((format!("encoder.{n}"), t));
    }
    write_checkpoint(path, "encoder", step, config, &tensors)
}

pub fn load_encoder(path: &Path) -> Result<Encoder<f32>> {
    let (meta, tensors) = read_checkpoint(path)?;
    if meta.kind != "encoder" {
        return Err(Error::Format(format!(
            "{}: expected an encoder checkpoint, found kind `{}`",
            path.display(),
            meta.kind
        )));
    }
    let cfg: EncoderCkptConfig = serde_json::from_value(meta.config.clone())
        .map_err(|e| Error::Format(format!("{}: bad encoder config: {e}", path.display())))?;
    let mut r = rng::derive(0, &[rng::TAG_MODEL_INIT]);
    let mut enc = Encoder::init(&cfg.encoder, &mut r)?;
    fill_from_map("encoder", enc.params_mut(), &tensors)?;
    Ok(enc)
}

/// Either model kind an `extract`-style consumer can load.
pub fn load_any_encoder(path: &Path, branch: super::Branch) -> Result<Encoder<f32>> {
    let (meta, _) = read_checkpoint(path)?;
    match meta.kind.as_str() {
        "dino" => {
            let (model, _) = load_dino(path)?;
            Ok(match branch {
                super::Branch::Teacher => model.teacher_enc,
                super::Branch::Student => model.student_enc,
            })
        }
        "encoder" => load_encoder(path),
        other => Err(Error::Format(format!(
            "{}: cannot extract embeddings from a `{other}` checkpoint",
            path.display()
        ))),
    }
}
