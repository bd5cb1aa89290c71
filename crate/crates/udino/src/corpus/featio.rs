//! FEAT1 feature files and corpus directories.
//!
//! A feature file is an ASCII header `FEAT1 <id> <T> <F>\n` followed by
//! `T*F` little-endian f32 values. A corpus directory holds one file per
//! utterance plus `manifest.tsv` with lines `id<TAB>path<TAB>speaker_or_dash`
//! (paths relative to the manifest).

use std::fs;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use super::{Corpus, Utterance};
use crate::error::{Error, Result};
use crate::nn::Tensor;

pub const MANIFEST_NAME: &str = "manifest.tsv";

fn check_id(id: &str) -> Result<()> {
    if id.is_empty() || id.chars().any(|c| c.is_whitespace()) {
        return Err(Error::Data(format!(
            "utterance id `{id}` must be non-empty and whitespace-free"
        )));
    }
    Ok(())
}

pub fn write_feat_file(path: &Path, id: &str, frames: &Tensor<f32>) -> Result<()> {
    check_id(id)?;
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let header = format!("FEAT1 {id} {} {}\n", frames.rows(), frames.cols());
    w.write_all(header.as_bytes()).map_err(|e| Error::io(path, e))?;
    for &v in frames.data() {
        w.write_all(&v.to_le_bytes()).map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_feat_file(path: &Path) -> Result<(String, Tensor<f32>)> {
    let mut file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut bytes = Vec::new();
    file.read_to_end(&mut bytes).map_err(|e| Error::io(path, e))?;
    let nl = bytes
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| Error::Format(format!("{}: missing FEAT1 header line", path.display())))?;
    let header = std::str::from_utf8(&bytes[..nl])
        .map_err(|_| Error::Format(format!("{}: non-UTF8 header", path.display())))?;
    let parts: Vec<&str> = header.split(' ').collect();
    if parts.len() != 4 || parts[0] != "FEAT1" {
        return Err(Error::Format(format!(
            "{}: bad header `{header}`",
            path.display()
        )));
    }
    let id = parts[1].to_string();
    let t: usize = parts[2]
        .parse()
        .map_err(|_| Error::Format(format!("{}: bad frame count", path.display())))?;
    let f: usize = parts[3]
        .parse()
        .map_err(|_| Error::Format(format!("{}: bad feature dim", path.display())))?;
    let body = &bytes[nl + 1..];
    if body.len() != t * f * 4 {
        return Err(Error::Format(format!(
            "{}: expected {} payload bytes, found {}",
            path.display(),
            t * f * 4,
            body.len()
        )));
    }
    let data: Vec<f32> = body
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    Ok((id, Tensor::new(vec![t, f], data)?))
}

/// Write a corpus directory: one FEAT1 file per utterance plus the manifest.
pub fn write_corpus(dir: &Path, corpus: &Corpus) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let manifest_path = dir.join(MANIFEST_NAME);
    let file = fs::File::create(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?;
    let mut manifest = BufWriter::new(file);
    for utt in &corpus.utterances {
        check_id(&utt.id)?;
        let fname = format!("{}.feat", utt.id);
        write_feat_file(&dir.join(&fname), &utt.id, &utt.frames)?;
        let spk = utt.speaker_id.as_deref().unwrap_or("-");
        writeln!(manifest, "{}\t{}\t{}", utt.id, fname, spk)
            .map_err(|e| Error::io(&manifest_path, e))?;
    }
    manifest.flush().map_err(|e| Error::io(&manifest_path, e))
}

/// Read a corpus directory in manifest order.
pub fn read_corpus(dir: &Path) -> Result<Corpus> {
    let manifest_path = dir.join(MANIFEST_NAME);
    let text = fs::read_to_string(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?;
    let mut utterances = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != 3 {
            return Err(Error::Format(format!(
                "{}:{}: expected 3 tab-separated columns",
                manifest_path.display(),
                lineno + 1
            )));
        }
        let (id, rel_path, spk) = (cols[0], cols[1], cols[2]);
        let (file_id, frames) = read_feat_file(&dir.join(rel_path))?;
        if file_id != id {
            return Err(Error::Format(format!(
                "{}: manifest id `{id}` does not match file id `{file_id}`",
                manifest_path.display()
            )));
        }
        utterances.push(Utterance {
            id: id.to_string(),
            speaker_id: if spk == "-" { None } else { Some(spk.to_string()) },
            frames,
        });
    }
    Corpus::new(utterances, format!("{{\"source\":\"{}\"}}", dir.display()))
}
