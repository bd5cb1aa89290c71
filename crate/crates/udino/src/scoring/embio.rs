//! EMB1 embedding files and trial lists.
//!
//! EMB1: header `EMB1 <N> <D>\n`, then per row the utterance id, a tab, and
//! `D` little-endian f32 values. The `--tsv` export mode mirrors the same
//! rows as text for external plotting tools. Trial lists are text lines
//! `enroll_id test_id target|nontarget`.

use std::fs;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use super::{EmbeddingSet, Trial, TrialLabel};
use crate::error::{Error, Result};

pub fn write_embeddings(path: &Path, embs: &EmbeddingSet) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    write!(w, "EMB1 {} {}\n", embs.len(), embs.dim()).map_err(|e| Error::io(path, e))?;
    for i in 0..embs.len() {
        let id = &embs.ids()[i];
        if id.contains('\t') || id.contains('\n') {
            return Err(Error::Data(format!("embedding id `{id}` contains separators")));
        }
        w.write_all(id.as_bytes()).map_err(|e| Error::io(path, e))?;
        w.write_all(b"\t").map_err(|e| Error::io(path, e))?;
        for &v in embs.vector(i) {
            w.write_all(&v.to_le_bytes()).map_err(|e| Error::io(path, e))?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_embeddings(path: &Path) -> Result<EmbeddingSet> {
    let mut file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut bytes = Vec::new();
    file.read_to_end(&mut bytes).map_err(|e| Error::io(path, e))?;
    let nl = bytes
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| Error::Format(format!("{}: missing EMB1 header", path.display())))?;
    let header = std::str::from_utf8(&bytes[..nl])
        .map_err(|_| Error::Format(format!("{}: non-UTF8 header", path.display())))?;
    let parts: Vec<&str> = header.split(' ').collect();
    if parts.len() != 3 || parts[0] != "EMB1" {
        return Err(Error::Format(format!(
            "{}: bad header `{header}`",
            path.display()
        )));
    }
    let n: usize = parts[1]
        .parse()
        .map_err(|_| Error::Format(format!("{}: bad row count", path.display())))?;
    let d: usize = parts[2]
        .parse()
        .map_err(|_| Error::Format(format!("{}: bad dimension", path.display())))?;
    let mut pos = nl + 1;
    let mut ids = Vec::with_capacity(n);
    let mut data = Vec::with_capacity(n * d);
    for row in 0..n {
        let tab = bytes[pos..]
            .iter()
            .position(|&b| b == b'\t')
            .ok_or_else(|| Error::Format(format!("{}: row {row} missing id", path.display())))?;
        let id = std::str::from_utf8(&bytes[pos..pos + tab])
            .map_err(|_| Error::Format(format!("{}: row {row} id not UTF8", path.display())))?;
        ids.push(id.to_string());
        pos += tab + 1;
        if pos + 4 * d > bytes.len() {
            return Err(Error::Format(format!(
                "{}: row {row} payload truncated",
                path.display()
            )));
        }
        for k in 0..d {
            let at = pos + 4 * k;
            data.push(f32::from_le_bytes([
                bytes[at],
                bytes[at + 1],
                bytes[at + 2],
                bytes[at + 3],
            ]));
        }
        pos += 4 * d;
    }
    EmbeddingSet::new(ids, d, data)
}

/// Text export for external tools: `id<TAB>v0<TAB>v1...` per row.
pub fn write_embeddings_tsv(path: &Path, embs: &EmbeddingSet) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for i in 0..embs.len() {
        write!(w, "{}", embs.ids()[i]).map_err(|e| Error::io(path, e))?;
        for &v in embs.vector(i) {
            write!(w, "\t{v}").map_err(|e| Error::io(path, e))?;
        }
        writeln!(w).map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn write_trials(path: &Path, trials: &[Trial]) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for t in trials {
        let label = match t.label {
            TrialLabel::Target => "target",
            TrialLabel::Nontarget => "nontarget",
        };
        writeln!(w, "{} {} {}", t.enroll_id, t.test_id, label).map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_trials(path: &Path) -> Result<Vec<Trial>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let parts: Vec<&str> = line.split(' ').collect();
        if parts.len() != 3 {
            return Err(Error::Format(format!(
                "{}:{}: expected `enroll test label`",
                path.display(),
                lineno + 1
            )));
        }
        let label = match parts[2] {
            "target" => TrialLabel::Target,
            "nontarget" => TrialLabel::Nontarget,
            other => {
                return Err(Error::Format(format!(
                    "{}:{}: unknown label `{other}`",
                    path.display(),
                    lineno + 1
                )))
            }
        };
        out.push(Trial {
            enroll_id: parts[0].to_string(),
            test_id: parts[1].to_string(),
            label,
        });
    }
    Ok(out)
}

/// `id<TAB>label` maps used for probe classes and PLDA speaker labels.
pub fn read_label_map(path: &Path) -> Result<Vec<(String, String)>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let parts: Vec<&str> = line.split('\t').collect();
        if parts.len() != 2 {
            return Err(Error::Format(format!(
                "{}:{}: expected `id<TAB>label`",
                path.display(),
                lineno + 1
            )));
        }
        out.push((parts[0].to_string(), parts[1].to_string()));
    }
    Ok(out)
}

pub fn write_label_map(path: &Path, pairs: &[(String, String)]) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for (id, label) in pairs {
        writeln!(w, "{id}\t{label}").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
