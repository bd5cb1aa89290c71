//! RIFF/WAVE reader for 16-bit PCM mono files.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

fn read_u16(b: &[u8], at: usize) -> u16 {
    u16::from_le_bytes([b[at], b[at + 1]])
}

fn read_u32(b: &[u8], at: usize) -> u32 {
    u32::from_le_bytes([b[at], b[at + 1], b[at + 2], b[at + 3]])
}

/// Read a PCM16 mono WAV file. Samples are scaled to `[-1, 1)` by `1/32768`;
/// returns `(samples, sample_rate)`.
pub fn read_wav_pcm16(path: &Path) -> Result<(Vec<f32>, u32)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_wav_pcm16(&bytes)
}

pub(crate) fn parse_wav_pcm16(bytes: &[u8]) -> Result<(Vec<f32>, u32)> {
    if bytes.len() < 12 || &bytes[0..4] != b"RIFF" || &bytes[8..12] != b"WAVE" {
        return Err(Error::Format("not a RIFF/WAVE file".into()));
    }
    let mut pos = 12usize;
    let mut fmt: Option<(u16, u16, u32, u16)> = None; // (codec, channels, rate, bits)
    let mut data: Option<&[u8]> = None;
    while pos + 8 <= bytes.len() {
        let id = &bytes[pos..pos + 4];
        let size = read_u32(bytes, pos + 4) as usize;
        let body_start = pos + 8;
        if body_start + size > bytes.len() {
            return Err(Error::Format(format!(
                "chunk {:?} overruns file",
                String::from_utf8_lossy(id)
            )));
        }
        match id {
            b"fmt " => {
                if size < 16 {
                    return Err(Error::Format("fmt chunk too small".into()));
                }
                fmt = Some((
                    read_u16(bytes, body_start),
                    read_u16(bytes, body_start + 2),
                    read_u32(bytes, body_start + 4),
                    read_u16(bytes, body_start + 14),
                ));
            }
            b"data" => {
                data = Some(&bytes[body_start..body_start + size]);
            }
            _ => {}
        }
        // Chunks are word-aligned.
        pos = body_start + size + (size & 1);
    }
    let (codec, channels, rate, bits) =
        fmt.ok_or_else(|| Error::Format("missing fmt chunk".into()))?;
    if codec != 1 {
        return Err(Error::Unsupported(format!(
            "only PCM encoding supported, got format tag {codec}"
        )));
    }
    if channels != 1 {
        return Err(Error::Unsupported(format!(
            "only mono supported, got {channels} channels"
        )));
    }
    if bits != 16 {
        return Err(Error::Unsupported(format!(
            "only 16-bit samples supported, got {bits}"
        )));
    }
    let data = data.ok_or_else(|| Error::Format("missing data chunk".into()))?;
    if data.len() % 2 != 0 {
        return Err(Error::Format("data chunk has odd byte length".into()));
    }
    let samples = data
        .chunks_exact(2)
        .map(|c| i16::from_le_bytes([c[0], c[1]]) as f32 / 32768.0)
        .collect();
    Ok((samples, rate))
}
