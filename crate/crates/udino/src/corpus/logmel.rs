//! Log-mel filterbank features: Hann-windowed frames, power spectrum via a
//! radix-2 FFT, triangular mel filters, and a natural-log compression with a
//! 1e-10 floor.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LogMelConfig {
    #[serde(default = "default_win_ms")]
    pub win_ms: f64,
    #[serde(default = "default_hop_ms")]
    pub hop_ms: f64,
    #[serde(default = "default_n_mels")]
    pub n_mels: usize,
    #[serde(default = "default_fmin")]
    pub fmin: f64,
    /// Upper band edge; defaults to the Nyquist frequency when absent.
    #[serde(default)]
    pub fmax: Option<f64>,
}

fn default_win_ms() -> f64 {
    25.0
}
fn default_hop_ms() -> f64 {
    10.0
}
fn default_n_mels() -> usize {
    23
}
fn default_fmin() -> f64 {
    20.0
}

impl Default for LogMelConfig {
    fn default() -> Self {
        LogMelConfig {
            win_ms: default_win_ms(),
            hop_ms: default_hop_ms(),
            n_mels: default_n_mels(),
            fmin: default_fmin(),
            fmax: None,
        }
    }
}

const LOG_FLOOR: f64 = 1e-10;

fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

/// Center frequencies (Hz) of the triangular filters; used by tests as an
/// independent reference for where filter peaks sit.
pub fn mel_center_frequencies(cfg: &LogMelConfig, sr: u32) -> Vec<f64> {
    let fmax = cfg.fmax.unwrap_or(sr as f64 / 2.0);
    let mel_min = hz_to_mel(cfg.fmin);
    let mel_max = hz_to_mel(fmax);
    (1..=cfg.n_mels)
        .map(|i| mel_to_hz(mel_min + (mel_max - mel_min) * i as f64 / (cfg.n_mels + 1) as f64))
        .collect()
}

/// In-place iterative radix-2 FFT over interleaved (re, im) pairs.
fn fft(re: &mut [f64], im: &mut [f64]) {
    let n = re.len();
    debug_assert!(n.is_power_of_two());
    // Bit-reversal permutation.
    let mut j = 0usize;
    for i in 1..n {
        let mut bit = n >> 1;
        while j & bit != 0 {
            j ^= bit;
            bit >>= 1;
        }
        j |= bit;
        if i < j {
            re.swap(i, j);
            im.swap(i, j);
        }
    }
    let mut len = 2;
    while len <= n {
        let ang = -std::f64::consts::TAU / len as f64;
        let (wr, wi) = (ang.cos(), ang.sin());
        let mut i = 0;
        while i < n {
            let (mut cr, mut ci) = (1.0f64, 0.0f64);
            for k in 0..len / 2 {
                let (ur, ui) = (re[i + k], im[i + k]);
                let (vr, vi) = (
                    re[i + k + len / 2] * cr - im[i + k + len / 2] * ci,
                    re[i + k + len / 2] * ci + im[i + k + len / 2] * cr,
                );
                re[i + k] = ur + vr;
                im[i + k] = ui + vi;
                re[i + k + len / 2] = ur - vr;
                im[i + k + len / 2] = ui - vi;
                let ncr = cr * wr - ci * wi;
                ci = cr * wi + ci * wr;
                cr = ncr;
            }
            i += len;
        }
        len <<= 1;
    }
}

/// Triangular filterbank `[n_mels][n_bins]` over FFT power bins.
fn build_filterbank(cfg: &LogMelConfig, sr: u32, n_fft: usize) -> Vec<Vec<f64>> {
    let n_bins = n_fft / 2 + 1;
    let fmax = cfg.fmax.unwrap_or(sr as f64 / 2.0);
    let mel_min = hz_to_mel(cfg.fmin);
    let mel_max = hz_to_mel(fmax);
    let edges: Vec<f64> = (0..cfg.n_mels + 2)
        .map(|i| mel_to_hz(mel_min + (mel_max - mel_min) * i as f64 / (cfg.n_mels + 1) as f64))
        .collect();
    let bin_hz = sr as f64 / n_fft as f64;
    let mut filters = vec![vec![0.0f64; n_bins]; cfg.n_mels];
    for m in 0..cfg.n_mels {
        let (lo, mid, hi) = (edges[m], edges[m + 1], edges[m + 2]);
        for (b, w) in filters[m].iter_mut().enumerate() {
            let f = b as f64 * bin_hz;
            if f > lo && f < mid {
                *w = (f - lo) / (mid - lo);
            } else if (f - mid).abs() < 1e-12 {
                *w = 1.0;
            } else if f > mid && f < hi {
                *w = (hi - f) / (hi - mid);
            }
        }
    }
    filters
}

/// Compute `[T, n_mels]` log-mel features. `T = 1 + floor((len - win)/hop)`.
pub fn logmel(waveform: &[f32], sr: u32, cfg: &LogMelConfig) -> Result<Tensor<f32>> {
    if cfg.n_mels == 0 {
        return Err(Error::Config("logmel: n_mels must be >= 1".into()));
    }
    let win = (cfg.win_ms * sr as f64 / 1000.0).round() as usize;
    let hop = (cfg.hop_ms * sr as f64 / 1000.0).round() as usize;
    if win == 0 || hop == 0 {
        return Err(Error::Config("logmel: window and hop must be positive".into()));
    }
    if waveform.len() < win {
        return Err(Error::Data(format!(
            "waveform of {} samples is shorter than one {win}-sample window",
            waveform.len()
        )));
    }
    let n_frames = 1 + (waveform.len() - win) / hop;
    let n_fft = win.next_power_of_two();
    let n_bins = n_fft / 2 + 1;
    let filters = build_filterbank(cfg, sr, n_fft);
    let window: Vec<f64> = (0..win)
        .map(|n| 0.5 * (1.0 - (std::f64::consts::TAU * n as f64 / win as f64).cos()))
        .collect();

    let frames = crate::exec::map_indices(n_frames, |f| {
        let start = f * hop;
        let mut re = vec![0.0f64; n_fft];
        let mut im = vec![0.0f64; n_fft];
        for i in 0..win {
            re[i] = waveform[start + i] as f64 * window[i];
        }
        fft(&mut re, &mut im);
        let power: Vec<f64> = (0..n_bins).map(|b| re[b] * re[b] + im[b] * im[b]).collect();
        filters
            .iter()
            .map(|filt| {
                let mel: f64 = filt.iter().zip(&power).map(|(w, p)| w * p).sum();
                (mel + LOG_FLOOR).ln() as f32
            })
            .collect::<Vec<f32>>()
    });

    let mut data = Vec::with_capacity(n_frames * cfg.n_mels);
    for f in frames {
        data.extend_from_slice(&f);
    }
    Tensor::new(vec![n_frames, cfg.n_mels], data)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn silence_hits_the_log_floor() {
        let wav = vec![0.0f32; 1600];
        let out = logmel(&wav, 16000, &LogMelConfig::default()).unwrap();
        let expected = (1e-10f64).ln() as f32;
        for &v in out.data() {
            assert!((v - expected).abs() < 1e-6);
        }
    }

    #[test]
    fn frame_count_formula() {
        // 1 s at 16 kHz with 25/10 ms framing: 1 + (16000-400)/160 = 98.
        let wav = vec![0.0f32; 16000];
        let out = logmel(&wav, 16000, &LogMelConfig::default()).unwrap();
        assert_eq!(out.rows(), 98);
        assert_eq!(out.cols(), 23);
    }

    #[test]
    fn frame_count_formula_holds_generally() {
        for (len, win_ms, hop_ms) in [(400usize, 25.0, 10.0), (1000, 20.0, 5.0), (4321, 25.0, 10.0)]
        {
            let sr = 16000u32;
            let win = (win_ms * sr as f64 / 1000.0).round() as usize;
            let hop = (hop_ms * sr as f64 / 1000.0).round() as usize;
            if len < win {
                continue;
            }
            let cfg = LogMelConfig {
                win_ms,
                hop_ms,
                ..LogMelConfig::default()
            };
            let out = logmel(&vec![0.0f32; len], sr, &cfg).unwrap();
            assert_eq!(out.rows(), 1 + (len - win) / hop);
        }
    }

    #[test]
    fn too_short_waveform_errors() {
        assert!(logmel(&[0.0f32; 100], 16000, &LogMelConfig::default()).is_err());
    }

    #[test]
    fn pure_tone_peaks_at_nearest_mel_center() {
        let sr = 16000u32;
        let freq = 1000.0f64;
        let wav: Vec<f32> = (0..16000)
            .map(|i| (std::f64::consts::TAU * freq * i as f64 / sr as f64).sin() as f32)
            .collect();
        let cfg = LogMelConfig::default();
        let out = logmel(&wav, sr, &cfg).unwrap();
        // Independent reference: which filter center is nearest 1 kHz?
        let centers = mel_center_frequencies(&cfg, sr);
        let expected = centers
            .iter()
            .enumerate()
            .min_by(|a, b| {
                (a.1 - freq)
                    .abs()
                    .partial_cmp(&(b.1 - freq).abs())
                    .unwrap()
            })
            .unwrap()
            .0;
        // Use a middle frame to avoid onset effects.
        let frame = out.row(out.rows() / 2);
        let argmax = frame
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
            .unwrap()
            .0;
        assert_eq!(argmax, expected);
    }

    #[test]
    fn fft_matches_naive_dft() {
        let n = 64usize;
        let mut r = crate::rng::derive(3, &[crate::rng::TAG_SYNTH]);
        let signal: Vec<f64> = (0..n).map(|_| crate::rng::normal(&mut r)).collect();
        let mut re = signal.clone();
        let mut im = vec![0.0f64; n];
        fft(&mut re, &mut im);
        for k in 0..n {
            let (mut sr, mut si) = (0.0f64, 0.0f64);
            for (t, &x) in signal.iter().enumerate() {
                let ang = -std::f64::consts::TAU * k as f64 * t as f64 / n as f64;
                sr += x * ang.cos();
                si += x * ang.sin();
            }
            assert!((re[k] - sr).abs() < 1e-9, "bin {k} re");
            assert!((im[k] - si).abs() < 1e-9, "bin {k} im");
        }
    }
}
