//! MFCC extraction: centre-padded framing, periodic Hann window, power
//! spectrum, Slaney-style mel filterbank, decibel log with floor, and an
//! orthonormal DCT-II.

use std::f64::consts::PI;

use rustfft::{num_complex::Complex, FftPlanner};
use serde::{Deserialize, Serialize};

use super::AudioTrack;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MfccConfig {
    pub n_fft: usize,
    pub hop: usize,
    pub n_mels: usize,
    pub n_coeffs: usize,
    /// Power floor applied before taking decibels.
    pub log_floor: f64,
    /// Clip decibels to `max - top_db` over the whole clip.
    pub top_db: Option<f64>,
    pub fmin: f64,
    /// `None` means Nyquist.
    pub fmax: Option<f64>,
}

impl Default for MfccConfig {
    fn default() -> Self {
        MfccConfig {
            n_fft: 2048,
            hop: 512,
            n_mels: 128,
            n_coeffs: 32,
            log_floor: 1e-10,
            top_db: Some(80.0),
            fmin: 0.0,
            fmax: None,
        }
    }
}

impl MfccConfig {
    /// Frames produced for `len` samples: the signal is padded by `n_fft/2`
    /// zeros on each side, then framed without further padding.
    pub fn frame_count(&self, len: usize) -> usize {
        let padded = len + 2 * (self.n_fft / 2);
        1 + (padded - self.n_fft) / self.hop
    }
}

const F_SP: f64 = 200.0 / 3.0;
const MIN_LOG_HZ: f64 = 1000.0;
const MIN_LOG_MEL: f64 = MIN_LOG_HZ / F_SP;

fn log_step() -> f64 {
    6.4f64.ln() / 27.0
}

/// Slaney mel scale: linear below 1 kHz, logarithmic above.
pub fn hz_to_mel(hz: f64) -> f64 {
    if hz >= MIN_LOG_HZ {
        MIN_LOG_MEL + (hz / MIN_LOG_HZ).ln() / log_step()
    } else {
        hz / F_SP
    }
}

pub fn mel_to_hz(mel: f64) -> f64 {
    if mel >= MIN_LOG_MEL {
        MIN_LOG_HZ * (log_step() * (mel - MIN_LOG_MEL)).exp()
    } else {
        F_SP * mel
    }
}

/// Triangular mel filters with area normalization, stored sparsely.
#[derive(Clone, Debug)]
pub struct MelFilterbank {
    /// `(first_bin, weights)` per filter.
    filters: Vec<(usize, Vec<f64>)>,
    /// Filter edge frequencies, `n_mels + 2` entries.
    pub edges_hz: Vec<f64>,
    pub n_bins: usize,
}

impl MelFilterbank {
    pub fn new(sample_rate: f64, n_fft: usize, n_mels: usize, fmin: f64, fmax: f64) -> Self {
        let n_bins = n_fft / 2 + 1;
        let fft_freqs: Vec<f64> = (0..n_bins)
            .map(|i| i as f64 * sample_rate / n_fft as f64)
            .collect();
        let (lo, hi) = (hz_to_mel(fmin), hz_to_mel(fmax));
        let edges_hz: Vec<f64> = (0..n_mels + 2)
            .map(|i| mel_to_hz(lo + (hi - lo) * i as f64 / (n_mels + 1) as f64))
            .collect();
        let filters = (0..n_mels)
            .map(|m| {
                let (left, centre, right) = (edges_hz[m], edges_hz[m + 1], edges_hz[m + 2]);
                let norm = 2.0 / (right - left);
                let dense: Vec<f64> = fft_freqs
                    .iter()
                    .map(|&f| {
                        let lower = (f - left) / (centre - left);
                        let upper = (right - f) / (right - centre);
                        lower.min(upper).max(0.0) * norm
                    })
                    .collect();
                let first = dense.iter().position(|&w| w > 0.0).unwrap_or(0);
                let last = dense.iter().rposition(|&w| w > 0.0).unwrap_or(0);
                (first, dense[first..=last.max(first)].to_vec())
            })
            .collect();
        MelFilterbank {
            filters,
            edges_hz,
            n_bins,
        }
    }

    pub fn n_mels(&self) -> usize {
        self.filters.len()
    }

    /// Centre frequency of filter `m`.
    pub fn centre_hz(&self, m: usize) -> f64 {
        self.edges_hz[m + 1]
    }

    pub fn apply(&self, power: &[f64]) -> Vec<f64> {
        self.filters
            .iter()
            .map(|(first, w)| {
                w.iter()
                    .zip(&power[*first..])
                    .map(|(a, b)| a * b)
                    .sum()
            })
            .collect()
    }
}

fn check_track(track: &AudioTrack, cfg: &MfccConfig) -> Result<()> {
    if track.samples.is_empty() {
        return Err(Error::Input("empty waveform".into()));
    }
    if track.samples.len() < cfg.n_fft {
        return Err(Error::Input(format!(
            "waveform of {} samples is shorter than one {}-sample frame",
            track.samples.len(),
            cfg.n_fft
        )));
    }
    if cfg.hop == 0 || cfg.n_fft == 0 || cfg.n_mels == 0 {
        return Err(Error::Config("n_fft, hop and n_mels must be positive".into()));
    }
    if cfg.n_coeffs == 0 || cfg.n_coeffs > cfg.n_mels {
        return Err(Error::Config(format!(
            "n_coeffs must be in 1..={}, got {}",
            cfg.n_mels, cfg.n_coeffs
        )));
    }
    Ok(())
}

/// Mel power spectrogram, `frames × n_mels`, before the log.
pub fn mel_spectrogram(track: &AudioTrack, cfg: &MfccConfig) -> Result<Tensor<f64>> {
    check_track(track, cfg)?;
    let sr = track.sample_rate as f64;
    let bank = MelFilterbank::new(sr, cfg.n_fft, cfg.n_mels, cfg.fmin, cfg.fmax.unwrap_or(sr / 2.0));
    let pad = cfg.n_fft / 2;
    let mut padded = vec![0.0f64; track.samples.len() + 2 * pad];
    for (d, &s) in padded[pad..].iter_mut().zip(&track.samples) {
        *d = s as f64;
    }
    let window: Vec<f64> = (0..cfg.n_fft)
        .map(|n| 0.5 - 0.5 * (2.0 * PI * n as f64 / cfg.n_fft as f64).cos())
        .collect();
    let frames = cfg.frame_count(track.samples.len());
    let fft = FftPlanner::new().plan_fft_forward(cfg.n_fft);
    let mut buf = vec![Complex::new(0.0, 0.0); cfg.n_fft];
    let mut out = Vec::with_capacity(frames * cfg.n_mels);
    let mut power = vec![0.0; bank.n_bins];
    for f in 0..frames {
        let start = f * cfg.hop;
        for (i, b) in buf.iter_mut().enumerate() {
            *b = Complex::new(padded[start + i] * window[i], 0.0);
        }
        fft.process(&mut buf);
        for (p, c) in power.iter_mut().zip(&buf) {
            *p = c.norm_sqr();
        }
        out.extend(bank.apply(&power));
    }
    Tensor::new(vec![frames, cfg.n_mels], out)
}

/// `10·log10(max(S, floor))`, optionally clipped to `max - top_db`.
pub fn power_to_db(spec: &Tensor<f64>, floor: f64, top_db: Option<f64>) -> Tensor<f64> {
    let mut db = spec.map(|v| 10.0 * v.max(floor).log10());
    if let Some(top) = top_db {
        let max = db.data().iter().copied().fold(f64::NEG_INFINITY, f64::max);
        for v in db.data_mut() {
            *v = v.max(max - top);
        }
    }
    db
}

/// Orthonormal DCT-II of each row, keeping the first `n_coeffs` outputs.
pub fn dct2_ortho(rows: &Tensor<f64>, n_coeffs: usize) -> Tensor<f64> {
    let (r, n) = (rows.shape()[0], rows.shape()[1]);
    let basis: Vec<f64> = (0..n_coeffs)
        .flat_map(|k| {
            let scale = if k == 0 {
                (1.0 / n as f64).sqrt()
            } else {
                (2.0 / n as f64).sqrt()
            };
            (0..n).map(move |i| scale * (PI * k as f64 * (2 * i + 1) as f64 / (2 * n) as f64).cos())
        })
        .collect();
    let mut out = Vec::with_capacity(r * n_coeffs);
    for row in 0..r {
        let x = rows.row(row);
        for k in 0..n_coeffs {
            out.push(
                basis[k * n..(k + 1) * n]
                    .iter()
                    .zip(x)
                    .map(|(b, v)| b * v)
                    .sum(),
            );
        }
    }
    Tensor::new(vec![r, n_coeffs], out).unwrap()
}

/// MFCC matrix, `frames × n_coeffs`.
pub fn mfcc(track: &AudioTrack, cfg: &MfccConfig) -> Result<Tensor<f64>> {
    let mel = mel_spectrogram(track, cfg)?;
    let db = power_to_db(&mel, cfg.log_floor, cfg.top_db);
    Ok(dct2_ortho(&db, cfg.n_coeffs))
}
