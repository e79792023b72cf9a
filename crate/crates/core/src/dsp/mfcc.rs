use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::audio::Segment;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Floor applied to mel energies before the logarithm.
pub const LOG_FLOOR: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MfccConfig {
    pub sample_rate: u32,
    pub frame_ms: f64,
    pub hop_ms: f64,
    pub n_mels: usize,
    pub n_coeffs: usize,
    pub low_hz: f64,
    /// Upper filterbank edge; `None` means Nyquist.
    pub high_hz: Option<f64>,
}

impl Default for MfccConfig {
    fn default() -> Self {
        Self {
            sample_rate: 16_000,
            frame_ms: 25.0,
            hop_ms: 10.0,
            n_mels: 26,
            n_coeffs: 13,
            low_hz: 0.0,
            high_hz: None,
        }
    }
}

pub fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

pub fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

/// Triangular mel filters over the one-sided power spectrum.
#[derive(Debug, Clone)]
pub struct MelFilterbank {
    /// `n_mels` rows of `n_fft / 2 + 1` weights.
    weights: Vec<Vec<f64>>,
    centers_hz: Vec<f64>,
}

impl MelFilterbank {
    pub fn new(n_mels: usize, n_fft: usize, sample_rate: u32, low_hz: f64, high_hz: f64) -> Self {
        let n_bins = n_fft / 2 + 1;
        let (lo, hi) = (hz_to_mel(low_hz), hz_to_mel(high_hz));
        let edges: Vec<f64> = (0..n_mels + 2)
            .map(|i| mel_to_hz(lo + (hi - lo) * i as f64 / (n_mels + 1) as f64))
            .collect();
        let bin_hz = sample_rate as f64 / n_fft as f64;
        let weights = (0..n_mels)
            .map(|m| {
                let (left, center, right) = (edges[m], edges[m + 1], edges[m + 2]);
                (0..n_bins)
                    .map(|b| {
                        let f = b as f64 * bin_hz;
                        if f <= left || f >= right {
                            0.0
                        } else if f <= center {
                            (f - left) / (center - left)
                        } else {
                            (right - f) / (right - center)
                        }
                    })
                    .collect()
            })
            .collect();
        Self { weights, centers_hz: edges[1..=n_mels].to_vec() }
    }

    pub fn n_mels(&self) -> usize {
        self.weights.len()
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.weights
    }

    pub fn centers_hz(&self) -> &[f64] {
        &self.centers_hz
    }

    pub fn apply(&self, power: &[f64]) -> Vec<f64> {
        self.weights
            .iter()
            .map(|row| row.iter().zip(power).map(|(w, p)| w * p).sum())
            .collect()
    }
}

/// Orthonormal DCT-II.
pub fn dct_ii(x: &[f64]) -> Vec<f64> {
    let n = x.len() as f64;
    (0..x.len())
        .map(|k| {
            let scale = if k == 0 { (1.0 / n).sqrt() } else { (2.0 / n).sqrt() };
            scale
                * x.iter()
                    .enumerate()
                    .map(|(i, v)| v * (std::f64::consts::PI * k as f64 * (2 * i + 1) as f64 / (2.0 * n)).cos())
                    .sum::<f64>()
        })
        .collect()
}

/// Inverse of [`dct_ii`] (orthonormal DCT-III).
pub fn dct_iii(c: &[f64]) -> Vec<f64> {
    let n = c.len() as f64;
    (0..c.len())
        .map(|i| {
            c.iter()
                .enumerate()
                .map(|(k, v)| {
                    let scale = if k == 0 { (1.0 / n).sqrt() } else { (2.0 / n).sqrt() };
                    scale * v * (std::f64::consts::PI * k as f64 * (2 * i + 1) as f64 / (2.0 * n)).cos()
                })
                .sum()
        })
        .collect()
}

/// Reusable MFCC front end. Tables are immutable once built, so one
/// extractor can be shared across threads.
pub struct MfccExtractor<T: Scalar> {
    config: MfccConfig,
    frame_len: usize,
    hop: usize,
    n_fft: usize,
    window: Vec<T>,
    filterbank: MelFilterbank,
    fft: Arc<dyn Fft<T>>,
}

impl<T: Scalar> MfccExtractor<T> {
    pub fn new(config: MfccConfig) -> Self {
        let rate = config.sample_rate as f64;
        let frame_len = (rate * config.frame_ms / 1000.0).round() as usize;
        let hop = (rate * config.hop_ms / 1000.0).round() as usize;
        let n_fft = frame_len.next_power_of_two();
        let window = (0..frame_len)
            .map(|i| {
                T::lit(0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / frame_len as f64).cos())
            })
            .collect();
        let high = config.high_hz.unwrap_or(rate / 2.0);
        let filterbank = MelFilterbank::new(config.n_mels, n_fft, config.sample_rate, config.low_hz, high);
        let fft = FftPlanner::new().plan_fft_forward(n_fft);
        Self { config, frame_len, hop, n_fft, window, filterbank, fft }
    }

    pub fn config(&self) -> &MfccConfig {
        &self.config
    }

    pub fn filterbank(&self) -> &MelFilterbank {
        &self.filterbank
    }

    pub fn frame_len(&self) -> usize {
        self.frame_len
    }

    pub fn n_frames(&self, len: usize) -> usize {
        if len < self.frame_len {
            0
        } else {
            1 + (len - self.frame_len) / self.hop
        }
    }

    fn check(&self, segment: &Segment<T>) -> Result<usize> {
        let n = self.n_frames(segment.len());
        if n == 0 {
            return Err(Error::SegmentTooShort { needed: self.frame_len, got: segment.len() });
        }
        Ok(n)
    }

    /// One-sided power spectrum of each Hann-windowed frame.
    pub fn power_spectra(&self, segment: &Segment<T>) -> Result<Vec<Vec<f64>>> {
        let n_frames = self.check(segment)?;
        let mut buf = vec![Complex::new(T::zero(), T::zero()); self.n_fft];
        Ok((0..n_frames)
            .map(|f| {
                let start = f * self.hop;
                buf.iter_mut().for_each(|c| *c = Complex::new(T::zero(), T::zero()));
                for (i, (x, w)) in segment.samples[start..start + self.frame_len].iter().zip(&self.window).enumerate() {
                    buf[i].re = *x * *w;
                }
                self.fft.process(&mut buf);
                buf[..self.n_fft / 2 + 1].iter().map(|c| c.norm_sqr().to_f64_lossy()).collect()
            })
            .collect())
    }

    /// Natural-log mel energies per frame, floored at [`LOG_FLOOR`].
    pub fn log_mel(&self, segment: &Segment<T>) -> Result<Vec<Vec<f64>>> {
        Ok(self
            .power_spectra(segment)?
            .iter()
            .map(|p| self.filterbank.apply(p).into_iter().map(|e| e.max(LOG_FLOOR).ln()).collect())
            .collect())
    }

    /// Cepstral coefficient vectors, one per frame.
    pub fn extract(&self, segment: &Segment<T>) -> Result<Vec<Vec<T>>> {
        Ok(self
            .log_mel(segment)?
            .iter()
            .map(|lm| dct_ii(lm).into_iter().take(self.config.n_coeffs).map(T::lit).collect())
            .collect())
    }
}
