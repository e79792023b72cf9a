//! Deterministic synthetic call corpora with cohort-specific acoustics.
//!
//! Each file alternates harmonic tone bursts and noise bursts in a fixed
//! 100 ms cycle. The tone share of the cycle is the profile's vowel ratio
//! shifted by the file's sentiment label, which makes labels recoverable
//! from transcripts.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::audio::{save_wav, SampleFormat, Waveform, CANONICAL_RATE};
use crate::error::{Error, Result};
use crate::rng::{substream, uniform, Purpose, StreamRng};
use crate::text::{labels_csv, Sentiment};

pub const MANIFEST_FORMAT_VERSION: u32 = 1;

/// Burst cycle length in samples.
pub const CYCLE: usize = 1_600;

/// Tone-share offset per label, in class order.
pub const LABEL_TONE_OFFSET: [f64; 3] = [-0.3, 0.0, 0.3];

pub const NOISE_LEVEL: f64 = 0.05;

const HARMONIC_AMPS: [f64; 4] = [1.0, 0.5, 0.25, 0.125];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CohortTag {
    Stressed,
    Relaxed,
    Healthy,
    Unhealthy,
}

impl CohortTag {
    pub const ALL: [CohortTag; 4] = [CohortTag::Stressed, CohortTag::Relaxed, CohortTag::Healthy, CohortTag::Unhealthy];

    pub fn as_str(self) -> &'static str {
        match self {
            CohortTag::Stressed => "stressed",
            CohortTag::Relaxed => "relaxed",
            CohortTag::Healthy => "healthy",
            CohortTag::Unhealthy => "unhealthy",
        }
    }
}

impl fmt::Display for CohortTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for CohortTag {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|t| t.as_str() == s)
            .ok_or_else(|| Error::InvalidProfile(format!("unknown cohort {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CohortProfile {
    pub name: CohortTag,
    /// Fundamental range in Hz, drawn uniformly per file.
    pub pitch_range: (f64, f64),
    /// Tone share of each burst cycle for a neutral file.
    pub vowel_ratio: f64,
    /// Tone weight inside tone bursts; the rest is noise.
    pub harmonicity: f64,
    /// File duration range in seconds.
    pub call_length_range: (f64, f64),
    /// Label probabilities in class order (negative, neutral, positive).
    pub label_weights: [f64; 3],
}

impl CohortProfile {
    pub fn preset(name: CohortTag) -> Self {
        let (pitch_range, vowel_ratio, label_weights) = match name {
            CohortTag::Stressed => ((480.0, 500.0), 0.45, [0.6, 0.3, 0.1]),
            CohortTag::Relaxed => ((480.0, 520.0), 0.6, [0.1, 0.3, 0.6]),
            CohortTag::Healthy => ((400.0, 450.0), 0.55, [0.2, 0.5, 0.3]),
            CohortTag::Unhealthy => ((600.0, 700.0), 0.4, [0.5, 0.35, 0.15]),
        };
        Self { name, pitch_range, vowel_ratio, harmonicity: 0.9, call_length_range: (1.0, 1.5), label_weights }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidProfile(m));
        let (lo, hi) = self.pitch_range;
        if !(100.0..=2000.0).contains(&lo) || !(100.0..=2000.0).contains(&hi) || lo > hi {
            return bad(format!("pitch range [{lo}, {hi}] outside [100, 2000]"));
        }
        if !(0.0..=1.0).contains(&self.vowel_ratio) || !(0.0..=1.0).contains(&self.harmonicity) {
            return bad("vowel ratio and harmonicity must lie in [0, 1]".into());
        }
        let (a, b) = self.call_length_range;
        if !(a > 0.0 && a <= b && b.is_finite()) {
            return bad(format!("call length range [{a}, {b}] invalid"));
        }
        if self.label_weights.iter().any(|w| !(*w >= 0.0)) || self.label_weights.iter().sum::<f64>() <= 0.0 {
            return bad("label weights must be nonnegative with a positive sum".into());
        }
        Ok(())
    }

    /// Tone share for a file carrying `label`.
    pub fn tone_fraction(&self, label: Sentiment) -> f64 {
        (self.vowel_ratio + LABEL_TONE_OFFSET[label.index()]).clamp(0.05, 0.95)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthFile {
    pub samples: Vec<f64>,
    pub label: Sentiment,
    pub fundamental_hz: f64,
    pub tone_fraction: f64,
}

fn draw_label(weights: &[f64; 3], rng: &mut StreamRng) -> Sentiment {
    let total: f64 = weights.iter().sum();
    let u = rng.random::<f64>() * total;
    let mut acc = 0.0;
    for (i, w) in weights.iter().enumerate() {
        acc += w;
        if u < acc {
            return Sentiment::ALL[i];
        }
    }
    // only reachable through rounding at the top of the range
    Sentiment::ALL[weights.iter().rposition(|w| *w > 0.0).unwrap_or(2)]
}

/// File `index` of a corpus. Depends only on `(profile, seed, index)`.
pub fn synthesize(profile: &CohortProfile, seed: u64, index: usize) -> SynthFile {
    let mut rng = substream(seed, Purpose::Synth, index as u64);
    let label = draw_label(&profile.label_weights, &mut rng);
    let f0 = uniform(&mut rng, profile.pitch_range.0, profile.pitch_range.1);
    let secs = uniform(&mut rng, profile.call_length_range.0, profile.call_length_range.1);
    let len = (secs * CANONICAL_RATE as f64).round() as usize;
    let phase0 = rng.random_range(0..CYCLE);
    let phases: Vec<f64> = (0..HARMONIC_AMPS.len()).map(|_| uniform(&mut rng, 0.0, std::f64::consts::TAU)).collect();
    let tone_fraction = profile.tone_fraction(label);
    let tone_len = (tone_fraction * CYCLE as f64).round() as usize;
    let norm: f64 = HARMONIC_AMPS.iter().sum();
    let h = profile.harmonicity;
    let samples = (0..len)
        .map(|t| {
            let noise = uniform(&mut rng, -1.0, 1.0);
            if (t + phase0) % CYCLE < tone_len {
                let time = t as f64 / CANONICAL_RATE as f64;
                let tone: f64 = HARMONIC_AMPS
                    .iter()
                    .zip(&phases)
                    .enumerate()
                    .map(|(k, (a, p))| a * (std::f64::consts::TAU * f0 * (k + 1) as f64 * time + p).sin())
                    .sum::<f64>()
                    / norm;
                0.6 * (h * tone + (1.0 - h) * noise)
            } else {
                NOISE_LEVEL * noise
            }
        })
        .collect();
    SynthFile { samples, label, fundamental_hz: f0, tone_fraction }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub file: String,
    pub label: Sentiment,
    pub fundamental_hz: f64,
    pub tone_fraction: f64,
    pub samples: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthManifest {
    pub format_version: u32,
    pub seed: u64,
    pub count: usize,
    pub profile: CohortProfile,
    pub files: Vec<ManifestEntry>,
}

pub fn file_stem(index: usize) -> String {
    format!("{index:05}")
}

/// Writes `<out>/<profile>/<index>.wav`, `labels.csv` and `manifest.json`
/// and returns the cohort directory.
pub fn generate(profile: &CohortProfile, count: usize, seed: u64, out: &Path, workers: usize) -> Result<PathBuf> {
    profile.validate()?;
    if count == 0 {
        return Err(Error::InvalidProfile("count must be at least 1".into()));
    }
    let dir = out.join(profile.name.as_str());
    std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    let pool = crate::worker_pool(workers)?;
    let entries: Vec<ManifestEntry> = pool.install(|| {
        (0..count)
            .into_par_iter()
            .map(|i| {
                let f = synthesize(profile, seed, i);
                let name = format!("{}.wav", file_stem(i));
                let wave = Waveform::mono(f.samples, CANONICAL_RATE)?;
                save_wav(dir.join(&name), &wave, SampleFormat::Pcm16)?;
                Ok(ManifestEntry {
                    file: name,
                    label: f.label,
                    fundamental_hz: f.fundamental_hz,
                    tone_fraction: f.tone_fraction,
                    samples: wave.len(),
                })
            })
            .collect::<Result<_>>()
    })?;
    let labels = labels_csv(entries.iter().enumerate().map(|(i, e)| (file_stem(i), e.label)));
    let path = dir.join("labels.csv");
    std::fs::write(&path, labels).map_err(|e| Error::io(&path, e))?;
    let manifest = SynthManifest { format_version: MANIFEST_FORMAT_VERSION, seed, count, profile: profile.clone(), files: entries };
    let path = dir.join("manifest.json");
    std::fs::write(&path, serde_json::to_string_pretty(&manifest)? + "\n").map_err(|e| Error::io(&path, e))?;
    Ok(dir)
}
