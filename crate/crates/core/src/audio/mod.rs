//! Audio front end: WAV I/O, downmix and resampling to the canonical
//! 16 kHz mono form, and fixed-count segmentation.

mod resample;
mod wav;

pub use resample::{resample, PolyphaseResampler, KAISER_BETA, TAPS_PER_PHASE};
pub use wav::{load_wav, read_wav, save_wav, write_wav, SampleFormat};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Canonical pipeline sample rate in Hz.
pub const CANONICAL_RATE: u32 = 16_000;

/// Default number of segments per file.
pub const DEFAULT_SEGMENTS: usize = 32;

/// Multichannel sampled audio.
#[derive(Debug, Clone, PartialEq)]
pub struct Waveform<T> {
    channels: Vec<Vec<T>>,
    sample_rate: u32,
}

impl<T: Scalar> Waveform<T> {
    /// Builds a waveform, checking rate, channel lengths and finiteness.
    pub fn new(channels: Vec<Vec<T>>, sample_rate: u32) -> Result<Self> {
        if sample_rate == 0 {
            return Err(Error::InvalidWaveform("sample rate must be positive".into()));
        }
        if channels.is_empty() {
            return Err(Error::InvalidWaveform("no channels".into()));
        }
        let len = channels[0].len();
        if channels.iter().any(|c| c.len() != len) {
            return Err(Error::InvalidWaveform("channel lengths differ".into()));
        }
        if channels.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::InvalidWaveform("non-finite sample".into()));
        }
        Ok(Self { channels, sample_rate })
    }

    pub fn mono(samples: Vec<T>, sample_rate: u32) -> Result<Self> {
        Self::new(vec![samples], sample_rate)
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn num_channels(&self) -> usize {
        self.channels.len()
    }

    /// Samples per channel.
    pub fn len(&self) -> usize {
        self.channels[0].len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn channel(&self, idx: usize) -> &[T] {
        &self.channels[idx]
    }

    pub fn channels(&self) -> &[Vec<T>] {
        &self.channels
    }

    pub fn duration_secs(&self) -> f64 {
        self.len() as f64 / self.sample_rate as f64
    }

    pub fn is_canonical(&self) -> bool {
        self.num_channels() == 1 && self.sample_rate == CANONICAL_RATE
    }

    pub fn into_channels(self) -> Vec<Vec<T>> {
        self.channels
    }

    /// Arithmetic mean of all channels.
    pub fn downmix(&self) -> Vec<T> {
        if self.channels.len() == 1 {
            return self.channels[0].clone();
        }
        let n = T::from_usize_lossy(self.channels.len());
        (0..self.len())
            .map(|i| self.channels.iter().fold(T::zero(), |acc, c| acc + c[i]) / n)
            .collect()
    }

    /// Downmix and resample to 16 kHz mono. A waveform already in canonical
    /// form is returned unchanged, which makes the operation idempotent.
    pub fn to_mono_16k(&self) -> Waveform<T> {
        let mono = self.downmix();
        let samples = if self.sample_rate == CANONICAL_RATE {
            mono
        } else {
            resample(&mono, self.sample_rate, CANONICAL_RATE)
        };
        Waveform { channels: vec![samples], sample_rate: CANONICAL_RATE }
    }

    /// Splits canonical audio into `n` contiguous segments. With
    /// `len = q * n + r`, segments `0..r` carry `q + 1` samples.
    pub fn segment(&self, n: usize, source_id: &str) -> Result<Vec<Segment<T>>> {
        if !self.is_canonical() {
            return Err(Error::InvalidWaveform("segmentation expects 16 kHz mono".into()));
        }
        let samples = &self.channels[0];
        let parts = split_counts(samples.len(), n)?;
        let mut start = 0;
        Ok(parts
            .into_iter()
            .enumerate()
            .map(|(index, len)| {
                let seg = Segment {
                    samples: samples[start..start + len].to_vec(),
                    sample_rate: self.sample_rate,
                    index,
                    source_id: source_id.to_string(),
                };
                start += len;
                seg
            })
            .collect())
    }
}

/// Segment lengths for `len` samples in `n` parts, remainder front-loaded.
pub fn split_counts(len: usize, n: usize) -> Result<Vec<usize>> {
    if n == 0 || len < n {
        return Err(Error::InsufficientLength { needed: n.max(1), got: len });
    }
    let (q, r) = (len / n, len % n);
    Ok((0..n).map(|i| if i < r { q + 1 } else { q }).collect())
}

/// A mono slice of a canonical waveform.
#[derive(Debug, Clone, PartialEq)]
pub struct Segment<T> {
    pub samples: Vec<T>,
    pub sample_rate: u32,
    pub index: usize,
    pub source_id: String,
}

impl<T: Scalar> Segment<T> {
    pub fn new(samples: Vec<T>, sample_rate: u32, index: usize, source_id: impl Into<String>) -> Self {
        Self { samples, sample_rate, index, source_id: source_id.into() }
    }

    /// Wraps a whole canonical signal as segment 0.
    pub fn whole(samples: Vec<T>, source_id: impl Into<String>) -> Self {
        Self::new(samples, CANONICAL_RATE, 0, source_id)
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn even_segmentation() {
        let w = Waveform::mono(vec![0.0f64; 3200], CANONICAL_RATE).unwrap();
        let segs = w.segment(32, "f").unwrap();
        assert_eq!(segs.len(), 32);
        assert!(segs.iter().all(|s| s.len() == 100));
        assert_eq!(segs[31].index, 31);
    }

    #[test]
    fn remainder_goes_to_leading_segments() {
        let w = Waveform::mono(vec![0.0f64; 3205], CANONICAL_RATE).unwrap();
        let segs = w.segment(32, "f").unwrap();
        for (i, s) in segs.iter().enumerate() {
            assert_eq!(s.len(), if i < 5 { 101 } else { 100 }, "segment {i}");
        }
    }

    #[test]
    fn too_short_for_segment_count() {
        let w = Waveform::mono(vec![0.0f64; 31], CANONICAL_RATE).unwrap();
        assert!(matches!(w.segment(32, "f"), Err(Error::InsufficientLength { needed: 32, got: 31 })));
    }

    #[test]
    fn rejects_bad_waveforms() {
        assert!(Waveform::<f64>::new(vec![vec![0.0; 3], vec![0.0; 2]], 8000).is_err());
        assert!(Waveform::<f64>::mono(vec![f64::NAN], 8000).is_err());
        assert!(Waveform::<f64>::mono(vec![0.0], 0).is_err());
    }

    #[test]
    fn two_to_one_decimation_length() {
        let w = Waveform::mono(vec![0.25f64; 3200], 32_000).unwrap();
        let c = w.to_mono_16k();
        assert_eq!(c.len(), 1600);
        assert_eq!(c.sample_rate(), 16_000);
    }

    #[test]
    fn identical_stereo_channels_downmix_to_shared_channel() {
        let ch: Vec<f64> = (0..1000).map(|i| (i as f64 * 0.01).sin() * 0.7).collect();
        let w = Waveform::new(vec![ch.clone(), ch.clone()], CANONICAL_RATE).unwrap();
        let m = w.to_mono_16k();
        assert_eq!(m.num_channels(), 1);
        for (a, b) in m.channel(0).iter().zip(&ch) {
            assert!((a - b).abs() <= 1e-12);
        }
    }

    #[test]
    fn works_in_single_precision() {
        let w = Waveform::new(vec![vec![0.5f32; 441], vec![-0.5f32; 441]], 44_100).unwrap();
        let c = w.to_mono_16k();
        assert_eq!(c.len(), 160);
        assert!(c.channel(0).iter().all(|v| v.abs() < 1e-6));
    }

    proptest! {
        #[test]
        fn segments_concatenate_to_source(len in 32usize..5000, n in 1usize..40) {
            prop_assume!(len >= n);
            let samples: Vec<f64> = (0..len).map(|i| (i as f64).cos()).collect();
            let w = Waveform::mono(samples.clone(), CANONICAL_RATE).unwrap();
            let segs = w.segment(n, "p").unwrap();
            prop_assert_eq!(segs.len(), n);
            let joined: Vec<f64> = segs.iter().flat_map(|s| s.samples.iter().copied()).collect();
            prop_assert_eq!(joined, samples);
        }

        #[test]
        fn canonicalization_is_idempotent(len in 100usize..3000, rate in prop::sample::select(vec![8000u32, 22050, 32000, 44100, 48000])) {
            let samples: Vec<f64> = (0..len).map(|i| ((i * 7919) % 200) as f64 / 200.0 - 0.5).collect();
            let w = Waveform::new(vec![samples.clone(), samples], rate).unwrap();
            let once = w.to_mono_16k();
            let twice = once.to_mono_16k();
            prop_assert_eq!(once, twice);
        }
    }
}
