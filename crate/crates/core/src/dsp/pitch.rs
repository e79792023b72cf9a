use serde::{Deserialize, Serialize};

use crate::audio::Segment;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PitchConfig {
    pub min_hz: f64,
    pub max_hz: f64,
    /// Minimum normalized autocorrelation for a voiced decision.
    pub voicing_threshold: f64,
    /// Candidate peaks within this fraction of the best peak compete on
    /// lag; the shortest lag wins so octave-down errors are avoided.
    pub peak_ratio: f64,
}

impl Default for PitchConfig {
    fn default() -> Self {
        Self { min_hz: 100.0, max_hz: 2000.0, voicing_threshold: 0.5, peak_ratio: 0.9 }
    }
}

/// Fundamental frequency estimate for one segment.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PitchEstimate {
    /// Hz, or `None` when unvoiced.
    pub hz: Option<f64>,
    /// Height of the selected normalized autocorrelation peak, in `[0, 1]`.
    pub periodicity: f64,
}

impl PitchEstimate {
    pub fn unvoiced(periodicity: f64) -> Self {
        Self { hz: None, periodicity }
    }

    pub fn voiced(hz: f64, periodicity: f64) -> Self {
        Self { hz: Some(hz), periodicity }
    }

    pub fn is_voiced(&self) -> bool {
        self.hz.is_some()
    }
}

/// `r(lag) = sum x[i] x[i+lag] / sqrt(sum x[i]^2 * sum x[i+lag]^2)` over the
/// overlapping range; zero when either window carries no energy.
pub fn normalized_autocorrelation<T: Scalar>(x: &[T], lag: usize) -> f64 {
    if lag >= x.len() {
        return 0.0;
    }
    let (head, tail) = (&x[..x.len() - lag], &x[lag..]);
    let (mut cross, mut e0, mut e1) = (0.0f64, 0.0f64, 0.0f64);
    for (a, b) in head.iter().zip(tail) {
        let (a, b) = (a.to_f64_lossy(), b.to_f64_lossy());
        cross += a * b;
        e0 += a * a;
        e1 += b * b;
    }
    let denom = (e0 * e1).sqrt();
    if denom <= f64::MIN_POSITIVE {
        0.0
    } else {
        cross / denom
    }
}

/// Autocorrelation pitch estimate with parabolic refinement of the peak lag.
pub fn estimate_pitch<T: Scalar>(segment: &Segment<T>, config: &PitchConfig) -> Result<PitchEstimate> {
    let rate = segment.sample_rate as f64;
    let max_lag = (rate / config.min_hz).ceil() as usize;
    let min_lag = ((rate / config.max_hz).floor() as usize).max(2);
    let needed = 2 * max_lag;
    if segment.len() < needed {
        return Err(Error::SegmentTooShort { needed, got: segment.len() });
    }
    let x = &segment.samples;
    let r: Vec<f64> = (0..=max_lag + 1).map(|lag| normalized_autocorrelation(x, lag)).collect();

    let is_peak = |lag: usize| r[lag] >= r[lag - 1] && r[lag] >= r[lag + 1] && r[lag] > 0.0;
    let best = (min_lag..=max_lag).filter(|&l| is_peak(l)).map(|l| r[l]).fold(0.0, f64::max);
    if best <= 0.0 {
        return Ok(PitchEstimate::unvoiced(0.0));
    }
    let lag = (min_lag..=max_lag)
        .find(|&l| is_peak(l) && r[l] >= config.peak_ratio * best)
        .expect("best peak exists");
    let periodicity = r[lag].clamp(0.0, 1.0);
    if periodicity < config.voicing_threshold {
        return Ok(PitchEstimate::unvoiced(periodicity));
    }
    let (a, b, c) = (r[lag - 1], r[lag], r[lag + 1]);
    let curvature = a - 2.0 * b + c;
    let shift = if curvature.abs() > 1e-15 { (0.5 * (a - c) / curvature).clamp(-0.5, 0.5) } else { 0.0 };
    let hz = (rate / (lag as f64 + shift)).clamp(config.min_hz, config.max_hz);
    Ok(PitchEstimate::voiced(hz, periodicity))
}
