//! Rational-ratio polyphase resampler with a Kaiser-windowed sinc kernel.

use crate::scalar::Scalar;

pub const KAISER_BETA: f64 = 8.6;
pub const TAPS_PER_PHASE: usize = 64;

/// Cutoff relative to the lower of the two Nyquist frequencies.
const ROLLOFF: f64 = 0.94;

fn gcd(mut a: u64, mut b: u64) -> u64 {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

/// Zeroth-order modified Bessel function of the first kind (power series).
fn bessel_i0(x: f64) -> f64 {
    let half = x / 2.0;
    let mut term = 1.0;
    let mut sum = 1.0;
    for k in 1..200 {
        term *= (half / k as f64) * (half / k as f64);
        sum += term;
        if term < sum * 1e-17 {
            break;
        }
    }
    sum
}

fn sinc(x: f64) -> f64 {
    if x == 0.0 {
        1.0
    } else {
        let px = std::f64::consts::PI * x;
        px.sin() / px
    }
}

/// Polyphase filter bank for converting `from_rate` to `to_rate`.
///
/// Output sample `n` sits at input position `n * down / up`; its phase is
/// `(n * down) mod up` and each phase owns `TAPS_PER_PHASE` coefficients.
#[derive(Debug, Clone)]
pub struct PolyphaseResampler<T> {
    up: u64,
    down: u64,
    /// `up` rows of `TAPS_PER_PHASE` taps, each row normalized to unit DC gain.
    bank: Vec<T>,
}

impl<T: Scalar> PolyphaseResampler<T> {
    pub fn new(from_rate: u32, to_rate: u32) -> Self {
        assert!(from_rate > 0 && to_rate > 0, "sample rates must be positive");
        let g = gcd(from_rate as u64, to_rate as u64);
        let up = to_rate as u64 / g;
        let down = from_rate as u64 / g;
        let cutoff = ROLLOFF * (up as f64 / down as f64).min(1.0);
        let half = (TAPS_PER_PHASE / 2) as f64;
        let denom = bessel_i0(KAISER_BETA);
        let mut bank = Vec::with_capacity(up as usize * TAPS_PER_PHASE);
        for phase in 0..up {
            let frac = phase as f64 / up as f64;
            let taps: Vec<f64> = (0..TAPS_PER_PHASE)
                .map(|j| {
                    // tap j multiplies input sample floor(t) + j - (half - 1)
                    let x = j as f64 - (half - 1.0) - frac;
                    let r = x / half;
                    let window = if r.abs() >= 1.0 {
                        0.0
                    } else {
                        bessel_i0(KAISER_BETA * (1.0 - r * r).sqrt()) / denom
                    };
                    cutoff * sinc(cutoff * x) * window
                })
                .collect();
            let sum: f64 = taps.iter().sum();
            bank.extend(taps.iter().map(|t| T::lit(t / sum)));
        }
        Self { up, down, bank }
    }

    /// Number of output samples for `len` input samples (ceiling of the
    /// scaled duration).
    pub fn output_len(&self, len: usize) -> usize {
        ((len as u64 * self.up).div_ceil(self.down)) as usize
    }

    pub fn process(&self, input: &[T]) -> Vec<T> {
        let n_out = self.output_len(input.len());
        let offset = TAPS_PER_PHASE as i64 / 2 - 1;
        let mut out = Vec::with_capacity(n_out);
        for n in 0..n_out as u64 {
            let pos = n * self.down;
            let base = (pos / self.up) as i64 - offset;
            let phase = (pos % self.up) as usize;
            let taps = &self.bank[phase * TAPS_PER_PHASE..(phase + 1) * TAPS_PER_PHASE];
            let mut acc = T::zero();
            for (j, &h) in taps.iter().enumerate() {
                let idx = base + j as i64;
                if idx >= 0 && (idx as usize) < input.len() {
                    acc += h * input[idx as usize];
                }
            }
            out.push(acc);
        }
        out
    }
}

/// One-shot resampling; returns the input unchanged when rates match.
pub fn resample<T: Scalar>(input: &[T], from_rate: u32, to_rate: u32) -> Vec<T> {
    if from_rate == to_rate {
        return input.to_vec();
    }
    PolyphaseResampler::new(from_rate, to_rate).process(input)
}
