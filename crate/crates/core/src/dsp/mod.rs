//! Classical signal features: autocorrelation pitch, pitch histograms and MFCCs.

mod histogram;
mod mfcc;
mod pitch;

pub use histogram::Histogram;
pub use mfcc::{dct_ii, dct_iii, hz_to_mel, mel_to_hz, MelFilterbank, MfccConfig, MfccExtractor, LOG_FLOOR};
pub use pitch::{estimate_pitch, normalized_autocorrelation, PitchConfig, PitchEstimate};
