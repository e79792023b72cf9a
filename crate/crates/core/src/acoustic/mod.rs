//! Self-supervised acoustic encoder: strided convolutions, product
//! quantization, masked contrastive pretraining and letter transcription.

pub mod alphabet;
pub mod contrastive;
pub mod masking;
pub mod model;
pub mod pretrain;
pub mod quantizer;

pub use alphabet::{Alphabet, Symbol, BLANK_CHAR, CONSONANTS, VOWELS};
pub use contrastive::contrastive_loss;
pub use masking::{span_mask, SpanMask};
pub use model::{AcousticConfig, AcousticModel};
pub use pretrain::{codebook_usage_entropy, loss_curve_csv, EpochLoss, PretrainConfig};
pub use quantizer::{code_probability_sums, diversity_penalty, diversity_share, quantize_graph, Codebooks, QuantizeMode, QuantizedUnits, QuantizerOutput};

use crate::neural::Tensor;

/// `(kernel, stride)` per convolution layer; hop of 320 samples at 16 kHz.
pub const STRIDE_SCHEDULE: [(usize, usize); 7] = [(10, 5), (3, 2), (3, 2), (3, 2), (3, 2), (2, 2), (2, 2)];

/// Frames produced by `schedule` for an input of `len` samples; `None` once
/// a layer's input is shorter than its kernel.
pub fn frames_for_len(len: usize, schedule: &[(usize, usize)]) -> Option<usize> {
    schedule.iter().try_fold(len, |l, &(k, s)| if l < k { None } else { Some((l - k) / s + 1) })
}

/// Samples seen by one output frame.
pub fn receptive_field(schedule: &[(usize, usize)]) -> usize {
    let mut field = 1;
    let mut jump = 1;
    for &(k, s) in schedule {
        field += (k - 1) * jump;
        jump *= s;
    }
    field
}

pub fn hop(schedule: &[(usize, usize)]) -> usize {
    schedule.iter().map(|&(_, s)| s).product()
}

#[derive(Debug, Clone, PartialEq)]
pub struct LatentFrames {
    /// `F x d_latent`.
    pub frames: Tensor<f64>,
    /// Frames per second.
    pub frame_rate: f64,
    pub receptive_field: usize,
}

impl LatentFrames {
    pub fn len(&self) -> usize {
        self.frames.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    // frame count composed one layer at a time
    fn by_hand(mut l: i64) -> i64 {
        for (k, s) in [(10, 5), (3, 2), (3, 2), (3, 2), (3, 2), (2, 2), (2, 2)] {
            l = (l - k).div_euclid(s) + 1;
            if l <= 0 {
                return 0;
            }
        }
        l
    }

    #[test]
    fn canonical_frame_counts() {
        assert_eq!(frames_for_len(16_000, &STRIDE_SCHEDULE), Some(49));
        assert_eq!(frames_for_len(3_200, &STRIDE_SCHEDULE), Some(9));
        assert_eq!(frames_for_len(300, &STRIDE_SCHEDULE), None);
        assert_eq!(receptive_field(&STRIDE_SCHEDULE), 400);
        assert_eq!(hop(&STRIDE_SCHEDULE), 320);
    }

    proptest! {
        #[test]
        fn matches_layerwise_formula(len in 0usize..40_000) {
            prop_assert_eq!(frames_for_len(len, &STRIDE_SCHEDULE).unwrap_or(0) as i64, by_hand(len as i64));
        }
    }
}
