use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::rng::StreamRng;

/// Frames hidden from the context network during pretraining.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SpanMask {
    pub masked: Vec<bool>,
    /// Merged `(start, length)` runs, ascending and non-touching.
    pub spans: Vec<(usize, usize)>,
}

impl SpanMask {
    pub fn none(frames: usize) -> Self {
        Self { masked: vec![false; frames], spans: Vec::new() }
    }

    pub fn from_flags(masked: Vec<bool>) -> Self {
        let mut spans = Vec::new();
        let mut t = 0;
        while t < masked.len() {
            if masked[t] {
                let start = t;
                while t < masked.len() && masked[t] {
                    t += 1;
                }
                spans.push((start, t - start));
            } else {
                t += 1;
            }
        }
        Self { masked, spans }
    }

    pub fn len(&self) -> usize {
        self.masked.len()
    }

    pub fn is_empty(&self) -> bool {
        self.masked.is_empty()
    }

    pub fn count(&self) -> usize {
        self.masked.iter().filter(|&&m| m).count()
    }

    pub fn indices(&self) -> Vec<usize> {
        self.masked.iter().enumerate().filter(|(_, &m)| m).map(|(i, _)| i).collect()
    }
}

/// Every frame independently starts a span of `span` frames with
/// probability `p`; spans are clipped at the end and merged.
pub fn span_mask(frames: usize, p: f64, span: usize, rng: &mut StreamRng) -> SpanMask {
    assert!(span >= 1, "span length must be at least 1");
    assert!((0.0..=1.0).contains(&p), "start probability outside [0, 1]");
    let mut masked = vec![false; frames];
    for t in 0..frames {
        if rng.random::<f64>() < p {
            masked[t..(t + span).min(frames)].iter_mut().for_each(|m| *m = true);
        }
    }
    SpanMask::from_flags(masked)
}
