//! Character-level transformer over phonetic transcripts.

pub mod labels;
pub mod model;
pub mod tokenizer;
pub mod train;

pub use labels::{labels_csv, load_labels, parse_labels, Sentiment};
pub use model::{SentimentResult, TextConfig, TextModel};
pub use tokenizer::{detokenize, mlm_corrupt, tokenize, TokenSequence, VOCAB_SIZE};
pub use train::{mlm_curve_csv, ClassifierConfig, EpochMetrics, MlmConfig, MlmEpoch, TrainingCurve};

use serde::{Deserialize, Serialize};

/// Uppercased letter runs separated by spaces.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PhoneticTranscript {
    pub text: String,
    pub source: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cohort: Option<String>,
}

impl PhoneticTranscript {
    pub fn new(text: impl AsRef<str>, source: impl Into<String>) -> Self {
        Self { text: text.as_ref().to_ascii_uppercase(), source: source.into(), cohort: None }
    }

    pub fn with_cohort(mut self, cohort: impl Into<String>) -> Self {
        self.cohort = Some(cohort.into());
        self
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabeledTranscript {
    pub transcript: PhoneticTranscript,
    pub label: Sentiment,
}
