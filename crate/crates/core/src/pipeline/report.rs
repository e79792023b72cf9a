use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::PipelineConfig;
use crate::analytics::{
    frequency, is_vowel, wordcloud_weights, CohortDelta, CohortSummary, FrequencyTable, PhoneticCounts, Scope,
    SentimentDistribution,
};
use crate::dsp::{Histogram, PitchEstimate};
use crate::error::{Error, Result};
use crate::text::{Sentiment, SentimentResult, TrainingCurve};

pub const REPORT_FORMAT_VERSION: u32 = 1;

/// How transcripts were normalized before counting.
pub const NORMALIZATION: &str = "uppercase";

/// Pretty JSON with object keys in lexicographic order at every level.
pub fn sorted_json<T: Serialize>(value: &T) -> String {
    let v = serde_json::to_value(value).expect("report values serialize");
    let mut s = serde_json::to_string_pretty(&v).expect("json values serialize");
    s.push('\n');
    s
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentRecord {
    pub index: usize,
    pub pitch: PitchEstimate,
    pub transcript: String,
    pub sentiment: SentimentResult,
    pub phonetics: PhoneticCounts,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mfcc: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileRecord {
    pub path: String,
    /// Segment transcripts joined by spaces.
    pub transcript: String,
    /// Majority of the segment labels.
    pub sentiment: Option<Sentiment>,
    pub segments: Vec<SegmentRecord>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileError {
    pub path: String,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregates {
    pub files: u64,
    pub segments: u64,
    pub voiced_segments: u64,
    /// Over segment labels.
    pub sentiment: Option<SentimentDistribution>,
    /// Over file majority labels.
    pub file_sentiment: Option<SentimentDistribution>,
    pub pitch_histogram: Histogram,
    pub phonetics: PhoneticCounts,
    pub characters: FrequencyTable,
    pub vowels: FrequencyTable,
    pub words: FrequencyTable,
    pub ngrams: Vec<FrequencyTable>,
    pub wordcloud: BTreeMap<String, f64>,
}

impl Aggregates {
    /// Folds per-file records in order. Counting is additive, so the result
    /// depends only on the records, never on how they were produced.
    pub fn fold(files: &[FileRecord], cfg: &PipelineConfig) -> Result<Self> {
        let mut hist = Histogram::new(cfg.histogram.bin_width, cfg.histogram.origin);
        let mut phonetics = PhoneticCounts::default();
        let mut seg_counts = [0u64; 3];
        let mut file_counts = [0u64; 3];
        let (mut segments, mut voiced) = (0u64, 0u64);
        for f in files {
            if let Some(s) = f.sentiment {
                file_counts[s.index()] += 1;
            }
            for s in &f.segments {
                segments += 1;
                if let Some(hz) = s.pitch.hz {
                    voiced += 1;
                    hist.add(hz);
                }
                seg_counts[s.sentiment.label.index()] += 1;
                phonetics.add(&s.phonetics);
            }
        }
        let corpus: Vec<&str> = files.iter().map(|f| f.transcript.as_str()).collect();
        let top = cfg.report.top_n;
        let all_chars = frequency(&corpus, Scope::Character, usize::MAX)?;
        let vowel_counts = all_chars.entries.iter().filter(|(c, _)| c.chars().all(is_vowel)).cloned();
        let vowels = FrequencyTable::from_counts(Scope::Character, vowel_counts.collect(), top);
        let characters = FrequencyTable::from_counts(Scope::Character, all_chars.entries.into_iter().collect(), top);
        let words = frequency(&corpus, Scope::Word, top)?;
        let ngrams = cfg.report.ngram_orders.iter().map(|&n| frequency(&corpus, Scope::Ngram(n), top)).collect::<Result<_>>()?;
        let wordcloud = if words.is_empty() { BTreeMap::new() } else { wordcloud_weights(&words)? };
        Ok(Self {
            files: files.len() as u64,
            segments,
            voiced_segments: voiced,
            sentiment: SentimentDistribution::from_counts(seg_counts).ok(),
            file_sentiment: SentimentDistribution::from_counts(file_counts).ok(),
            pitch_histogram: hist,
            phonetics,
            characters,
            vowels,
            words,
            ngrams,
            wordcloud,
        })
    }
}

/// Enough to rerun an analysis and check that it reproduces.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunManifest {
    pub format_version: u32,
    pub tool_version: String,
    pub seed: u64,
    pub config_hash: String,
    pub files: u64,
    pub errors: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisReport {
    pub format_version: u32,
    pub tool_version: String,
    pub seed: u64,
    pub config_hash: String,
    pub config: serde_json::Value,
    pub normalization: String,
    pub cohort: Option<String>,
    pub files: Vec<FileRecord>,
    pub errors: Vec<FileError>,
    pub aggregates: Aggregates,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub comparison: Option<CohortDelta>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub training: Option<TrainingCurve>,
}

impl AnalysisReport {
    pub fn to_json(&self) -> String {
        sorted_json(self)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let v: serde_json::Value = serde_json::from_str(text)?;
        match v.get("format_version").and_then(serde_json::Value::as_u64) {
            Some(n) if n == REPORT_FORMAT_VERSION as u64 => {}
            other => return Err(Error::SchemaMismatch(format!("report format_version {other:?}"))),
        }
        Ok(serde_json::from_value(v)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }

    pub fn pipeline_config(&self) -> Result<PipelineConfig> {
        Ok(serde_json::from_value(self.config.clone())?)
    }

    /// Recomputes the aggregates from the file records and checks they
    /// match the stored ones.
    pub fn verify(&self) -> Result<()> {
        let again = Aggregates::fold(&self.files, &self.pipeline_config()?)?;
        if again != self.aggregates {
            return Err(Error::SchemaMismatch("aggregates differ from the fold of the file records".into()));
        }
        Ok(())
    }

    pub fn summary(&self) -> CohortSummary {
        let a = &self.aggregates;
        CohortSummary {
            format_version: self.format_version,
            segments: a.segments,
            sentiment: a.sentiment,
            pitch_histogram: a.pitch_histogram.clone(),
            phonetics: a.phonetics,
        }
    }

    pub fn manifest(&self) -> RunManifest {
        RunManifest {
            format_version: self.format_version,
            tool_version: self.tool_version.clone(),
            seed: self.seed,
            config_hash: self.config_hash.clone(),
            files: self.files.len() as u64,
            errors: self.errors.len() as u64,
        }
    }
}
