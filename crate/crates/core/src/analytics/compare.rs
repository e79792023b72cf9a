use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{PhoneticCounts, SentimentDistribution};
use crate::dsp::Histogram;
use crate::error::{Error, Result};

/// The part of a report that cohorts are compared on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CohortSummary {
    pub format_version: u32,
    pub segments: u64,
    pub sentiment: Option<SentimentDistribution>,
    pub pitch_histogram: Histogram,
    pub phonetics: PhoneticCounts,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SentimentDelta {
    /// Difference of the displayed (rounded) percentages, in points.
    pub negative_pct: f64,
    pub neutral_pct: f64,
    pub positive_pct: f64,
    pub negative: i64,
    pub neutral: i64,
    pub positive: i64,
}

/// Every field is `b - a`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CohortDelta {
    pub format_version: u32,
    pub segments: i64,
    pub sentiment: Option<SentimentDelta>,
    /// Bin-wise count differences over the union of both bin sets.
    pub pitch_histogram: BTreeMap<i64, i64>,
    pub bin_width: f64,
    pub origin: f64,
    pub vowels: i64,
    pub consonants: i64,
    /// `None` when either side has no consonants.
    pub vowel_consonant_ratio: Option<f64>,
}

fn diff(a: u64, b: u64) -> i64 {
    b as i64 - a as i64
}

pub fn compare_cohorts(a: &CohortSummary, b: &CohortSummary) -> Result<CohortDelta> {
    if a.format_version != b.format_version {
        return Err(Error::SchemaMismatch(format!(
            "format version {} vs {}",
            a.format_version, b.format_version
        )));
    }
    let (ha, hb) = (&a.pitch_histogram, &b.pitch_histogram);
    if ha.bin_width != hb.bin_width || ha.origin != hb.origin {
        return Err(Error::SchemaMismatch(format!(
            "histogram bins {}@{} vs {}@{}",
            ha.bin_width, ha.origin, hb.bin_width, hb.origin
        )));
    }
    let mut pitch = BTreeMap::new();
    for bin in ha.counts.keys().chain(hb.counts.keys()) {
        let ca = ha.counts.get(bin).copied().unwrap_or(0);
        let cb = hb.counts.get(bin).copied().unwrap_or(0);
        pitch.insert(*bin, diff(ca, cb));
    }
    let sentiment = match (&a.sentiment, &b.sentiment) {
        (Some(sa), Some(sb)) => {
            // working in integer tenths keeps the difference exact and antisymmetric
            let (ta, tb) = (sa.display_tenths(), sb.display_tenths());
            let d = |i: usize| (tb[i] - ta[i]) as f64 / 10.0;
            let (ca, cb) = (sa.counts(), sb.counts());
            Some(SentimentDelta {
                negative_pct: d(0),
                neutral_pct: d(1),
                positive_pct: d(2),
                negative: diff(ca[0], cb[0]),
                neutral: diff(ca[1], cb[1]),
                positive: diff(ca[2], cb[2]),
            })
        }
        _ => None,
    };
    let ratio = match (a.phonetics.vowel_consonant_ratio(), b.phonetics.vowel_consonant_ratio()) {
        (Some(ra), Some(rb)) => Some(rb - ra),
        _ => None,
    };
    Ok(CohortDelta {
        format_version: a.format_version,
        segments: diff(a.segments, b.segments),
        sentiment,
        pitch_histogram: pitch,
        bin_width: ha.bin_width,
        origin: ha.origin,
        vowels: diff(a.phonetics.vowels, b.phonetics.vowels),
        consonants: diff(a.phonetics.consonants, b.phonetics.consonants),
        vowel_consonant_ratio: ratio,
    })
}

impl CohortDelta {
    pub fn is_zero(&self) -> bool {
        let s = self.sentiment.is_none_or(|s| {
            [s.negative_pct, s.neutral_pct, s.positive_pct] == [0.0; 3] && [s.negative, s.neutral, s.positive] == [0; 3]
        });
        s && self.segments == 0
            && self.pitch_histogram.values().all(|&d| d == 0)
            && self.vowels == 0
            && self.consonants == 0
            && self.vowel_consonant_ratio.is_none_or(|r| r == 0.0)
    }

    /// Entry-wise negation, the delta of the swapped comparison.
    pub fn negated(&self) -> CohortDelta {
        CohortDelta {
            format_version: self.format_version,
            segments: -self.segments,
            sentiment: self.sentiment.map(|s| SentimentDelta {
                negative_pct: -s.negative_pct,
                neutral_pct: -s.neutral_pct,
                positive_pct: -s.positive_pct,
                negative: -s.negative,
                neutral: -s.neutral,
                positive: -s.positive,
            }),
            pitch_histogram: self.pitch_histogram.iter().map(|(&k, &v)| (k, -v)).collect(),
            bin_width: self.bin_width,
            origin: self.origin,
            vowels: -self.vowels,
            consonants: -self.consonants,
            vowel_consonant_ratio: self.vowel_consonant_ratio.map(|r| -r),
        }
    }
}
