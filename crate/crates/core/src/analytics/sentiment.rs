use num_rational::Ratio;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::text::Sentiment;

/// Class counts with percentages derived exactly. Serialized with the
/// display percentages alongside the counts they come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(into = "Repr", try_from = "Repr")]
pub struct SentimentDistribution {
    counts: [u64; 3],
}

#[derive(Serialize, Deserialize)]
struct Repr {
    negative: u64,
    neutral: u64,
    positive: u64,
    negative_pct: f64,
    neutral_pct: f64,
    positive_pct: f64,
}

impl From<SentimentDistribution> for Repr {
    fn from(d: SentimentDistribution) -> Self {
        let [a, b, c] = d.display_pct();
        let [negative, neutral, positive] = d.counts;
        Repr { negative, neutral, positive, negative_pct: a, neutral_pct: b, positive_pct: c }
    }
}

impl TryFrom<Repr> for SentimentDistribution {
    type Error = Error;

    fn try_from(r: Repr) -> Result<Self> {
        let d = SentimentDistribution::from_counts([r.negative, r.neutral, r.positive])?;
        if d.display_pct() != [r.negative_pct, r.neutral_pct, r.positive_pct] {
            return Err(Error::SchemaMismatch("sentiment percentages disagree with counts".into()));
        }
        Ok(d)
    }
}

impl SentimentDistribution {
    pub fn from_counts(counts: [u64; 3]) -> Result<Self> {
        if counts.iter().sum::<u64>() == 0 {
            return Err(Error::EmptyInput);
        }
        Ok(Self { counts })
    }

    /// Negative, neutral, positive.
    pub fn counts(&self) -> [u64; 3] {
        self.counts
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn count(&self, s: Sentiment) -> u64 {
        self.counts[s.index()]
    }

    /// `100 * count / total` as exact fractions; they sum to 100.
    pub fn exact_pct(&self) -> [Ratio<u64>; 3] {
        let t = self.total();
        self.counts.map(|c| Ratio::new(100 * c, t))
    }

    pub fn pct(&self) -> [f64; 3] {
        self.exact_pct().map(|r| *r.numer() as f64 / *r.denom() as f64)
    }

    /// Percentage in tenths, rounded half up.
    pub fn display_tenths(&self) -> [i64; 3] {
        let t = self.total();
        self.counts.map(|c| ((2000 * c + t) / (2 * t)) as i64)
    }

    pub fn display_pct(&self) -> [f64; 3] {
        self.display_tenths().map(|d| d as f64 / 10.0)
    }
}

pub fn sentiment_distribution(labels: &[Sentiment]) -> Result<SentimentDistribution> {
    let mut counts = [0u64; 3];
    for l in labels {
        counts[l.index()] += 1;
    }
    SentimentDistribution::from_counts(counts)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn figure_counts_round_to_reported_values() {
        let d = SentimentDistribution::from_counts([46, 59, 45]).unwrap();
        assert_eq!(d.display_pct(), [30.7, 39.3, 30.0]);
        let d = SentimentDistribution::from_counts([48, 58, 44]).unwrap();
        assert_eq!(d.display_pct(), [32.0, 38.7, 29.3]);
    }

    #[test]
    fn from_labels() {
        let d = sentiment_distribution(&[Sentiment::Negative]).unwrap();
        assert_eq!(d.display_pct(), [100.0, 0.0, 0.0]);
        assert!(matches!(sentiment_distribution(&[]), Err(Error::EmptyInput)));
    }

    #[test]
    fn half_rounds_up() {
        // 1/8 = 12.5% exactly; 1/16 = 6.25% rounds to 6.3
        assert_eq!(SentimentDistribution::from_counts([1, 7, 0]).unwrap().display_tenths(), [125, 875, 0]);
        assert_eq!(SentimentDistribution::from_counts([1, 15, 0]).unwrap().display_tenths(), [63, 938, 0]);
    }

    #[test]
    fn json_round_trip() {
        let d = SentimentDistribution::from_counts([46, 59, 45]).unwrap();
        let s = serde_json::to_string(&d).unwrap();
        assert!(s.contains("\"neutral_pct\":39.3"));
        assert_eq!(serde_json::from_str::<SentimentDistribution>(&s).unwrap(), d);
        let bad = s.replace("39.3", "39.4");
        assert!(serde_json::from_str::<SentimentDistribution>(&bad).is_err());
    }

    proptest! {
        #[test]
        fn exact_shares_sum_to_100(c in prop::array::uniform3(0u64..10_000)) {
            prop_assume!(c.iter().sum::<u64>() > 0);
            let d = SentimentDistribution::from_counts(c).unwrap();
            let s: Ratio<u64> = d.exact_pct().iter().sum();
            prop_assert_eq!(s, Ratio::from_integer(100));
            for p in d.display_pct() {
                prop_assert!((0.0..=100.0).contains(&p));
            }
        }
    }
}
