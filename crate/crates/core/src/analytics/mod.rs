//! Counting and comparison over phonetic transcripts. Input is uppercased
//! before anything is counted, so `a` and `A` are the same symbol.

pub mod compare;
pub mod frequency;
pub mod sentiment;

pub use compare::{compare_cohorts, CohortDelta, CohortSummary, SentimentDelta};
pub use frequency::{frequency, wordcloud_weights, FrequencyTable, Scope};
pub use sentiment::{sentiment_distribution, SentimentDistribution};

use serde::{Deserialize, Serialize};

use crate::text::PhoneticTranscript;

pub const VOWELS: [char; 5] = ['A', 'E', 'I', 'O', 'U'];

pub fn is_vowel(c: char) -> bool {
    VOWELS.contains(&c.to_ascii_uppercase())
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PhoneticCounts {
    pub vowels: u64,
    pub consonants: u64,
}

impl PhoneticCounts {
    /// Counts ASCII letters; Y is a consonant and everything else is skipped.
    pub fn of(text: &str) -> Self {
        let mut c = Self::default();
        for ch in text.chars().filter(char::is_ascii_alphabetic) {
            if is_vowel(ch) {
                c.vowels += 1;
            } else {
                c.consonants += 1;
            }
        }
        c
    }

    pub fn total(&self) -> u64 {
        self.vowels + self.consonants
    }

    /// Vowels per consonant, `None` without consonants.
    pub fn vowel_consonant_ratio(&self) -> Option<f64> {
        (self.consonants > 0).then(|| self.vowels as f64 / self.consonants as f64)
    }

    pub fn add(&mut self, other: &PhoneticCounts) {
        self.vowels += other.vowels;
        self.consonants += other.consonants;
    }
}

pub fn count_phonetics(t: &PhoneticTranscript) -> PhoneticCounts {
    PhoneticCounts::of(&t.text)
}

/// Quotes a CSV field when it holds a comma, quote or line break.
pub(crate) fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n', '\r']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn examples() {
        assert_eq!(PhoneticCounts::of("AAA"), PhoneticCounts { vowels: 3, consonants: 0 });
        assert_eq!(PhoneticCounts::of("WYK"), PhoneticCounts { vowels: 0, consonants: 3 });
        assert_eq!(PhoneticCounts::of(""), PhoneticCounts::default());
        assert_eq!(PhoneticCounts::of("ab, e1!"), PhoneticCounts { vowels: 2, consonants: 1 });
        let t = PhoneticTranscript::new("kuku", "x");
        assert_eq!(count_phonetics(&t), PhoneticCounts { vowels: 2, consonants: 2 });
    }

    #[test]
    fn ratio() {
        assert_eq!(PhoneticCounts { vowels: 3, consonants: 0 }.vowel_consonant_ratio(), None);
        assert_eq!(PhoneticCounts { vowels: 3, consonants: 2 }.vowel_consonant_ratio(), Some(1.5));
    }

    #[test]
    fn csv_quoting() {
        assert_eq!(csv_field("AB"), "AB");
        assert_eq!(csv_field("A,B"), "\"A,B\"");
        assert_eq!(csv_field("A\"B"), "\"A\"\"B\"");
    }

    proptest! {
        #[test]
        fn totals_match_letter_count(s in "\\PC{0,60}") {
            let c = PhoneticCounts::of(&s);
            prop_assert_eq!(c.total() as usize, s.chars().filter(|c| c.is_ascii_alphabetic()).count());
        }
    }
}
