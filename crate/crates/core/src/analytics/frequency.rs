use std::collections::BTreeMap;
use std::fmt::{self, Write};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::csv_field;
use crate::error::{Error, Result};

/// What a frequency table counts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scope {
    /// Every non-whitespace character.
    Character,
    /// Whitespace-separated tokens.
    Word,
    /// Character n-grams inside words.
    Ngram(usize),
}

impl fmt::Display for Scope {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Scope::Character => f.write_str("character"),
            Scope::Word => f.write_str("word"),
            Scope::Ngram(n) => write!(f, "ngram{n}"),
        }
    }
}

impl FromStr for Scope {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "character" | "char" => Ok(Scope::Character),
            "word" => Ok(Scope::Word),
            _ => match s.strip_prefix("ngram").map(str::parse::<usize>) {
                Some(Ok(n)) if n >= 1 => Ok(Scope::Ngram(n)),
                Some(Ok(n)) => Err(Error::InvalidN(n)),
                _ => Err(Error::InvalidConfig(format!("unknown frequency scope {s:?}"))),
            },
        }
    }
}

/// Counts sorted by count descending, then item ascending.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FrequencyTable {
    pub scope: Scope,
    pub entries: Vec<(String, u64)>,
}

impl FrequencyTable {
    pub fn from_counts(scope: Scope, counts: BTreeMap<String, u64>, top_n: usize) -> Self {
        let mut entries: Vec<(String, u64)> = counts.into_iter().filter(|(_, c)| *c > 0).collect();
        // the map already iterates items in ascending order and the sort is stable
        entries.sort_by(|a, b| b.1.cmp(&a.1));
        entries.truncate(top_n);
        Self { scope, entries }
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn max_count(&self) -> Option<u64> {
        self.entries.first().map(|e| e.1)
    }

    /// `rank,item,count,weight` with ranks from 1 and weight = count / max.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("rank,item,count,weight\n");
        let max = self.max_count().unwrap_or(1) as f64;
        for (i, (item, c)) in self.entries.iter().enumerate() {
            writeln!(out, "{},{},{},{}", i + 1, csv_field(item), c, *c as f64 / max).unwrap();
        }
        out
    }
}

fn count_into(counts: &mut BTreeMap<String, u64>, item: impl Into<String>) {
    *counts.entry(item.into()).or_insert(0) += 1;
}

/// Exact counts over the whole corpus, truncated to the `top_n` most
/// frequent after sorting.
pub fn frequency<S: AsRef<str>>(corpus: &[S], scope: Scope, top_n: usize) -> Result<FrequencyTable> {
    if let Scope::Ngram(0) = scope {
        return Err(Error::InvalidN(0));
    }
    let mut counts = BTreeMap::new();
    for doc in corpus {
        let doc = doc.as_ref().to_uppercase();
        for word in doc.split_whitespace() {
            match scope {
                Scope::Character => word.chars().for_each(|c| count_into(&mut counts, c)),
                Scope::Word => count_into(&mut counts, word),
                Scope::Ngram(n) => {
                    let chars: Vec<char> = word.chars().collect();
                    for w in chars.windows(n) {
                        count_into(&mut counts, w.iter().collect::<String>());
                    }
                }
            }
        }
    }
    Ok(FrequencyTable::from_counts(scope, counts, top_n))
}

/// Count over the top count, so the most frequent item weighs exactly 1.
pub fn wordcloud_weights(table: &FrequencyTable) -> Result<BTreeMap<String, f64>> {
    let max = table.max_count().ok_or(Error::EmptyTable)? as f64;
    Ok(table.entries.iter().map(|(k, c)| (k.clone(), *c as f64 / max)).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::seq::SliceRandom;
    use rand::SeedableRng;

    fn e(items: &[(&str, u64)]) -> Vec<(String, u64)> {
        items.iter().map(|(s, c)| (s.to_string(), *c)).collect()
    }

    #[test]
    fn examples() {
        let t = frequency(&["AAA", "AO"], Scope::Character, 10).unwrap();
        assert_eq!(t.entries, e(&[("A", 4), ("O", 1)]));
        assert_eq!(frequency(&["AAA"], Scope::Ngram(1), 10).unwrap().entries, e(&[("A", 3)]));
        assert_eq!(frequency(&["AO"], Scope::Ngram(2), 10).unwrap().entries, e(&[("AO", 1)]));
        assert!(frequency(&["AO", "K"], Scope::Ngram(3), 10).unwrap().is_empty());
        assert!(matches!(frequency(&["A"], Scope::Ngram(0), 10), Err(Error::InvalidN(0))));
    }

    #[test]
    fn ngrams_stay_inside_words() {
        let t = frequency(&["AB CD"], Scope::Ngram(2), 10).unwrap();
        assert_eq!(t.entries, e(&[("AB", 1), ("CD", 1)]));
    }

    #[test]
    fn words_and_case() {
        let t = frequency(&["ka Ka  KU", "ku"], Scope::Word, 10).unwrap();
        assert_eq!(t.entries, e(&[("KA", 2), ("KU", 2)]));
    }

    #[test]
    fn truncation_keeps_least_items_among_ties() {
        let t = frequency(&["D C B A E E"], Scope::Word, 3).unwrap();
        assert_eq!(t.entries, e(&[("E", 2), ("A", 1), ("B", 1)]));
    }

    #[test]
    fn weights() {
        let t = FrequencyTable { scope: Scope::Character, entries: e(&[("A", 4), ("O", 1)]) };
        let w = wordcloud_weights(&t).unwrap();
        assert_eq!(w, BTreeMap::from([("A".to_string(), 1.0), ("O".to_string(), 0.25)]));
        let t = FrequencyTable { scope: Scope::Character, entries: e(&[("A", 2), ("B", 2)]) };
        assert!(wordcloud_weights(&t).unwrap().values().all(|&w| w == 1.0));
        let empty = FrequencyTable { scope: Scope::Word, entries: vec![] };
        assert!(matches!(wordcloud_weights(&empty), Err(Error::EmptyTable)));
    }

    #[test]
    fn csv() {
        let t = frequency(&["AAA", "AO"], Scope::Character, 10).unwrap();
        assert_eq!(t.to_csv(), "rank,item,count,weight\n1,A,4,1\n2,O,1,0.25\n");
    }

    #[test]
    fn scope_parsing() {
        assert_eq!("ngram2".parse::<Scope>().unwrap(), Scope::Ngram(2));
        assert_eq!("word".parse::<Scope>().unwrap(), Scope::Word);
        assert!(matches!("ngram0".parse::<Scope>(), Err(Error::InvalidN(0))));
        assert!("bigram".parse::<Scope>().is_err());
        assert_eq!(Scope::Ngram(3).to_string().parse::<Scope>().unwrap(), Scope::Ngram(3));
    }

    proptest! {
        #[test]
        fn permutation_invariant(docs in prop::collection::vec("[A-E ]{0,12}", 0..12), seed in any::<u64>(), n in 1usize..4) {
            let mut shuffled = docs.clone();
            shuffled.shuffle(&mut rand_xoshiro::Xoshiro256PlusPlus::seed_from_u64(seed));
            for scope in [Scope::Character, Scope::Word, Scope::Ngram(n)] {
                prop_assert_eq!(frequency(&docs, scope, 5).unwrap(), frequency(&shuffled, scope, 5).unwrap());
            }
        }
    }
}
