//! Mapping from composite codebook ids to phonetic letters.

use serde::{Deserialize, Serialize};

use super::QuantizedUnits;

pub const VOWELS: [char; 5] = ['A', 'E', 'I', 'O', 'U'];
pub const CONSONANTS: [char; 16] = ['B', 'C', 'D', 'F', 'G', 'H', 'K', 'L', 'M', 'N', 'P', 'R', 'S', 'T', 'W', 'Y'];

/// Serialized stand-in for the blank symbol.
pub const BLANK_CHAR: char = '_';

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Symbol {
    Blank,
    Letter(char),
}

/// One symbol per composite code id. Id 0 is always blank.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Alphabet {
    symbols: Vec<Symbol>,
}

impl Alphabet {
    /// Vowels go to the five most used non-blank codes, consonants cycle over
    /// the rest in usage order. Ties rank by lower id.
    pub fn from_usage(usage: &[u64]) -> Self {
        let mut order: Vec<usize> = (1..usage.len()).collect();
        order.sort_by(|&a, &b| usage[b].cmp(&usage[a]).then(a.cmp(&b)));
        let mut symbols = vec![Symbol::Blank; usage.len()];
        for (rank, &id) in order.iter().enumerate() {
            symbols[id] = if rank < VOWELS.len() {
                Symbol::Letter(VOWELS[rank])
            } else {
                Symbol::Letter(CONSONANTS[(rank - VOWELS.len()) % CONSONANTS.len()])
            };
        }
        Self { symbols }
    }

    /// Usage-free default: equivalent to all codes being equally used.
    pub fn uniform(size: usize) -> Self {
        Self::from_usage(&vec![0; size])
    }

    pub fn from_symbols(symbols: Vec<Symbol>) -> Self {
        Self { symbols }
    }

    pub fn len(&self) -> usize {
        self.symbols.len()
    }

    pub fn is_empty(&self) -> bool {
        self.symbols.is_empty()
    }

    pub fn symbol(&self, id: usize) -> Symbol {
        self.symbols[id]
    }

    /// One character per id, blank as [`BLANK_CHAR`].
    pub fn encode(&self) -> String {
        self.symbols
            .iter()
            .map(|s| match s {
                Symbol::Blank => BLANK_CHAR,
                Symbol::Letter(c) => *c,
            })
            .collect()
    }

    pub fn decode(text: &str) -> Option<Self> {
        let symbols = text
            .chars()
            .map(|c| match c {
                BLANK_CHAR => Some(Symbol::Blank),
                c if c.is_ascii_uppercase() => Some(Symbol::Letter(c)),
                _ => None,
            })
            .collect::<Option<Vec<_>>>()?;
        Some(Self { symbols })
    }

    /// Per-frame lookup with blanks removed. Repeats are kept.
    pub fn transcribe(&self, units: &QuantizedUnits) -> String {
        units
            .ids
            .iter()
            .filter_map(|&id| match self.symbols[id] {
                Symbol::Blank => None,
                Symbol::Letter(c) => Some(c),
            })
            .collect()
    }
}

impl Serialize for Alphabet {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.encode())
    }
}

impl<'de> Deserialize<'de> for Alphabet {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let text = String::deserialize(d)?;
        Self::decode(&text).ok_or_else(|| serde::de::Error::custom("invalid alphabet string"))
    }
}
