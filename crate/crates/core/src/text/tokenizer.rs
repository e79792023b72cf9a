//! Character vocabulary: five specials followed by `A..Z`.

use rand::Rng;

use crate::rng::StreamRng;

pub const PAD: usize = 0;
pub const CLS: usize = 1;
pub const SEP: usize = 2;
pub const MASK: usize = 3;
pub const UNK: usize = 4;
pub const FIRST_LETTER: usize = 5;
pub const VOCAB_SIZE: usize = FIRST_LETTER + 26;

pub fn is_special(id: usize) -> bool {
    id < FIRST_LETTER
}

pub fn char_id(c: char) -> usize {
    if c.is_ascii_uppercase() {
        FIRST_LETTER + (c as u8 - b'A') as usize
    } else {
        UNK
    }
}

pub fn id_char(id: usize) -> Option<char> {
    (FIRST_LETTER..VOCAB_SIZE).contains(&id).then(|| (b'A' + (id - FIRST_LETTER) as u8) as char)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenSequence {
    pub ids: Vec<usize>,
}

impl TokenSequence {
    /// Positions holding special tokens.
    pub fn specials(&self) -> Vec<usize> {
        self.ids.iter().enumerate().filter(|(_, &id)| is_special(id)).map(|(i, _)| i).collect()
    }

    /// Prefix up to and including SEP; padding dropped.
    pub fn unpadded(&self) -> &[usize] {
        let end = self.ids.iter().rposition(|&id| id != PAD).map_or(0, |p| p + 1);
        &self.ids[..end]
    }
}

/// `CLS text SEP PAD...`, truncated so SEP always fits.
pub fn tokenize(text: &str, max_len: usize) -> TokenSequence {
    assert!(max_len >= 2, "max_len must leave room for CLS and SEP");
    let mut ids = Vec::with_capacity(max_len);
    ids.push(CLS);
    ids.extend(text.chars().take(max_len - 2).map(char_id));
    ids.push(SEP);
    ids.resize(max_len, PAD);
    TokenSequence { ids }
}

/// Letters of the sequence in order; specials are skipped.
pub fn detokenize(seq: &TokenSequence) -> String {
    seq.ids.iter().filter_map(|&id| id_char(id)).collect()
}

/// Corrupted sequence plus `(position, original id)` for every selected
/// position.
pub fn mlm_corrupt(seq: &TokenSequence, p: f64, rng: &mut StreamRng) -> (TokenSequence, Vec<(usize, usize)>) {
    let mut ids = seq.ids.clone();
    let mut labels = Vec::new();
    for (pos, id) in ids.iter_mut().enumerate() {
        if is_special(*id) || rng.random::<f64>() >= p {
            continue;
        }
        labels.push((pos, *id));
        let r: f64 = rng.random();
        if r < 0.8 {
            *id = MASK;
        } else if r < 0.9 {
            *id = FIRST_LETTER + rng.random_range(0..26);
        }
    }
    (TokenSequence { ids }, labels)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, Purpose};
    use proptest::prelude::*;

    #[test]
    fn examples() {
        let a = FIRST_LETTER;
        assert_eq!(tokenize("AAA", 8).ids, vec![CLS, a, a, a, SEP, PAD, PAD, PAD]);
        assert_eq!(tokenize("", 4).ids, vec![CLS, SEP, PAD, PAD]);
        assert_eq!(tokenize("A9A", 8).ids[2], UNK);
        assert_eq!(tokenize("ABCDEFG", 5).ids, vec![CLS, a, a + 1, a + 2, SEP]);
        assert_eq!(VOCAB_SIZE, 31);
    }

    #[test]
    fn zero_probability_changes_nothing() {
        let seq = tokenize("AEIOUXYZ", 16);
        let (out, labels) = mlm_corrupt(&seq, 0.0, &mut stream(1, Purpose::Masking));
        assert_eq!(out, seq);
        assert!(labels.is_empty());
    }

    #[test]
    fn corruption_is_deterministic() {
        let seq = tokenize("AEIOUAEIOUAEIOU", 20);
        let a = mlm_corrupt(&seq, 0.5, &mut stream(3, Purpose::Masking));
        let b = mlm_corrupt(&seq, 0.5, &mut stream(3, Purpose::Masking));
        assert_eq!(a, b);
    }

    proptest! {
        #[test]
        fn detokenize_inverts_tokenize(s in "[A-Z]{0,30}") {
            prop_assert_eq!(detokenize(&tokenize(&s, 32)), s);
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(10_000))]

        #[test]
        fn specials_never_touched(s in "[A-Z ]{0,40}", len in 2usize..48, seed in any::<u64>()) {
            let seq = tokenize(&s, len);
            let (out, labels) = mlm_corrupt(&seq, 0.5, &mut stream(seed, Purpose::Masking));
            for i in seq.specials() {
                prop_assert_eq!(out.ids[i], seq.ids[i]);
            }
            for (pos, orig) in labels {
                prop_assert_eq!(seq.ids[pos], orig);
                prop_assert!(!is_special(orig));
            }
        }
    }
}
