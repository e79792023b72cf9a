use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Sentiment classes in index order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Sentiment {
    Negative,
    Neutral,
    Positive,
}

impl Sentiment {
    pub const ALL: [Sentiment; 3] = [Sentiment::Negative, Sentiment::Neutral, Sentiment::Positive];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Sentiment::Negative => "negative",
            Sentiment::Neutral => "neutral",
            Sentiment::Positive => "positive",
        }
    }
}

impl fmt::Display for Sentiment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Sentiment {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "negative" => Ok(Sentiment::Negative),
            "neutral" => Ok(Sentiment::Neutral),
            "positive" => Ok(Sentiment::Positive),
            other => Err(Error::Labels(format!("unknown label {other:?}"))),
        }
    }
}

/// Parses `source_id,label` rows. A header row is accepted and skipped.
pub fn parse_labels(text: &str) -> Result<BTreeMap<String, Sentiment>> {
    let mut out = BTreeMap::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || (n == 0 && line == "source_id,label") {
            continue;
        }
        let (id, label) = line
            .split_once(',')
            .ok_or_else(|| Error::Labels(format!("line {}: expected `source_id,label`", n + 1)))?;
        let label = label.parse().map_err(|e: Error| Error::Labels(format!("line {}: {e}", n + 1)))?;
        if out.insert(id.trim().to_string(), label).is_some() {
            return Err(Error::Labels(format!("line {}: duplicate id {id:?}", n + 1)));
        }
    }
    Ok(out)
}

pub fn load_labels(path: impl AsRef<Path>) -> Result<BTreeMap<String, Sentiment>> {
    let path = path.as_ref();
    parse_labels(&std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
}

pub fn labels_csv<S: AsRef<str>>(rows: impl IntoIterator<Item = (S, Sentiment)>) -> String {
    let mut out = String::from("source_id,label\n");
    for (id, label) in rows {
        out.push_str(&format!("{},{label}\n", id.as_ref()));
    }
    out
}
