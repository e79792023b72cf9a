use std::collections::BTreeMap;
use std::fmt::Write;

use serde::{Deserialize, Serialize};

use super::PitchEstimate;

/// Fixed-width histogram over voiced pitch values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub bin_width: f64,
    pub origin: f64,
    /// Bin index `floor((hz - origin) / bin_width)` to count.
    pub counts: BTreeMap<i64, u64>,
}

impl Histogram {
    pub fn new(bin_width: f64, origin: f64) -> Self {
        assert!(bin_width > 0.0, "bin width must be positive");
        Self { bin_width, origin, counts: BTreeMap::new() }
    }

    pub fn from_estimates<'a>(
        estimates: impl IntoIterator<Item = &'a PitchEstimate>,
        bin_width: f64,
        origin: f64,
    ) -> Self {
        let mut h = Self::new(bin_width, origin);
        for e in estimates {
            if let Some(hz) = e.hz {
                h.add(hz);
            }
        }
        h
    }

    pub fn bin_of(&self, hz: f64) -> i64 {
        ((hz - self.origin) / self.bin_width).floor() as i64
    }

    pub fn add(&mut self, hz: f64) {
        *self.counts.entry(self.bin_of(hz)).or_insert(0) += 1;
    }

    pub fn total(&self) -> u64 {
        self.counts.values().sum()
    }

    pub fn bin_range(&self, bin: i64) -> (f64, f64) {
        let start = self.origin + bin as f64 * self.bin_width;
        (start, start + self.bin_width)
    }

    /// Most populated bin; ties go to the lower bin.
    pub fn mode(&self) -> Option<i64> {
        self.counts
            .iter()
            .fold(None, |best: Option<(i64, u64)>, (&b, &c)| match best {
                Some((_, bc)) if bc >= c => best,
                _ => Some((b, c)),
            })
            .map(|(b, _)| b)
    }

    /// Adds another histogram with the same binning.
    pub fn merge(&mut self, other: &Histogram) {
        for (&b, &c) in &other.counts {
            *self.counts.entry(b).or_insert(0) += c;
        }
    }

    /// CSV with header `bin_start_hz,bin_end_hz,count`, ascending bins.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("bin_start_hz,bin_end_hz,count\n");
        for (&b, &c) in &self.counts {
            let (lo, hi) = self.bin_range(b);
            writeln!(out, "{lo},{hi},{c}").unwrap();
        }
        out
    }
}
