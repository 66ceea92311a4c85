use std::collections::{BTreeMap, HashSet};
use std::fmt;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::{ContractRecord, RawRecord, VulnLabel};

/// Keeps the first record of each distinct hex-token stream.
pub fn dedup(records: Vec<ContractRecord>) -> Vec<ContractRecord> {
    let mut seen = HashSet::new();
    records
        .into_iter()
        .filter(|r| seen.insert(r.hex_tokens.clone()))
        .collect()
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct BalancePolicy {
    /// Per-class sample caps; classes without an entry are kept whole.
    pub caps: BTreeMap<VulnLabel, usize>,
    pub seed: u64,
}

impl BalancePolicy {
    /// The same cap for every class.
    pub fn uniform(cap: usize, seed: u64) -> Self {
        Self {
            caps: VulnLabel::ALL.iter().map(|&l| (l, cap)).collect(),
            seed,
        }
    }
}

/// Drops rows whose label is not one-hot (multi-flag or empty) or whose
/// token stream is empty, then samples each class down to its cap. Kept
/// records stay in input order.
pub fn filter_and_balance(records: Vec<RawRecord>, policy: &BalancePolicy) -> Vec<ContractRecord> {
    let kept: Vec<ContractRecord> = records
        .into_iter()
        .filter(|r| !r.hex_tokens.is_empty())
        .filter_map(|r| {
            r.label.one_hot().map(|label| ContractRecord {
                address: r.address,
                hex_tokens: r.hex_tokens,
                label,
                source: None,
            })
        })
        .collect();

    let mut rng = ChaCha8Rng::seed_from_u64(policy.seed);
    let mut keep = vec![true; kept.len()];
    for (&label, &cap) in &policy.caps {
        let mut members: Vec<usize> = (0..kept.len()).filter(|&i| kept[i].label == label).collect();
        if members.len() > cap {
            members.shuffle(&mut rng);
            for &i in &members[cap..] {
                keep[i] = false;
            }
        }
    }
    kept.into_iter()
        .zip(keep)
        .filter_map(|(r, k)| k.then_some(r))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DatasetStats {
    pub counts: BTreeMap<VulnLabel, usize>,
    pub bin_width: usize,
    /// `histogram[i]` counts lengths in `[i·bin_width, (i+1)·bin_width)`.
    pub histogram: Vec<usize>,
    pub mean_length: f64,
}

/// Per-class counts and a token-length histogram. A `bin_width` of 0 is
/// treated as 1.
pub fn stats(records: &[ContractRecord], bin_width: usize) -> DatasetStats {
    let bin_width = bin_width.max(1);
    let mut counts: BTreeMap<VulnLabel, usize> = VulnLabel::ALL.iter().map(|&l| (l, 0)).collect();
    let mut histogram = Vec::new();
    let mut total = 0usize;
    for r in records {
        *counts.entry(r.label).or_default() += 1;
        let n = r.hex_tokens.len();
        total += n;
        let bin = n / bin_width;
        if histogram.len() <= bin {
            histogram.resize(bin + 1, 0);
        }
        histogram[bin] += 1;
    }
    let mean_length = if records.is_empty() {
        0.0
    } else {
        total as f64 / records.len() as f64
    };
    DatasetStats {
        counts,
        bin_width,
        histogram,
        mean_length,
    }
}

impl fmt::Display for DatasetStats {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (label, n) in &self.counts {
            writeln!(f, "{:<10} {n}", label.name())?;
        }
        writeln!(f, "mean length {:.1}", self.mean_length)?;
        for (i, n) in self.histogram.iter().enumerate() {
            if *n > 0 {
                let lo = i * self.bin_width;
                writeln!(f, "[{lo}, {}) {n}", lo + self.bin_width)?;
            }
        }
        Ok(())
    }
}
