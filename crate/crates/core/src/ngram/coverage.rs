// SPDX-License-Identifier: MIT OR Apache-2.0

use serde::Serialize;

use super::key::NgramKey;
use super::tables::NeuronTriggerTable;

/// Size of the smallest key set covering a fraction of a neuron's triggers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum CoverSize {
    Exact(usize),
    /// Table was truncated at the diffuse cap; the size exceeds the cap.
    Diffuse,
}

impl CoverSize {
    pub fn exact(self) -> Option<usize> {
        match self {
            CoverSize::Exact(k) => Some(k),
            CoverSize::Diffuse => None,
        }
    }
}

pub(crate) fn reaches(sum: u64, total: u64, coverage: f64) -> bool {
    sum as f64 >= coverage * total as f64
}

/// Minimal number of counts (taken largest first) whose sum reaches
/// `coverage * total`. Taking the largest counts first is optimal for a
/// sum-coverage target.
pub fn min_cover_count(counts_desc: &[u64], total: u64, coverage: f64) -> usize {
    debug_assert!(counts_desc.windows(2).all(|w| w[0] >= w[1]));
    let mut sum = 0u64;
    if reaches(sum, total, coverage) {
        return 0;
    }
    for (i, &c) in counts_desc.iter().enumerate() {
        sum += c;
        if reaches(sum, total, coverage) {
            return i + 1;
        }
    }
    counts_desc.len()
}

/// Number of n-grams needed to cover `coverage` of the neuron's triggers.
/// A table with no triggers needs zero keys.
pub fn covering_set_size(table: &NeuronTriggerTable, coverage: f64) -> CoverSize {
    if table.diffuse {
        return CoverSize::Diffuse;
    }
    let mut counts: Vec<u64> = table.entries().iter().map(|e| e.1).collect();
    counts.sort_unstable_by(|a, b| b.cmp(a));
    CoverSize::Exact(min_cover_count(&counts, table.total_triggers, coverage))
}

/// The covering keys themselves, largest count first and ties by ascending key.
pub fn covering_set(table: &NeuronTriggerTable, coverage: f64) -> Option<Vec<(NgramKey, u64)>> {
    let k = covering_set_size(table, coverage).exact()?;
    let mut ordered = table.by_count();
    ordered.truncate(k);
    Some(ordered)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum CoverageBucket {
    /// Alive, but never at a position with a complete n-gram.
    NoTriggers,
    K1To5,
    K6To10,
    K11To20,
    K21To50,
    K51To100,
    Over100,
    Diffuse,
}

impl CoverageBucket {
    pub const ALL: [CoverageBucket; 8] = [
        CoverageBucket::NoTriggers,
        CoverageBucket::K1To5,
        CoverageBucket::K6To10,
        CoverageBucket::K11To20,
        CoverageBucket::K21To50,
        CoverageBucket::K51To100,
        CoverageBucket::Over100,
        CoverageBucket::Diffuse,
    ];

    pub fn of(size: CoverSize) -> Self {
        match size {
            CoverSize::Diffuse => CoverageBucket::Diffuse,
            CoverSize::Exact(0) => CoverageBucket::NoTriggers,
            CoverSize::Exact(1..=5) => CoverageBucket::K1To5,
            CoverSize::Exact(6..=10) => CoverageBucket::K6To10,
            CoverSize::Exact(11..=20) => CoverageBucket::K11To20,
            CoverSize::Exact(21..=50) => CoverageBucket::K21To50,
            CoverSize::Exact(51..=100) => CoverageBucket::K51To100,
            CoverSize::Exact(_) => CoverageBucket::Over100,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            CoverageBucket::NoTriggers => "none",
            CoverageBucket::K1To5 => "1-5",
            CoverageBucket::K6To10 => "6-10",
            CoverageBucket::K11To20 => "11-20",
            CoverageBucket::K21To50 => "21-50",
            CoverageBucket::K51To100 => "51-100",
            CoverageBucket::Over100 => ">100",
            CoverageBucket::Diffuse => "diffuse",
        }
    }

    fn index(self) -> usize {
        Self::ALL.iter().position(|&b| b == self).unwrap()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BucketCount {
    pub bucket: &'static str,
    pub neurons: u64,
}

/// Alive neurons of one layer partitioned by covering-set size.
#[derive(Debug, Clone, PartialEq)]
pub struct CoverageHistogram {
    pub layer: usize,
    pub n: usize,
    pub coverage: f64,
    counts: [u64; 8],
}

impl CoverageHistogram {
    pub fn new(layer: usize, n: usize, coverage: f64) -> Self {
        Self {
            layer,
            n,
            coverage,
            counts: [0; 8],
        }
    }

    pub fn add(&mut self, table: &NeuronTriggerTable) {
        let bucket = CoverageBucket::of(covering_set_size(table, self.coverage));
        self.counts[bucket.index()] += 1;
    }

    pub fn count(&self, bucket: CoverageBucket) -> u64 {
        self.counts[bucket.index()]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn buckets(&self) -> Vec<BucketCount> {
        CoverageBucket::ALL
            .iter()
            .map(|&b| BucketCount {
                bucket: b.label(),
                neurons: self.count(b),
            })
            .collect()
    }
}

impl Serialize for CoverageHistogram {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        use serde::ser::SerializeStruct;
        let mut st = s.serialize_struct("CoverageHistogram", 5)?;
        st.serialize_field("layer", &self.layer)?;
        st.serialize_field("n", &self.n)?;
        st.serialize_field("coverage", &self.coverage)?;
        st.serialize_field("alive_neurons", &self.total())?;
        st.serialize_field("buckets", &self.buckets())?;
        st.end()
    }
}

pub fn coverage_histogram<'a>(
    layer: usize,
    n: usize,
    tables: impl IntoIterator<Item = &'a NeuronTriggerTable>,
    coverage: f64,
) -> CoverageHistogram {
    let mut h = CoverageHistogram::new(layer, n, coverage);
    for t in tables {
        h.add(t);
    }
    h
}
