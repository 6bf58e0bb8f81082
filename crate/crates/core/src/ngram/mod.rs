// SPDX-License-Identifier: MIT OR Apache-2.0

//! Per-neuron n-gram trigger tables and everything computed from them:
//! covering-set sizes, coverage histograms, detector certification and
//! cross-layer novelty of detected n-grams.

mod coverage;
mod detectors;
mod key;
mod novelty;
mod tables;

pub use coverage::{
    coverage_histogram, covering_set, covering_set_size, min_cover_count, BucketCount, CoverSize,
    CoverageBucket, CoverageHistogram,
};
pub use detectors::{
    detect_in_tables, evaluate_detector, find_detectors, passes_group_rule, CoveredNgram, DetectorConfig,
    GroupRule, NgramOccurrences, TokenDetectorRecord,
};
pub use key::{NgramKey, MAX_N, MAX_VOCAB};
pub use novelty::{detected_set, layer_novelty, LayerNovelty};
pub use tables::{
    build_trigger_tables, build_trigger_tables_with, for_each_trigger_table, NeuronTriggerTable, TableConfig,
    DEFAULT_DENSE_BUDGET_BYTES, DEFAULT_DIFFUSE_CAP,
};
