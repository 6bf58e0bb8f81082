// SPDX-License-Identifier: MIT OR Apache-2.0

//! Positional neurons: neurons whose firing depends on the token's position
//! in a full-length context window rather than on the text.
//!
//! Profiles are built from documents of exactly `context_len` tokens only,
//! so every position is equally likely. Mutual information is in nats.

mod classify;
mod map;
mod mi;
mod profile;
mod ranges;

pub use classify::{
    alternations, band_runs, classify_pattern, classify_with_evidence, lag1_autocorrelation, smooth,
    BandRuns, ClassifyConfig, PatternClass, PatternEvidence, Shape, Strength,
};
pub use map::{
    classify_layer, positional_map, LayerPositional, PositionalConfig, PositionalMap, PositionalNeuron,
};
pub use mi::{mutual_information, mutual_information_bits, select_positional, DEFAULT_MI_THRESHOLD};
pub use profile::{downsample, positional_profiles, DomainCounts, PositionalProfile, PositionalProfiles};
pub use ranges::{indicator_ranges, team_coverage, IndicatorRanges, Interval, TeamCoverage};
