// SPDX-License-Identifier: MIT OR Apache-2.0

use rustc_hash::FxHashSet;
use serde::Serialize;

use super::detectors::TokenDetectorRecord;
use super::key::NgramKey;

/// Detected n-grams of one layer compared with the layers below it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct LayerNovelty {
    pub layer: usize,
    /// Distinct n-grams with a detector in this layer.
    pub detected: usize,
    /// Not detected in the previous listed layer.
    pub new_vs_previous: usize,
    /// Not detected in any earlier listed layer.
    pub new_overall: usize,
    /// Distinct n-grams detected in this or any earlier layer.
    pub cumulative: usize,
}

pub fn detected_set(records: &[TokenDetectorRecord]) -> FxHashSet<NgramKey> {
    records.iter().flat_map(|r| r.keys()).collect()
}

/// `per_layer` must be in ascending layer order.
pub fn layer_novelty(per_layer: &[(usize, Vec<TokenDetectorRecord>)]) -> Vec<LayerNovelty> {
    let mut seen: FxHashSet<NgramKey> = FxHashSet::default();
    let mut previous: FxHashSet<NgramKey> = FxHashSet::default();
    let mut out = Vec::with_capacity(per_layer.len());
    for (layer, records) in per_layer {
        let current = detected_set(records);
        let new_vs_previous = current.difference(&previous).count();
        let new_overall = current.difference(&seen).count();
        seen.extend(current.iter().copied());
        out.push(LayerNovelty {
            layer: *layer,
            detected: current.len(),
            new_vs_previous,
            new_overall,
            cumulative: seen.len(),
        });
        previous = current;
    }
    out
}
