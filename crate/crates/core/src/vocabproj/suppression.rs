// SPDX-License-Identifier: MIT OR Apache-2.0

use std::collections::BTreeMap;

use serde::Serialize;

use crate::actstore::{Matrix, StoreHandle};
use crate::ngram::TokenDetectorRecord;
use crate::Result;

use super::projection::{project_row, rank_from_bottom, ProjectionOptions, ScoredToken};

/// Unembedding plus whichever value matrices are available.
#[derive(Debug, Clone)]
pub struct WeightSet {
    unembedding: Matrix,
    values: BTreeMap<usize, Matrix>,
}

impl WeightSet {
    pub fn new(unembedding: Matrix) -> Self {
        Self {
            unembedding,
            values: BTreeMap::new(),
        }
    }

    pub fn insert(&mut self, layer: usize, values: Matrix) {
        self.values.insert(layer, values);
    }

    pub fn unembedding(&self) -> &Matrix {
        &self.unembedding
    }

    pub fn values(&self, layer: usize) -> Option<&Matrix> {
        self.values.get(&layer)
    }

    /// Loads `unembed.bin` and the value matrices of `layers` that exist.
    /// Returns `None` when the store has no unembedding.
    pub fn load(store: &StoreHandle, layers: impl IntoIterator<Item = usize>) -> Result<Option<Self>> {
        let Some(unembedding) = store.unembedding()? else {
            return Ok(None);
        };
        let mut set = Self::new(unembedding);
        for layer in layers {
            if let Some(m) = store.value_matrix(layer)? {
                set.insert(layer, m);
            }
        }
        Ok(Some(set))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TriggerScore {
    pub token: u32,
    pub score: f64,
    /// 0 = the most suppressed token of the vocabulary.
    pub rank_from_bottom: usize,
    pub in_bottom_k: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SuppressionEntry {
    pub layer: usize,
    pub neuron: u32,
    pub triggers: Vec<TriggerScore>,
    /// Every trigger token has a strictly negative score.
    pub suppressed: bool,
    pub all_in_bottom_k: bool,
    pub top_promoted: Vec<ScoredToken>,
    pub top_suppressed: Vec<ScoredToken>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SuppressionReport {
    pub k: usize,
    pub centered: bool,
    pub n_detectors: usize,
    pub n_suppressed: usize,
    /// `n_suppressed / n_detectors`; `None` without detectors.
    pub rate: Option<f64>,
    pub excluded_layers: Vec<usize>,
    pub warnings: Vec<String>,
    pub entries: Vec<SuppressionEntry>,
}

/// Projects every detector's value row and checks whether it points away
/// from the detector's own trigger tokens. For trigram detectors the trigger
/// is the last token of each covered trigram. Detectors of layers without a
/// value matrix are skipped with a warning.
pub fn suppression_rate(
    detectors: &[TokenDetectorRecord],
    weights: &WeightSet,
    k: usize,
    options: ProjectionOptions,
) -> Result<SuppressionReport> {
    let mut entries = Vec::with_capacity(detectors.len());
    let mut excluded_layers = Vec::new();
    let mut warnings = Vec::new();
    for det in detectors {
        let Some(values) = weights.values(det.layer) else {
            if !excluded_layers.contains(&det.layer) {
                excluded_layers.push(det.layer);
                let msg = format!(
                    "no value matrix for layer {}; its detectors are excluded",
                    det.layer
                );
                log::warn!("{msg}");
                warnings.push(msg);
            }
            continue;
        };
        let proj = project_row(values, weights.unembedding(), det.layer, det.neuron, k, options)?;
        let triggers: Vec<TriggerScore> = det
            .trigger_tokens()
            .into_iter()
            .map(|token| {
                let rank = rank_from_bottom(&proj.scores, token);
                TriggerScore {
                    token,
                    score: proj.scores[token as usize],
                    rank_from_bottom: rank,
                    in_bottom_k: rank < k,
                }
            })
            .collect();
        entries.push(SuppressionEntry {
            layer: det.layer,
            neuron: det.neuron,
            suppressed: !triggers.is_empty() && triggers.iter().all(|t| t.score < 0.0),
            all_in_bottom_k: triggers.iter().all(|t| t.in_bottom_k),
            triggers,
            top_promoted: proj.top_promoted,
            top_suppressed: proj.top_suppressed,
        });
    }
    excluded_layers.sort_unstable();
    let n_suppressed = entries.iter().filter(|e| e.suppressed).count();
    let n_detectors = entries.len();
    Ok(SuppressionReport {
        k,
        centered: options.center,
        n_detectors,
        n_suppressed,
        rate: (n_detectors > 0).then(|| n_suppressed as f64 / n_detectors as f64),
        excluded_layers,
        warnings,
        entries,
    })
}
