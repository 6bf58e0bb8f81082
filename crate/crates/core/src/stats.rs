// SPDX-License-Identifier: MIT OR Apache-2.0

//! Dead-neuron census and activation frequencies.
//!
//! A neuron is dead when it never fires anywhere in the analyzed store. That
//! is a statement about the data as much as the model: reports should always
//! carry the token count next to dead fractions.

use rayon::prelude::*;
use serde::Serialize;

use crate::actstore::StoreHandle;
use crate::Result;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NeuronStats {
    pub layer: usize,
    pub neuron: u32,
    pub activation_count: u64,
    pub total_positions: u64,
    /// `activation_count / total_positions`, 0 for an empty store.
    pub frequency: f64,
    pub is_dead: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LayerSummary {
    pub layer: usize,
    pub n_neurons: usize,
    pub dead_count: usize,
    pub dead_fraction: f64,
    /// Mean frequency over alive neurons; `None` when every neuron is dead.
    pub mean_alive_frequency: Option<f64>,
    pub total_positions: u64,
    pub total_events: u64,
}

/// Per-neuron activation counts for one layer in a single streaming pass.
pub fn activation_counts(store: &StoreHandle, layer: usize) -> Result<Vec<u64>> {
    let events = store.layer(layer)?;
    let mut counts = vec![0u64; store.manifest().d_ffn];
    for record in events.iter() {
        for n in record?.neurons() {
            counts[n as usize] += 1;
        }
    }
    Ok(counts)
}

pub fn stats_from_counts(layer: usize, counts: &[u64], total_positions: u64) -> Vec<NeuronStats> {
    counts
        .iter()
        .enumerate()
        .map(|(neuron, &activation_count)| NeuronStats {
            layer,
            neuron: neuron as u32,
            activation_count,
            total_positions,
            frequency: if total_positions == 0 {
                0.0
            } else {
                activation_count as f64 / total_positions as f64
            },
            is_dead: activation_count == 0,
        })
        .collect()
}

pub fn neuron_stats(store: &StoreHandle, layer: usize) -> Result<Vec<NeuronStats>> {
    let counts = activation_counts(store, layer)?;
    Ok(stats_from_counts(layer, &counts, store.total_tokens()))
}

pub fn summarize_layer(layer: usize, stats: &[NeuronStats], total_positions: u64) -> LayerSummary {
    let n_neurons = stats.len();
    let dead_count = stats.iter().filter(|s| s.is_dead).count();
    let alive = n_neurons - dead_count;
    let mean_alive_frequency = (alive > 0).then(|| {
        stats
            .iter()
            .filter(|s| !s.is_dead)
            .map(|s| s.frequency)
            .sum::<f64>()
            / alive as f64
    });
    LayerSummary {
        layer,
        n_neurons,
        dead_count,
        dead_fraction: if n_neurons == 0 {
            0.0
        } else {
            dead_count as f64 / n_neurons as f64
        },
        mean_alive_frequency,
        total_positions,
        total_events: stats.iter().map(|s| s.activation_count).sum(),
    }
}

/// Summaries for every layer of the store, computed in parallel over layers.
pub fn layer_summaries(store: &StoreHandle) -> Result<Vec<LayerSummary>> {
    (0..store.manifest().n_layers)
        .into_par_iter()
        .map(|layer| {
            let stats = neuron_stats(store, layer)?;
            Ok(summarize_layer(layer, &stats, store.total_tokens()))
        })
        .collect()
}

/// Layer position in `[0, 1]`, used to compare models of different depth.
pub fn relative_depth(layer: usize, n_layers: usize) -> f64 {
    if n_layers <= 1 {
        0.0
    } else {
        layer as f64 / (n_layers - 1) as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn stats(counts: &[u64], total: u64) -> Vec<NeuronStats> {
        stats_from_counts(0, counts, total)
    }

    #[test]
    fn dead_and_saturated_neurons() {
        let s = stats(&[0, 10, 3], 10);
        assert!(s[0].is_dead);
        assert_eq!(s[0].frequency, 0.0);
        assert_eq!(s[1].frequency, 1.0);
        assert!(!s[2].is_dead);
    }

    #[test]
    fn all_dead_layer_has_no_mean() {
        let summary = summarize_layer(0, &stats(&[0, 0, 0], 100), 100);
        assert_eq!(summary.dead_fraction, 1.0);
        assert_eq!(summary.mean_alive_frequency, None);
    }

    #[test]
    fn mean_is_over_alive_only() {
        let summary = summarize_layer(0, &stats(&[0, 10, 30], 100), 100);
        assert!((summary.dead_fraction - 1.0 / 3.0).abs() < 1e-15);
        assert!((summary.mean_alive_frequency.unwrap() - 0.2).abs() < 1e-15);
        assert_eq!(summary.total_events, 40);
    }

    #[test]
    fn depth_endpoints() {
        assert_eq!(relative_depth(0, 12), 0.0);
        assert_eq!(relative_depth(11, 12), 1.0);
        assert_eq!(relative_depth(0, 1), 0.0);
    }
}
