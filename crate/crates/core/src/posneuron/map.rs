// SPDX-License-Identifier: MIT OR Apache-2.0

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::classify::{classify_with_evidence, ClassifyConfig, PatternClass, PatternEvidence};
use super::mi::DEFAULT_MI_THRESHOLD;
use super::profile::PositionalProfile;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PositionalConfig {
    /// Selection keeps neurons with MI (nats) strictly above this.
    pub threshold: f64,
    #[serde(flatten)]
    pub classify: ClassifyConfig,
}

impl Default for PositionalConfig {
    fn default() -> Self {
        Self {
            threshold: DEFAULT_MI_THRESHOLD,
            classify: ClassifyConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PositionalNeuron {
    pub neuron: u32,
    pub mi: f64,
    pub mi_bits: f64,
    pub fr: f64,
    pub class: PatternClass,
    pub evidence: PatternEvidence,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LayerPositional {
    pub layer: usize,
    pub n_neurons: usize,
    /// Selected neurons, by neuron id.
    pub neurons: Vec<PositionalNeuron>,
}

/// Selects and classifies the positional neurons among `profiles`.
pub fn classify_layer(
    layer: usize,
    profiles: &[PositionalProfile],
    config: &PositionalConfig,
) -> LayerPositional {
    let mut neurons: Vec<PositionalNeuron> = profiles
        .par_iter()
        .filter(|p| p.mi > config.threshold)
        .map(|p| {
            let evidence = classify_with_evidence(&p.fr_pos, &config.classify);
            PositionalNeuron {
                neuron: p.neuron,
                mi: p.mi,
                mi_bits: p.mi_bits(),
                fr: p.fr,
                class: evidence.class,
                evidence,
            }
        })
        .collect();
    neurons.sort_by_key(|n| n.neuron);
    LayerPositional {
        layer,
        n_neurons: profiles.len(),
        neurons,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PositionalMap {
    pub n_layers: usize,
    pub layers: Vec<LayerPositional>,
}

impl PositionalMap {
    pub fn is_empty(&self) -> bool {
        self.layers.iter().all(|l| l.neurons.is_empty())
    }

    /// `(layer, neuron, class)` for every positional neuron.
    pub fn entries(&self) -> impl Iterator<Item = (usize, u32, PatternClass)> + '_ {
        self.layers
            .iter()
            .flat_map(|l| l.neurons.iter().map(move |n| (l.layer, n.neuron, n.class)))
    }

    pub fn class_counts(&self, layer: usize) -> BTreeMap<PatternClass, usize> {
        let mut counts = BTreeMap::new();
        if let Some(l) = self.layers.iter().find(|l| l.layer == layer) {
            for n in &l.neurons {
                *counts.entry(n.class).or_insert(0) += 1;
            }
        }
        counts
    }
}

pub fn positional_map(n_layers: usize, mut layers: Vec<LayerPositional>) -> PositionalMap {
    layers.sort_by_key(|l| l.layer);
    PositionalMap { n_layers, layers }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::posneuron::{Shape, Strength};

    fn profiles() -> Vec<PositionalProfile> {
        let t = 512;
        let flat = vec![0.3; t];
        let step: Vec<f64> = (0..t).map(|p| if p < 256 { 1.0 } else { 0.0 }).collect();
        let wave: Vec<f64> = (0..t)
            .map(|p| if (p / 64) % 2 == 0 { 1.0 } else { 0.0 })
            .collect();
        vec![
            PositionalProfile::from_frequencies(0, 0, flat.clone(), 10),
            PositionalProfile::from_frequencies(0, 1, step, 10),
            PositionalProfile::from_frequencies(0, 2, flat, 10),
            PositionalProfile::from_frequencies(0, 3, wave, 10),
        ]
    }

    #[test]
    fn selects_and_classifies() {
        let l = classify_layer(0, &profiles(), &PositionalConfig::default());
        let got: Vec<_> = l.neurons.iter().map(|n| (n.neuron, n.class)).collect();
        assert_eq!(
            got,
            vec![
                (1, PatternClass::new(Shape::BothExtremes, Strength::Strong)),
                (3, PatternClass::new(Shape::Oscillatory, Strength::Strong)),
            ]
        );
    }

    #[test]
    fn permutation_invariant() {
        let mut p = profiles();
        let a = classify_layer(0, &p, &PositionalConfig::default());
        p.reverse();
        let b = classify_layer(0, &p, &PositionalConfig::default());
        assert_eq!(a, b);
    }

    #[test]
    fn empty_map() {
        let flat = vec![PositionalProfile::from_frequencies(0, 0, vec![0.5; 64], 1)];
        let m = positional_map(1, vec![classify_layer(0, &flat, &PositionalConfig::default())]);
        assert!(m.is_empty());
        assert_eq!(m.entries().count(), 0);
    }

    #[test]
    fn config_rejects_unknown_keys() {
        let ok: PositionalConfig = serde_json::from_str(r#"{"threshold": 0.1, "epsilon": 0.02}"#).unwrap();
        assert_eq!(ok.threshold, 0.1);
        assert_eq!(ok.classify.epsilon, 0.02);
    }
}
