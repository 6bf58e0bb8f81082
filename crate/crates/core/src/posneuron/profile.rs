// SPDX-License-Identifier: MIT OR Apache-2.0

use serde::Serialize;

use crate::actstore::StoreHandle;
use crate::{Error, Result};

use super::mi::mutual_information;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PositionalProfile {
    pub layer: usize,
    pub neuron: u32,
    /// Activation frequency at each within-window position (index 0 is
    /// position 1).
    pub fr_pos: Vec<f64>,
    /// Mean of `fr_pos`.
    pub fr: f64,
    /// I(act; pos) in nats.
    pub mi: f64,
    pub n_windows: u64,
}

impl PositionalProfile {
    pub fn from_frequencies(layer: usize, neuron: u32, fr_pos: Vec<f64>, n_windows: u64) -> Self {
        let fr = if fr_pos.is_empty() {
            0.0
        } else {
            fr_pos.iter().sum::<f64>() / fr_pos.len() as f64
        };
        let mi = mutual_information(&fr_pos);
        Self {
            layer,
            neuron,
            fr_pos,
            fr,
            mi,
            n_windows,
        }
    }

    pub fn from_counts(layer: usize, neuron: u32, counts: &[u32], n_windows: u64) -> Self {
        let denom = n_windows.max(1) as f64;
        let fr_pos = counts.iter().map(|&c| c as f64 / denom).collect();
        Self::from_frequencies(layer, neuron, fr_pos, n_windows)
    }

    pub fn context_len(&self) -> usize {
        self.fr_pos.len()
    }

    pub fn mi_bits(&self) -> f64 {
        self.mi / std::f64::consts::LN_2
    }
}

/// Activation counts of one domain, `d_ffn x context_len`, row per neuron.
#[derive(Debug, Clone)]
pub struct DomainCounts {
    pub domain_id: u32,
    pub name: String,
    pub n_windows: u64,
    counts: Vec<u32>,
}

/// Per-position activation counts of every neuron of one layer.
#[derive(Debug, Clone)]
pub struct PositionalProfiles {
    layer: usize,
    d_ffn: usize,
    context_len: usize,
    n_windows: u64,
    pooled: Vec<u32>,
    domains: Vec<DomainCounts>,
}

impl PositionalProfiles {
    pub fn layer(&self) -> usize {
        self.layer
    }

    pub fn d_ffn(&self) -> usize {
        self.d_ffn
    }

    pub fn context_len(&self) -> usize {
        self.context_len
    }

    pub fn n_windows(&self) -> u64 {
        self.n_windows
    }

    pub fn counts(&self, neuron: u32) -> &[u32] {
        let t = self.context_len;
        &self.pooled[neuron as usize * t..(neuron as usize + 1) * t]
    }

    /// Pooled profile over all full-length windows.
    pub fn profile(&self, neuron: u32) -> PositionalProfile {
        PositionalProfile::from_counts(self.layer, neuron, self.counts(neuron), self.n_windows)
    }

    pub fn profiles(&self) -> impl Iterator<Item = PositionalProfile> + '_ {
        (0..self.d_ffn as u32).map(|n| self.profile(n))
    }

    /// Domains that contributed at least one window.
    pub fn domains(&self) -> &[DomainCounts] {
        &self.domains
    }

    /// Profile restricted to the windows of one domain.
    pub fn domain_profile(&self, domain_id: u32, neuron: u32) -> Option<PositionalProfile> {
        let d = self.domains.iter().find(|d| d.domain_id == domain_id)?;
        let t = self.context_len;
        let row = &d.counts[neuron as usize * t..(neuron as usize + 1) * t];
        Some(PositionalProfile::from_counts(
            self.layer,
            neuron,
            row,
            d.n_windows,
        ))
    }
}

/// One streaming pass over `layer`, counting activations per within-window
/// position. Documents shorter than `context_len` are skipped.
pub fn positional_profiles(store: &StoreHandle, layer: usize) -> Result<PositionalProfiles> {
    let manifest = store.manifest();
    let t = manifest.context_len;
    let d_ffn = manifest.d_ffn;
    let windows: Vec<(u64, usize)> = store
        .documents()
        .filter(|d| d.len() == t)
        .map(|d| (d.start, d.domain_id as usize))
        .collect();
    if windows.is_empty() {
        return Err(Error::NoFullLengthDocuments { context_len: t });
    }
    let n_domains = manifest.domain_names.len();
    let mut per_domain: Vec<Option<Vec<u32>>> = vec![None; n_domains];
    let mut domain_windows = vec![0u64; n_domains];
    for &(_, dom) in &windows {
        domain_windows[dom] += 1;
        per_domain[dom].get_or_insert_with(|| vec![0u32; d_ffn * t]);
    }

    let events = store.layer(layer)?;
    let mut w = 0usize;
    for (global, record) in events.iter().enumerate() {
        let record = record?;
        let global = global as u64;
        while w < windows.len() && windows[w].0 + t as u64 <= global {
            w += 1;
        }
        if w == windows.len() {
            // Still validate the rest of the file.
            continue;
        }
        let (start, dom) = windows[w];
        if global < start {
            continue;
        }
        let p = (global - start) as usize;
        let counts = per_domain[dom]
            .as_mut()
            .expect("allocated for every window domain");
        for n in record.neurons() {
            counts[n as usize * t + p] += 1;
        }
    }

    let mut pooled = vec![0u32; d_ffn * t];
    let mut domains = Vec::new();
    for (dom, counts) in per_domain.into_iter().enumerate() {
        let Some(counts) = counts else { continue };
        for (acc, c) in pooled.iter_mut().zip(&counts) {
            *acc += c;
        }
        domains.push(DomainCounts {
            domain_id: dom as u32,
            name: manifest.domain_names[dom].clone(),
            n_windows: domain_windows[dom],
            counts,
        });
    }
    Ok(PositionalProfiles {
        layer,
        d_ffn,
        context_len: t,
        n_windows: windows.len() as u64,
        pooled,
        domains,
    })
}

/// Mean of `values` over `bins` contiguous, nearly equal chunks.
pub fn downsample(values: &[f64], bins: usize) -> Vec<f64> {
    if bins == 0 || values.is_empty() {
        return Vec::new();
    }
    if bins >= values.len() {
        return values.to_vec();
    }
    (0..bins)
        .map(|b| {
            let lo = b * values.len() / bins;
            let hi = (b + 1) * values.len() / bins;
            values[lo..hi].iter().sum::<f64>() / (hi - lo) as f64
        })
        .collect()
}
