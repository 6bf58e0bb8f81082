// SPDX-License-Identifier: MIT OR Apache-2.0

//! Token- and trigram-detector certification.
//!
//! A neuron is a detector for a group of n-grams when
//! 1. few n-grams trigger it (covering set of at most `max_group` keys),
//! 2. each n-gram in the group fires the neuron on at least 95% of its
//!    occurrences (the n-gram is *covered*), and
//! 3. the covered n-grams together account for at least 95% of the neuron's
//!    activations.
//!
//! Every n-gram containing BOS is removed from the candidates and from the
//! activation totals before any of the three checks.

use rustc_hash::{FxHashMap, FxHashSet};
use serde::{Deserialize, Serialize};

use crate::actstore::{StoreHandle, TokenIndex};
use crate::{Error, Result};

use super::coverage::{covering_set_size, reaches, CoverSize};
use super::key::NgramKey;
use super::tables::{build_trigger_tables_with, NeuronTriggerTable, TableConfig, DEFAULT_DIFFUSE_CAP};

/// How condition 1 ("triggered by only a few n-grams") is read.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GroupRule {
    /// The 95%-covering set has at most `max_group` keys.
    CoveringSet,
    /// At most `max_group` distinct n-grams trigger the neuron at all.
    DistinctTriggers,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DetectorConfig {
    pub n: usize,
    pub coverage: f64,
    pub co_activation: f64,
    pub joint_coverage: f64,
    pub max_group: usize,
    /// N-grams seen fewer times than this cannot be covered.
    pub min_occurrences: u64,
    pub rule: GroupRule,
    pub diffuse_cap: usize,
}

impl DetectorConfig {
    pub fn tokens() -> Self {
        Self {
            n: 1,
            coverage: 0.95,
            co_activation: 0.95,
            joint_coverage: 0.95,
            max_group: 5,
            min_occurrences: 10,
            rule: GroupRule::CoveringSet,
            diffuse_cap: DEFAULT_DIFFUSE_CAP,
        }
    }

    pub fn trigrams() -> Self {
        Self {
            n: 3,
            max_group: 50,
            ..Self::tokens()
        }
    }

    pub fn for_n(n: usize) -> Result<Self> {
        match n {
            1 => Ok(Self::tokens()),
            3 => Ok(Self::trigrams()),
            _ => Err(Error::InvalidArgument(format!(
                "detectors are defined for n = 1 or 3, got {n}"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CoveredNgram {
    pub key: NgramKey,
    /// Occurrences of the n-gram in the store.
    pub occurrences: u64,
    /// Occurrences on which the neuron fired.
    pub co_activations: u64,
}

impl CoveredNgram {
    pub fn rate(&self) -> f64 {
        self.co_activations as f64 / self.occurrences as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TokenDetectorRecord {
    pub layer: usize,
    pub neuron: u32,
    pub n: usize,
    /// Largest co-activation count first, ties by ascending key.
    pub covered: Vec<CoveredNgram>,
    /// Activations at complete, BOS-free n-grams.
    pub activations: u64,
    pub joint_coverage: f64,
}

impl TokenDetectorRecord {
    pub fn keys(&self) -> impl Iterator<Item = NgramKey> + '_ {
        self.covered.iter().map(|c| c.key)
    }

    /// Tokens at the activation position of each covered n-gram, deduplicated.
    pub fn trigger_tokens(&self) -> Vec<u32> {
        let mut out: Vec<u32> = self.keys().map(NgramKey::last).collect();
        out.sort_unstable();
        out.dedup();
        out
    }
}

/// Occurrence counts of n-grams over the token stream, counting only
/// complete in-document n-grams.
#[derive(Debug, Clone)]
pub struct NgramOccurrences {
    dense: Option<Vec<u64>>,
    sparse: FxHashMap<NgramKey, u64>,
}

impl NgramOccurrences {
    pub fn unigrams(tokens: &TokenIndex, vocab_size: usize) -> Self {
        let mut dense = vec![0u64; vocab_size];
        for &t in tokens.tokens() {
            dense[t as usize] += 1;
        }
        Self {
            dense: Some(dense),
            sparse: FxHashMap::default(),
        }
    }

    /// Counts only the requested keys (all of length `n`).
    pub fn for_keys(tokens: &TokenIndex, n: usize, keys: &FxHashSet<NgramKey>) -> Self {
        let mut sparse: FxHashMap<NgramKey, u64> = keys.iter().map(|&k| (k, 0)).collect();
        let toks = tokens.tokens();
        for d in 0..tokens.n_docs() {
            let range = tokens.doc_range(d);
            for pos in (range.start + n - 1)..range.end {
                if let Some(c) = sparse.get_mut(&NgramKey::new(&toks[pos + 1 - n..=pos])) {
                    *c += 1;
                }
            }
        }
        Self { dense: None, sparse }
    }

    pub fn get(&self, key: NgramKey) -> u64 {
        match &self.dense {
            Some(d) if key.n() == 1 => d.get(key.last() as usize).copied().unwrap_or(0),
            _ => self.sparse.get(&key).copied().unwrap_or(0),
        }
    }
}

/// Condition 1 on a BOS-free table.
pub fn passes_group_rule(table: &NeuronTriggerTable, config: &DetectorConfig) -> bool {
    if table.diffuse || table.total_triggers == 0 {
        return false;
    }
    match config.rule {
        GroupRule::CoveringSet => matches!(
            covering_set_size(table, config.coverage),
            CoverSize::Exact(k) if k <= config.max_group
        ),
        GroupRule::DistinctTriggers => table.distinct() <= config.max_group,
    }
}

/// Checks conditions 1-3 for one BOS-free table. `occurrences` returns how
/// often an n-gram occurs in the store.
pub fn evaluate_detector(
    table: &NeuronTriggerTable,
    occurrences: impl Fn(NgramKey) -> u64,
    config: &DetectorConfig,
) -> Option<TokenDetectorRecord> {
    if !passes_group_rule(table, config) {
        return None;
    }
    let mut covered: Vec<CoveredNgram> = table
        .entries()
        .iter()
        .filter_map(|&(key, co_activations)| {
            let occurrences = occurrences(key);
            let eligible = occurrences >= config.min_occurrences.max(1)
                && reaches(co_activations, occurrences, config.co_activation);
            eligible.then_some(CoveredNgram {
                key,
                occurrences,
                co_activations,
            })
        })
        .collect();
    if covered.is_empty() || covered.len() > config.max_group {
        return None;
    }
    let covered_sum: u64 = covered.iter().map(|c| c.co_activations).sum();
    if !reaches(covered_sum, table.total_triggers, config.joint_coverage) {
        return None;
    }
    covered.sort_by(|a, b| b.co_activations.cmp(&a.co_activations).then(a.key.cmp(&b.key)));
    Some(TokenDetectorRecord {
        layer: table.layer,
        neuron: table.neuron,
        n: table.n,
        covered,
        activations: table.total_triggers,
        joint_coverage: covered_sum as f64 / table.total_triggers as f64,
    })
}

/// Detectors among already-built trigger tables (BOS is stripped here).
pub fn detect_in_tables(
    tables: &[NeuronTriggerTable],
    tokens: &TokenIndex,
    vocab_size: usize,
    bos: u32,
    config: &DetectorConfig,
) -> Vec<TokenDetectorRecord> {
    let candidates: Vec<NeuronTriggerTable> = tables
        .iter()
        .filter(|t| t.n == config.n)
        .map(|t| t.without_bos(bos))
        .filter(|t| passes_group_rule(t, config))
        .collect();
    let occurrences = if config.n == 1 {
        NgramOccurrences::unigrams(tokens, vocab_size)
    } else {
        let keys: FxHashSet<NgramKey> = candidates
            .iter()
            .flat_map(|t| t.entries().iter().map(|e| e.0))
            .collect();
        NgramOccurrences::for_keys(tokens, config.n, &keys)
    };
    candidates
        .iter()
        .filter_map(|t| evaluate_detector(t, |k| occurrences.get(k), config))
        .collect()
}

/// All detectors of `layer`, ordered by neuron id.
pub fn find_detectors(
    store: &StoreHandle,
    layer: usize,
    config: &DetectorConfig,
) -> Result<Vec<TokenDetectorRecord>> {
    if config.n != 1 && config.n != 3 {
        return Err(Error::InvalidArgument(format!(
            "detectors are defined for n = 1 or 3, got {}",
            config.n
        )));
    }
    let table_config = TableConfig {
        diffuse_cap: config.diffuse_cap,
        ..TableConfig::new(config.n)
    };
    let tables = build_trigger_tables_with(store, layer, &table_config)?;
    let manifest = store.manifest();
    Ok(detect_in_tables(
        &tables,
        store.token_index()?,
        manifest.vocab_size,
        manifest.bos_token_id,
        config,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    const BOS: u32 = 0;

    fn uni(entries: &[(u32, u64)]) -> NeuronTriggerTable {
        NeuronTriggerTable::from_entries(
            0,
            7,
            1,
            entries.iter().map(|&(t, c)| (NgramKey::unigram(t), c)),
            BOS,
        )
        .without_bos(BOS)
    }

    fn occ(map: &[(u32, u64)]) -> impl Fn(NgramKey) -> u64 + '_ {
        move |k| map.iter().find(|e| e.0 == k.last()).map_or(0, |e| e.1)
    }

    #[test]
    fn high_rate_single_token_is_detector() {
        let t = uni(&[(42, 97)]);
        let r = evaluate_detector(&t, occ(&[(42, 100)]), &DetectorConfig::tokens()).unwrap();
        assert_eq!(r.trigger_tokens(), vec![42]);
        assert_eq!(r.joint_coverage, 1.0);
        assert!((r.covered[0].rate() - 0.97).abs() < 1e-12);
    }

    #[test]
    fn half_rate_is_rejected() {
        let t = uni(&[(42, 50)]);
        assert!(evaluate_detector(&t, occ(&[(42, 100)]), &DetectorConfig::tokens()).is_none());
    }

    #[test]
    fn bos_is_excluded_from_totals() {
        // 60 BOS activations would sink the joint coverage if counted.
        let t = NeuronTriggerTable::from_entries(
            0,
            1,
            1,
            [(NgramKey::unigram(BOS), 60), (NgramKey::unigram(9), 40)],
            BOS,
        );
        let config = DetectorConfig::tokens();
        let occurrences = occ(&[(BOS, 1000), (9, 40)]);
        assert!(evaluate_detector(&t, &occurrences, &config).is_none());
        let r = evaluate_detector(&t.without_bos(BOS), &occurrences, &config).unwrap();
        assert_eq!(r.trigger_tokens(), vec![9]);
        assert_eq!(r.activations, 40);
    }

    #[test]
    fn rare_tokens_are_ineligible() {
        let t = uni(&[(5, 9)]);
        assert!(evaluate_detector(&t, occ(&[(5, 9)]), &DetectorConfig::tokens()).is_none());
        let t = uni(&[(5, 10)]);
        assert!(evaluate_detector(&t, occ(&[(5, 10)]), &DetectorConfig::tokens()).is_some());
    }

    #[test]
    fn joint_coverage_condition() {
        // Token 3 is covered but only explains 90% of activations.
        let t = uni(&[(3, 90), (4, 10)]);
        let o = occ(&[(3, 90), (4, 1000)]);
        let mut config = DetectorConfig::tokens();
        config.coverage = 0.9;
        assert!(evaluate_detector(&t, &o, &config).is_none());
    }

    #[test]
    fn group_rules_differ() {
        // Six distinct tokens, but one of them dominates.
        let mut entries = vec![(10, 1000)];
        entries.extend((11..16).map(|t| (t, 2)));
        let t = uni(&entries);
        let mut o: Vec<(u32, u64)> = vec![(10, 1000)];
        o.extend((11..16).map(|t| (t, 500)));
        let config = DetectorConfig::tokens();
        assert!(evaluate_detector(&t, occ(&o), &config).is_some());
        let strict = DetectorConfig {
            rule: GroupRule::DistinctTriggers,
            ..config
        };
        assert!(evaluate_detector(&t, occ(&o), &strict).is_none());
    }

    #[test]
    fn trigram_occurrences_count_complete_ngrams() {
        use crate::actstore::{Document, TokenStream};
        let ix = TokenIndex::from_stream(&TokenStream::new(vec![
            Document::new(0, 0, vec![0, 1, 2, 3, 1, 2, 3]),
            Document::new(1, 0, vec![0, 2, 3]),
        ]));
        let key = NgramKey::new(&[1, 2, 3]);
        let keys: FxHashSet<_> = [key, NgramKey::new(&[0, 2, 3])].into_iter().collect();
        let o = NgramOccurrences::for_keys(&ix, 3, &keys);
        assert_eq!(o.get(key), 2);
        assert_eq!(o.get(NgramKey::new(&[0, 2, 3])), 1);
    }
}
