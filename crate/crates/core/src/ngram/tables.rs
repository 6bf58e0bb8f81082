// SPDX-License-Identifier: MIT OR Apache-2.0

use rayon::prelude::*;
use rustc_hash::FxHashMap;
use serde::Serialize;

use crate::actstore::{LayerEvents, StoreHandle, TokenIndex};
use crate::{Error, Result};

use super::key::{NgramKey, MAX_N, MAX_VOCAB};

/// Distinct-key limit after which a neuron's table is dropped and marked diffuse.
pub const DEFAULT_DIFFUSE_CAP: usize = 100_000;

/// Memory allowed for the dense neuron × token counters of the unigram path.
pub const DEFAULT_DENSE_BUDGET_BYTES: usize = 1 << 30;

/// Per-position key marker for "no complete n-gram here".
const NO_KEY: u64 = u64::MAX;
/// Bit 61 is unused by packed keys; marks keys that contain BOS.
const BOS_FLAG: u64 = 1 << 61;

/// Triggering n-grams of one neuron with their counts.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NeuronTriggerTable {
    pub layer: usize,
    pub neuron: u32,
    pub n: usize,
    /// Sorted by key. Empty when `diffuse`.
    entries: Vec<(NgramKey, u64)>,
    /// Activations at positions that have a complete in-document n-gram.
    pub total_triggers: u64,
    /// Part of `total_triggers` whose n-gram contains BOS.
    pub bos_triggers: u64,
    /// All activations of the neuron, including positions without a complete n-gram.
    pub activation_count: u64,
    pub diffuse: bool,
}

impl NeuronTriggerTable {
    /// Table from explicit (key, count) pairs; duplicate keys are summed and
    /// zero counts dropped.
    pub fn from_entries(
        layer: usize,
        neuron: u32,
        n: usize,
        entries: impl IntoIterator<Item = (NgramKey, u64)>,
        bos_token: u32,
    ) -> Self {
        let mut map: FxHashMap<NgramKey, u64> = FxHashMap::default();
        for (k, c) in entries {
            assert_eq!(k.n(), n, "key length differs from table n");
            if c > 0 {
                *map.entry(k).or_default() += c;
            }
        }
        let mut entries: Vec<_> = map.into_iter().collect();
        entries.sort_unstable_by_key(|e| e.0);
        let total_triggers = entries.iter().map(|e| e.1).sum();
        let bos_triggers = entries
            .iter()
            .filter(|(k, _)| k.contains(bos_token))
            .map(|e| e.1)
            .sum();
        Self {
            layer,
            neuron,
            n,
            entries,
            total_triggers,
            bos_triggers,
            activation_count: total_triggers,
            diffuse: false,
        }
    }

    pub fn entries(&self) -> &[(NgramKey, u64)] {
        &self.entries
    }

    pub fn distinct(&self) -> usize {
        self.entries.len()
    }

    pub fn get(&self, key: NgramKey) -> u64 {
        self.entries
            .binary_search_by_key(&key, |e| e.0)
            .map_or(0, |i| self.entries[i].1)
    }

    /// Entries by descending count, ties by ascending key.
    pub fn by_count(&self) -> Vec<(NgramKey, u64)> {
        let mut out = self.entries.clone();
        out.sort_unstable_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
        out
    }

    /// The same table with every n-gram containing `bos` removed from both
    /// the entries and the totals.
    pub fn without_bos(&self, bos: u32) -> Self {
        let entries = self
            .entries
            .iter()
            .copied()
            .filter(|(k, _)| !k.contains(bos))
            .collect();
        Self {
            entries,
            total_triggers: self.total_triggers - self.bos_triggers,
            bos_triggers: 0,
            ..self.clone()
        }
    }
}

#[derive(Debug, Clone)]
pub struct TableConfig {
    pub n: usize,
    pub diffuse_cap: usize,
    pub dense_budget_bytes: usize,
}

impl TableConfig {
    pub fn new(n: usize) -> Self {
        Self {
            n,
            diffuse_cap: DEFAULT_DIFFUSE_CAP,
            dense_budget_bytes: DEFAULT_DENSE_BUDGET_BYTES,
        }
    }
}

/// Trigger tables of every alive neuron of `layer`, ordered by neuron id.
pub fn build_trigger_tables(store: &StoreHandle, layer: usize, n: usize) -> Result<Vec<NeuronTriggerTable>> {
    build_trigger_tables_with(store, layer, &TableConfig::new(n))
}

pub fn build_trigger_tables_with(
    store: &StoreHandle,
    layer: usize,
    config: &TableConfig,
) -> Result<Vec<NeuronTriggerTable>> {
    let mut out = Vec::new();
    for_each_trigger_table(store, layer, config, |t| out.push(t))?;
    Ok(out)
}

/// Streams trigger tables in neuron order without holding all of them.
///
/// Unigram tables are counted in dense neuron × token arrays, in as many
/// passes over the layer file as the memory budget requires; longer n-grams
/// use one hash map per neuron. Within a pass, neuron ranges are counted in
/// parallel and emitted in order.
pub fn for_each_trigger_table<F>(
    store: &StoreHandle,
    layer: usize,
    config: &TableConfig,
    mut emit: F,
) -> Result<()>
where
    F: FnMut(NeuronTriggerTable),
{
    let manifest = store.manifest();
    if !(1..=MAX_N).contains(&config.n) {
        return Err(Error::InvalidArgument(format!(
            "n must be 1, 2 or 3, got {}",
            config.n
        )));
    }
    if manifest.vocab_size > MAX_VOCAB {
        return Err(Error::InvalidArgument(format!(
            "vocab_size {} exceeds the n-gram key range {MAX_VOCAB}",
            manifest.vocab_size
        )));
    }
    let tokens = store.token_index()?;
    let events = store.layer(layer)?;
    let d_ffn = manifest.d_ffn;
    let vocab = manifest.vocab_size;
    let bos = manifest.bos_token_id;
    let threads = rayon::current_num_threads().max(1);

    let dense = config.n == 1 && tokens.len() <= u32::MAX as usize;
    if dense {
        let per_pass = (config.dense_budget_bytes / (vocab * 4)).clamp(1, d_ffn);
        let mut lo = 0;
        while lo < d_ffn {
            let hi = (lo + per_pass).min(d_ffn);
            let ranges = split_range(lo, hi, threads);
            let parts = ranges
                .into_par_iter()
                .map(|(a, b)| {
                    dense_unigram_shard(
                        &events,
                        tokens.tokens(),
                        a,
                        b,
                        vocab,
                        layer,
                        bos,
                        config.diffuse_cap,
                    )
                })
                .collect::<Result<Vec<_>>>()?;
            parts.into_iter().flatten().for_each(&mut emit);
            lo = hi;
        }
    } else {
        let keys = position_keys(tokens, config.n, bos);
        let parts = split_range(0, d_ffn, threads)
            .into_par_iter()
            .map(|(a, b)| hashed_shard(&events, &keys, a, b, config.n, layer, config.diffuse_cap))
            .collect::<Result<Vec<_>>>()?;
        parts.into_iter().flatten().for_each(&mut emit);
    }
    Ok(())
}

fn split_range(lo: usize, hi: usize, parts: usize) -> Vec<(usize, usize)> {
    let len = hi - lo;
    let parts = parts.clamp(1, len.max(1));
    let per = len.div_ceil(parts);
    (0..parts)
        .map(|i| (lo + (i * per).min(len), lo + ((i + 1) * per).min(len)))
        .filter(|(a, b)| a < b)
        .collect()
}

/// Packed key of the n-gram ending at every position (or `NO_KEY`), with
/// `BOS_FLAG` set when the n-gram contains BOS.
pub(crate) fn position_keys(tokens: &TokenIndex, n: usize, bos: u32) -> Vec<u64> {
    let mut keys = vec![NO_KEY; tokens.len()];
    let toks = tokens.tokens();
    for d in 0..tokens.n_docs() {
        let range = tokens.doc_range(d);
        for pos in (range.start + n - 1)..range.end {
            let gram = &toks[pos + 1 - n..=pos];
            let mut raw = NgramKey::new(gram).raw();
            if gram.contains(&bos) {
                raw |= BOS_FLAG;
            }
            keys[pos] = raw;
        }
    }
    keys
}

#[allow(clippy::too_many_arguments)]
fn dense_unigram_shard(
    events: &LayerEvents,
    tokens: &[u32],
    lo: usize,
    hi: usize,
    vocab: usize,
    layer: usize,
    bos: u32,
    cap: usize,
) -> Result<Vec<NeuronTriggerTable>> {
    let width = hi - lo;
    let (lo32, hi32) = (lo as u32, hi as u32);
    let mut counts = vec![0u32; width * vocab];
    let mut activations = vec![0u64; width];
    for (pos, record) in events.iter().enumerate() {
        let record = record?;
        let t = tokens[pos] as usize;
        for n in record.neurons() {
            if n >= hi32 {
                break;
            }
            if n >= lo32 {
                let i = (n - lo32) as usize;
                counts[i * vocab + t] += 1;
                activations[i] += 1;
            }
        }
    }
    let mut out = Vec::new();
    for (i, &activation_count) in activations.iter().enumerate() {
        if activation_count == 0 {
            continue;
        }
        let row = &counts[i * vocab..(i + 1) * vocab];
        let distinct = row.iter().filter(|&&c| c > 0).count();
        let diffuse = distinct > cap;
        let entries = if diffuse {
            Vec::new()
        } else {
            row.iter()
                .enumerate()
                .filter(|(_, &c)| c > 0)
                .map(|(t, &c)| (NgramKey::unigram(t as u32), u64::from(c)))
                .collect()
        };
        out.push(NeuronTriggerTable {
            layer,
            neuron: (lo + i) as u32,
            n: 1,
            entries,
            total_triggers: activation_count,
            bos_triggers: u64::from(row[bos as usize]),
            activation_count,
            diffuse,
        });
    }
    Ok(out)
}

#[derive(Default)]
struct HashedAcc {
    map: Option<FxHashMap<u64, u64>>,
    total: u64,
    bos: u64,
    activations: u64,
}

fn hashed_shard(
    events: &LayerEvents,
    keys: &[u64],
    lo: usize,
    hi: usize,
    n: usize,
    layer: usize,
    cap: usize,
) -> Result<Vec<NeuronTriggerTable>> {
    let (lo32, hi32) = (lo as u32, hi as u32);
    let mut accs: Vec<HashedAcc> = (lo..hi)
        .map(|_| HashedAcc {
            map: Some(FxHashMap::default()),
            ..Default::default()
        })
        .collect();
    for (pos, record) in events.iter().enumerate() {
        let record = record?;
        let key = keys[pos];
        for neuron in record.neurons() {
            if neuron >= hi32 {
                break;
            }
            if neuron < lo32 {
                continue;
            }
            let acc = &mut accs[(neuron - lo32) as usize];
            acc.activations += 1;
            if key == NO_KEY {
                continue;
            }
            acc.total += 1;
            if key & BOS_FLAG != 0 {
                acc.bos += 1;
            }
            if let Some(map) = acc.map.as_mut() {
                *map.entry(key & !BOS_FLAG).or_default() += 1;
                if map.len() > cap {
                    acc.map = None;
                }
            }
        }
    }
    let mut out = Vec::new();
    for (i, acc) in accs.into_iter().enumerate() {
        if acc.activations == 0 {
            continue;
        }
        let diffuse = acc.map.is_none();
        let mut entries: Vec<(NgramKey, u64)> = acc
            .map
            .unwrap_or_default()
            .into_iter()
            .map(|(k, c)| (NgramKey::from_raw(k), c))
            .collect();
        entries.sort_unstable_by_key(|e| e.0);
        out.push(NeuronTriggerTable {
            layer,
            neuron: (lo + i) as u32,
            n,
            entries,
            total_triggers: acc.total,
            bos_triggers: acc.bos,
            activation_count: acc.activations,
            diffuse,
        });
    }
    Ok(out)
}
