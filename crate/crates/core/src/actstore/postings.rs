// SPDX-License-Identifier: MIT OR Apache-2.0

use rayon::prelude::*;
use serde::Serialize;

use crate::Result;

use super::reader::StoreHandle;

/// Global token positions at which one neuron fired, ascending.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct NeuronPostings {
    pub layer: usize,
    pub neuron: u32,
    pub positions: Vec<u64>,
}

impl NeuronPostings {
    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn contains(&self, pos: u64) -> bool {
        self.positions.binary_search(&pos).is_ok()
    }
}

/// Inverts the forward event file of `layer` into one posting list per neuron
/// (index = neuron id). Neuron-id shards are inverted in parallel; the result
/// does not depend on the shard count.
pub fn invert_postings(store: &StoreHandle, layer: usize) -> Result<Vec<NeuronPostings>> {
    let events = store.layer(layer)?;
    let d_ffn = store.manifest().d_ffn;
    let shards = rayon::current_num_threads().clamp(1, d_ffn);
    let per = d_ffn.div_ceil(shards);

    let parts = (0..shards)
        .into_par_iter()
        .map(|s| {
            let lo = (s * per).min(d_ffn) as u32;
            let hi = ((s + 1) * per).min(d_ffn) as u32;
            let mut lists: Vec<Vec<u64>> = vec![Vec::new(); (hi - lo) as usize];
            for (pos, record) in events.iter().enumerate() {
                for n in record?.neurons() {
                    if n >= lo && n < hi {
                        lists[(n - lo) as usize].push(pos as u64);
                    }
                }
            }
            Ok((lo, lists))
        })
        .collect::<Result<Vec<_>>>()?;

    let mut out = Vec::with_capacity(d_ffn);
    for (lo, lists) in parts {
        for (i, positions) in lists.into_iter().enumerate() {
            out.push(NeuronPostings {
                layer,
                neuron: lo + i as u32,
                positions,
            });
        }
    }
    Ok(out)
}
