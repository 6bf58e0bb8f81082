// SPDX-License-Identifier: MIT OR Apache-2.0

//! Synthetic stores with planted structure.
//!
//! Used by the test suites, the throughput benchmark and `neuronscope synth`.
//! Everything is driven by a seeded ChaCha8 generator, so the same spec always
//! produces byte-identical stores.

use std::collections::BTreeSet;
use std::f64::consts::TAU;
use std::path::{Path, PathBuf};

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Geometric, StandardNormal, Zipf};

use crate::actstore::{
    write_store, Document, EventBlock, Matrix, StoreManifest, StoreWriter, TokenIndex, TokenStream,
};
use crate::posneuron::{Shape, Strength};
use crate::{Error, Result};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TokenStreamSpec {
    pub n_tokens: usize,
    pub context_len: usize,
    pub vocab_size: usize,
    pub bos: u32,
    pub n_domains: usize,
    /// Zipf exponent for token ranks; `None` draws uniformly.
    pub zipf_exponent: Option<f64>,
}

/// Documents of `context_len` tokens (the last one may be shorter), each
/// starting with BOS. BOS never appears elsewhere. Domains rotate by document.
pub fn token_stream(spec: &TokenStreamSpec, rng: &mut impl Rng) -> TokenStream {
    assert!(spec.vocab_size >= 2 && spec.context_len >= 2);
    let non_bos = spec.vocab_size - 1;
    let zipf = spec
        .zipf_exponent
        .map(|s| Zipf::new(non_bos as f64, s).expect("valid zipf parameters"));
    let draw = |rng: &mut dyn rand::RngCore| -> u32 {
        let r = match &zipf {
            Some(z) => (z.sample(rng) as usize - 1).min(non_bos - 1),
            None => rng.random_range(0..non_bos),
        } as u32;
        if r >= spec.bos {
            r + 1
        } else {
            r
        }
    };
    let mut docs = Vec::new();
    let mut remaining = spec.n_tokens;
    while remaining > 0 {
        let len = remaining.min(spec.context_len);
        let mut tokens = Vec::with_capacity(len);
        tokens.push(spec.bos);
        for _ in 1..len {
            tokens.push(draw(rng));
        }
        let id = docs.len() as u32;
        docs.push(Document::new(id, id % spec.n_domains.max(1) as u32, tokens));
        remaining -= len;
    }
    TokenStream::new(docs)
}

/// Overwrites `count` random non-overlapping spots (never position 0 of a
/// document) with `phrase`. Returns how many were placed.
pub fn insert_phrase(stream: &mut TokenStream, phrase: &[u32], count: usize, rng: &mut impl Rng) -> usize {
    let mut placed = 0;
    let mut attempts = 0;
    let mut used: BTreeSet<(usize, usize)> = BTreeSet::new();
    let n_docs = stream.documents.len();
    while placed < count && attempts < count * 100 && n_docs > 0 {
        attempts += 1;
        let d = rng.random_range(0..n_docs);
        let len = stream.documents[d].tokens.len();
        if len < phrase.len() + 1 {
            continue;
        }
        let at = rng.random_range(1..=len - phrase.len());
        let clash = (at.saturating_sub(phrase.len())..at + phrase.len()).any(|p| used.contains(&(d, p)));
        if clash {
            continue;
        }
        used.insert((d, at));
        stream.documents[d].tokens[at..at + phrase.len()].copy_from_slice(phrase);
        placed += 1;
    }
    placed
}

/// Accumulates activations for one layer before freezing them into an
/// [`EventBlock`].
#[derive(Debug, Clone)]
pub struct LayerBuilder {
    layer: usize,
    positions: Vec<Vec<u32>>,
}

impl LayerBuilder {
    pub fn new(layer: usize, n_positions: usize) -> Self {
        Self {
            layer,
            positions: vec![Vec::new(); n_positions],
        }
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn activate(&mut self, pos: usize, neuron: u32) {
        self.positions[pos].push(neuron);
    }

    /// Each neuron fires independently at each position with probability
    /// `density`.
    pub fn plant_random(&mut self, neurons: impl IntoIterator<Item = u32>, density: f64, rng: &mut impl Rng) {
        if density <= 0.0 {
            return;
        }
        let geo = Geometric::new(density.min(1.0)).expect("density in (0, 1]");
        let n = self.positions.len() as u64;
        for neuron in neurons {
            let mut pos = geo.sample(rng);
            while pos < n {
                self.positions[pos as usize].push(neuron);
                pos = pos.saturating_add(1 + geo.sample(rng));
            }
        }
    }

    /// Token detector: fires on exactly `round(on_rate * occ)` of the
    /// occurrences of each trigger token, plus `round(off_noise * on)` extra
    /// activations on random positions holding neither a trigger nor BOS.
    /// Returns the total number of activations planted.
    #[allow(clippy::too_many_arguments)]
    pub fn plant_on_tokens(
        &mut self,
        neuron: u32,
        tokens: &TokenIndex,
        triggers: &[u32],
        bos: u32,
        on_rate: f64,
        off_noise: f64,
        rng: &mut impl Rng,
    ) -> usize {
        let toks = tokens.tokens();
        let mut planted = 0;
        for &trigger in triggers {
            let occ: Vec<usize> = (0..toks.len()).filter(|&p| toks[p] == trigger).collect();
            let on = ((on_rate * occ.len() as f64).round() as usize).min(occ.len());
            for i in sample(rng, occ.len(), on) {
                self.positions[occ[i]].push(neuron);
            }
            planted += on;
        }
        let extra = (off_noise * planted as f64).round() as usize;
        let mut placed = 0;
        while placed < extra {
            let p = rng.random_range(0..toks.len());
            if toks[p] == bos || triggers.contains(&toks[p]) || self.positions[p].contains(&neuron) {
                continue;
            }
            self.positions[p].push(neuron);
            placed += 1;
        }
        planted + extra
    }

    /// Fires at the last position of each occurrence of `gram` with
    /// probability `on_rate`.
    pub fn plant_on_ngram(
        &mut self,
        neuron: u32,
        tokens: &TokenIndex,
        gram: &[u32],
        on_rate: f64,
        rng: &mut impl Rng,
    ) {
        for pos in 0..tokens.len() {
            if tokens.ngram_ending_at(pos, gram.len()) == Some(gram) && rng.random_bool(on_rate) {
                self.positions[pos].push(neuron);
            }
        }
    }

    /// Positional neuron: in every document of exactly `fr_pos.len()` tokens,
    /// fires at within-document position `p` with probability `fr_pos[p]`.
    pub fn plant_profile(&mut self, neuron: u32, tokens: &TokenIndex, fr_pos: &[f64], rng: &mut impl Rng) {
        for d in 0..tokens.n_docs() {
            let range = tokens.doc_range(d);
            if range.len() != fr_pos.len() {
                continue;
            }
            for (p, &f) in fr_pos.iter().enumerate() {
                if f >= 1.0 || (f > 0.0 && rng.random::<f64>() < f) {
                    self.positions[range.start + p].push(neuron);
                }
            }
        }
    }

    pub fn finish(mut self) -> EventBlock {
        for p in &mut self.positions {
            p.sort_unstable();
            p.dedup();
        }
        EventBlock::from_positions(self.layer, &self.positions)
    }
}

/// Frequency profile of one positional archetype over `t` positions.
///
/// Strong variants touch 0 and 1 exactly; weak ones stop at 0.1 and 0.9.
/// Square waves have period 200 (at least 128), steps sit at 500/2048 of the
/// window and one-sided patterns are flat for the first 300/2048.
pub fn archetype(shape: Shape, strength: Strength, t: usize, rng: &mut impl Rng) -> Vec<f64> {
    let strong = strength == Strength::Strong;
    let (lo, hi) = if strong { (0.0, 1.0) } else { (0.1, 0.9) };
    let scaled = |x: usize| x * t / 2048;
    match shape {
        Shape::Oscillatory => {
            let half = scaled(200).max(128) / 2;
            (0..t)
                .map(|p| if (p / half) % 2 == 0 { hi } else { lo })
                .collect()
        }
        Shape::BothExtremes => {
            let at = scaled(500);
            (0..t).map(|p| if p < at { hi } else { lo }).collect()
        }
        Shape::OneExtreme => {
            let at = scaled(300);
            (0..t)
                .map(|p| {
                    if p < at {
                        lo
                    } else {
                        0.5 + rng.random_range(-0.1..0.1)
                    }
                })
                .collect()
        }
        Shape::Other => {
            let wave = |p: usize| (TAU * 3.0 * p as f64 / t as f64).sin();
            if strong {
                (0..t).map(|p| 0.5 + 0.25 * wave(p)).collect()
            } else {
                (0..t)
                    .map(|p| 0.5 + 0.2 * wave(p) + rng.random_range(-0.2..0.2))
                    .collect()
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PlantedDetector {
    pub neuron: u32,
    pub triggers: Vec<u32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlantedDetectorSpec {
    pub n_tokens: usize,
    pub n_neurons: usize,
    pub n_detectors: usize,
    pub max_group: usize,
    pub on_rate: f64,
    pub off_noise: f64,
    /// Firing probability of the other neurons.
    pub noise_density: f64,
    pub vocab_size: usize,
    pub context_len: usize,
    pub seed: u64,
}

impl Default for PlantedDetectorSpec {
    fn default() -> Self {
        Self {
            n_tokens: 1_000_000,
            n_neurons: 1000,
            n_detectors: 50,
            max_group: 5,
            on_rate: 0.97,
            off_noise: 0.005,
            noise_density: 0.01,
            vocab_size: 4096,
            context_len: 2048,
            seed: 7,
        }
    }
}

#[derive(Debug, Clone)]
pub struct PlantedDetectorData {
    pub manifest: StoreManifest,
    pub stream: TokenStream,
    pub block: EventBlock,
    pub detectors: Vec<PlantedDetector>,
}

impl PlantedDetectorData {
    pub fn write(&self, dest: impl AsRef<Path>) -> Result<PathBuf> {
        write_store(
            dest,
            &self.manifest,
            &self.stream,
            std::slice::from_ref(&self.block),
        )
    }
}

/// One-layer store with `n_detectors` unigram detectors on disjoint trigger
/// groups; every other neuron fires at random.
pub fn planted_detectors(spec: &PlantedDetectorSpec) -> PlantedDetectorData {
    let mut rng = rng(spec.seed);
    let bos = 0u32;
    let stream = token_stream(
        &TokenStreamSpec {
            n_tokens: spec.n_tokens,
            context_len: spec.context_len,
            vocab_size: spec.vocab_size,
            bos,
            n_domains: 1,
            zipf_exponent: None,
        },
        &mut rng,
    );
    let index = TokenIndex::from_stream(&stream);

    let neurons: BTreeSet<u32> = sample(&mut rng, spec.n_neurons, spec.n_detectors)
        .into_iter()
        .map(|n| n as u32)
        .collect();
    let mut free_tokens: Vec<u32> = (1..spec.vocab_size as u32).collect();
    let mut detectors = Vec::new();
    for &neuron in &neurons {
        let size = rng.random_range(1..=spec.max_group);
        let mut triggers = Vec::with_capacity(size);
        for _ in 0..size {
            let i = rng.random_range(0..free_tokens.len());
            triggers.push(free_tokens.swap_remove(i));
        }
        triggers.sort_unstable();
        detectors.push(PlantedDetector { neuron, triggers });
    }

    let mut layer = LayerBuilder::new(0, index.len());
    for d in &detectors {
        layer.plant_on_tokens(
            d.neuron,
            &index,
            &d.triggers,
            bos,
            spec.on_rate,
            spec.off_noise,
            &mut rng,
        );
    }
    let others = (0..spec.n_neurons as u32).filter(|n| !neurons.contains(n));
    layer.plant_random(others, spec.noise_density, &mut rng);

    let manifest = StoreManifest::new(
        "synthetic-planted-detectors",
        1,
        spec.n_neurons,
        spec.vocab_size,
        spec.context_len,
        bos,
    );
    PlantedDetectorData {
        manifest,
        stream,
        block: layer.finish(),
        detectors,
    }
}

/// Gaussian embedding matrix, `rows x cols`.
pub fn gaussian_matrix(rows: usize, cols: usize, scale: f64, rng: &mut impl Rng) -> Matrix {
    let data = (0..rows * cols)
        .map(|_| (scale * rng.sample::<f64, _>(StandardNormal)) as f32)
        .collect();
    Matrix::new(rows, cols, data).expect("size matches")
}

/// A detector's value row: the embedding of `next` minus the embeddings of
/// all its triggers.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ValuePlant {
    pub neuron: u32,
    pub triggers: Vec<u32>,
    pub next: u32,
}

/// Unembedding (`vocab x d_model`, standard normal) and value matrix
/// (`d_ffn x d_model`). Planted rows follow [`ValuePlant`]; the others are
/// standard normal.
pub fn suppression_weights(
    vocab_size: usize,
    d_model: usize,
    d_ffn: usize,
    plants: &[ValuePlant],
    rng: &mut impl Rng,
) -> (Matrix, Matrix) {
    let unembed = gaussian_matrix(vocab_size, d_model, 1.0, rng);
    let mut values = gaussian_matrix(d_ffn, d_model, 1.0, rng);
    for plant in plants {
        let mut row: Vec<f32> = unembed.row(plant.next as usize).to_vec();
        for &t in &plant.triggers {
            for (r, e) in row.iter_mut().zip(unembed.row(t as usize)) {
                *r -= e;
            }
        }
        values.row_mut(plant.neuron as usize).copy_from_slice(&row);
    }
    (unembed, values)
}

/// Large random store, written layer by layer without holding events in
/// memory.
#[derive(Debug, Clone, PartialEq)]
pub struct RandomStoreSpec {
    pub n_layers: usize,
    pub d_ffn: usize,
    pub vocab_size: usize,
    pub context_len: usize,
    pub n_tokens: usize,
    /// Expected number of firing neurons per token.
    pub events_per_position: f64,
    /// Fraction of dead neurons per layer; missing layers have none.
    pub dead_fraction: Vec<f64>,
    pub zipf_exponent: f64,
    pub seed: u64,
}

impl RandomStoreSpec {
    /// Dead fraction falling linearly from `first` at layer 0 to zero at the
    /// middle of the network.
    pub fn dead_in_first_half(n_layers: usize, first: f64) -> Vec<f64> {
        let half = (n_layers / 2).max(1) as f64;
        (0..n_layers)
            .map(|l| (first * (1.0 - l as f64 / half)).max(0.0))
            .collect()
    }
}

pub fn write_random_store(dest: impl AsRef<Path>, spec: &RandomStoreSpec) -> Result<PathBuf> {
    let mut rng = rng(spec.seed);
    let bos = 2u32;
    let stream = token_stream(
        &TokenStreamSpec {
            n_tokens: spec.n_tokens,
            context_len: spec.context_len,
            vocab_size: spec.vocab_size,
            bos,
            n_domains: 1,
            zipf_exponent: Some(spec.zipf_exponent),
        },
        &mut rng,
    );
    let manifest = StoreManifest::new(
        "synthetic-random",
        spec.n_layers,
        spec.d_ffn,
        spec.vocab_size,
        spec.context_len,
        bos,
    );
    let mut writer = StoreWriter::create(dest, manifest)?;
    writer.write_tokens(&stream)?;
    let n_tokens = stream.total_tokens();
    drop(stream);

    let mut buf = Vec::new();
    for layer in 0..spec.n_layers {
        let dead = spec.dead_fraction.get(layer).copied().unwrap_or(0.0);
        let n_dead = ((dead * spec.d_ffn as f64).round() as usize).min(spec.d_ffn);
        let dead_set: BTreeSet<usize> = sample(&mut rng, spec.d_ffn, n_dead).into_iter().collect();
        let alive: Vec<u32> = (0..spec.d_ffn)
            .filter(|n| !dead_set.contains(n))
            .map(|n| n as u32)
            .collect();
        let mut lw = writer.layer(layer)?;
        if alive.is_empty() || spec.events_per_position <= 0.0 {
            for _ in 0..n_tokens {
                lw.push(&[])?;
            }
        } else {
            let p = (spec.events_per_position / alive.len() as f64).min(1.0);
            let geo = Geometric::new(p).map_err(|e| Error::InvalidArgument(e.to_string()))?;
            for _ in 0..n_tokens {
                buf.clear();
                let mut i = geo.sample(&mut rng);
                while (i as usize) < alive.len() {
                    buf.push(alive[i as usize]);
                    i += 1 + geo.sample(&mut rng);
                }
                lw.push(&buf)?;
            }
        }
        lw.finish()?;
        log::info!("synthetic layer {layer} written");
    }
    writer.finish()
}

/// Small store exercising every analysis, used by `neuronscope synth`.
#[derive(Debug, Clone, PartialEq)]
pub struct DemoSpec {
    pub n_layers: usize,
    pub d_ffn: usize,
    pub vocab_size: usize,
    pub context_len: usize,
    pub full_docs: usize,
    pub short_docs: usize,
    pub d_model: usize,
    pub seed: u64,
}

impl Default for DemoSpec {
    fn default() -> Self {
        Self {
            n_layers: 4,
            d_ffn: 128,
            vocab_size: 512,
            context_len: 512,
            full_docs: 128,
            short_docs: 4,
            d_model: 64,
            seed: 1,
        }
    }
}

/// What [`write_demo_store`] planted, per layer.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct DemoPlan {
    pub dead: Vec<Vec<u32>>,
    pub detectors: Vec<Vec<PlantedDetector>>,
    pub trigram_detectors: Vec<Vec<(u32, [u32; 3])>>,
    pub positional: Vec<Vec<(u32, Shape, Strength)>>,
}

/// Layers get fewer dead neurons with depth; the first half holds unigram
/// detectors (one of them shared across layers) and one trigram detector,
/// the second and third layers hold one positional neuron of each archetype.
pub fn write_demo_store(dest: impl AsRef<Path>, spec: &DemoSpec) -> Result<(PathBuf, DemoPlan)> {
    let mut rng = rng(spec.seed);
    let bos = 1u32;
    let t = spec.context_len;
    let mut stream = token_stream(
        &TokenStreamSpec {
            n_tokens: spec.full_docs * t,
            context_len: t,
            vocab_size: spec.vocab_size,
            bos,
            n_domains: 2,
            zipf_exponent: None,
        },
        &mut rng,
    );
    let phrase = [10u32, 11, 12];
    insert_phrase(&mut stream, &phrase, 60, &mut rng);
    for i in 0..spec.short_docs {
        let len = 2 + (t / 3) * i / spec.short_docs.max(1);
        let mut tokens = vec![bos];
        tokens.extend((1..len).map(|_| rng.random_range(20..spec.vocab_size as u32)));
        let id = stream.documents.len() as u32;
        stream.documents.push(Document::new(id, id % 2, tokens));
    }
    let index = TokenIndex::from_stream(&stream);

    let mut plan = DemoPlan::default();
    let mut blocks = Vec::new();
    let shapes = [
        Shape::Oscillatory,
        Shape::BothExtremes,
        Shape::OneExtreme,
        Shape::Other,
    ];
    let mut next_tokens = Vec::new();
    for layer in 0..spec.n_layers {
        let mut builder = LayerBuilder::new(layer, index.len());
        let dead_frac = 0.4 * (1.0 - layer as f64 / (spec.n_layers as f64 / 2.0).max(1.0));
        let n_dead = ((dead_frac.max(0.0) * spec.d_ffn as f64).round() as usize).min(spec.d_ffn / 2);
        let mut special: Vec<u32> = sample(&mut rng, spec.d_ffn, spec.d_ffn / 2)
            .into_iter()
            .map(|n| n as u32)
            .collect();
        let dead: Vec<u32> = special.drain(..n_dead).collect();
        let mut detectors = Vec::new();
        let mut trigrams = Vec::new();
        let mut positional = Vec::new();
        if layer < spec.n_layers.div_ceil(2) {
            for k in 0..6usize {
                let Some(neuron) = special.pop() else { break };
                let base = 20 + (k as u32) * 4 + if k == 0 { 0 } else { layer as u32 * 40 };
                let triggers: Vec<u32> = (0..=(k % 3) as u32).map(|j| base + j).collect();
                builder.plant_on_tokens(neuron, &index, &triggers, bos, 0.98, 0.0, &mut rng);
                next_tokens.push((layer, neuron, triggers.clone()));
                detectors.push(PlantedDetector { neuron, triggers });
            }
            if let Some(neuron) = special.pop() {
                builder.plant_on_ngram(neuron, &index, &phrase, 1.0, &mut rng);
                trigrams.push((neuron, phrase));
            }
        }
        if layer == 1 || layer == 2 {
            for shape in shapes {
                for strength in [Strength::Strong, Strength::Weak] {
                    let Some(neuron) = special.pop() else { break };
                    let profile = archetype(shape, strength, t, &mut rng);
                    builder.plant_profile(neuron, &index, &profile, &mut rng);
                    positional.push((neuron, shape, strength));
                }
            }
        }
        let busy: BTreeSet<u32> = dead
            .iter()
            .chain(detectors.iter().map(|d| &d.neuron))
            .chain(trigrams.iter().map(|(n, _)| n))
            .chain(positional.iter().map(|(n, _, _)| n))
            .copied()
            .collect();
        let noise = (0..spec.d_ffn as u32).filter(|n| !busy.contains(n));
        builder.plant_random(noise, 0.02, &mut rng);
        blocks.push(builder.finish());
        plan.dead.push(dead);
        plan.detectors.push(detectors);
        plan.trigram_detectors.push(trigrams);
        plan.positional.push(positional);
    }

    let manifest = StoreManifest::new(
        "synthetic-demo",
        spec.n_layers,
        spec.d_ffn,
        spec.vocab_size,
        t,
        bos,
    )
    .with_domains(vec!["prose".to_string(), "code".to_string()]);
    let mut writer = StoreWriter::create(dest, manifest)?;
    writer.write_tokens(&stream)?;
    for block in &blocks {
        let mut lw = writer.layer(block.layer())?;
        lw.push_block(block)?;
        lw.finish()?;
    }
    let unembed = gaussian_matrix(spec.vocab_size, spec.d_model, 1.0, &mut rng);
    writer.write_unembedding(&unembed)?;
    for layer in 0..spec.n_layers {
        let mut values = gaussian_matrix(spec.d_ffn, spec.d_model, 1.0, &mut rng);
        for (l, neuron, triggers) in &next_tokens {
            if *l != layer {
                continue;
            }
            let next = rng.random_range(300..spec.vocab_size as u32);
            let mut row = unembed.row(next as usize).to_vec();
            for &tk in triggers {
                for (r, e) in row.iter_mut().zip(unembed.row(tk as usize)) {
                    *r -= e;
                }
            }
            values.row_mut(*neuron as usize).copy_from_slice(&row);
        }
        writer.write_value_matrix(layer, &values)?;
    }
    Ok((writer.finish()?, plan))
}
