// SPDX-License-Identifier: MIT OR Apache-2.0

//! Acceptance gate. Prints one `[PASS]`/`[FAIL]` line per criterion and exits
//! non-zero when any criterion fails.
//!
//! The throughput criterion builds a ~15 GB synthetic store under the system
//! temp directory (or reuses `NEURONSCOPE_THROUGHPUT_STORE` when it points at
//! one). `NEURONSCOPE_THROUGHPUT_TOKENS` shrinks it for local iteration; any
//! size other than the full one is reported as a failure.

use std::collections::{BTreeMap, BTreeSet};
use std::f64::consts::LN_2;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use neuronscope::actstore::{Matrix, StoreHandle, MANIFEST_FILE};
use neuronscope::ngram::{
    covering_set_size, find_detectors, for_each_trigger_table, CoverSize, CoverageHistogram, DetectorConfig,
    NeuronTriggerTable, NgramKey, TableConfig,
};
use neuronscope::posneuron::{
    classify_pattern, mutual_information, ClassifyConfig, PatternClass, Shape, Strength, DEFAULT_MI_THRESHOLD,
};
use neuronscope::stats::layer_summaries;
use neuronscope::synth::{
    self, archetype, planted_detectors, suppression_weights, PlantedDetectorSpec, RandomStoreSpec, ValuePlant,
};
use neuronscope::vocabproj::{suppression_rate, ProjectionOptions, WeightSet};
use neuronscope::Error;
use rand::Rng;
use sha2::{Digest, Sha256};

const MI_PROFILES: usize = 1000;
const MI_T: usize = 2048;
const MI_REL_TOL: f64 = 1e-9;
const MI_LN2_TOL: f64 = 1e-12;
const MI_BUDGET: Duration = Duration::from_secs(10);

const COVER_TABLES: usize = 10_000;
const COVER_MAX_KEYS: usize = 12;
const COVER_LEVELS: [f64; 4] = [0.5, 0.9, 0.95, 0.99];
const COVER_BUDGET: Duration = Duration::from_secs(30);

const DETECTOR_BUDGET: Duration = Duration::from_secs(60);
const DETECTOR_WEAK_ON_RATE: f64 = 0.90;

const SUPPRESSION_D_MODEL: usize = 512;
const SUPPRESSION_K: usize = 20;

const ARCHETYPE_T: usize = 2048;
const ARCHETYPE_NOISE_DRAWS: usize = 100;

const FUZZ_TRUNCATIONS: usize = 200;

const THROUGHPUT_TOKENS: usize = 20_000_000;
const THROUGHPUT_LAYERS: usize = 12;
const THROUGHPUT_D_FFN: usize = 3072;
const THROUGHPUT_VOCAB: usize = 50_272;
const THROUGHPUT_EVENTS_PER_TOKEN: f64 = 15.0;
const THROUGHPUT_BUDGET: Duration = Duration::from_secs(600);
const THROUGHPUT_MEMORY_BYTES: u64 = 8 << 30;

struct Outcome {
    pass: bool,
    detail: String,
}

impl Outcome {
    fn new(pass: bool, detail: impl Into<String>) -> Self {
        Self {
            pass,
            detail: detail.into(),
        }
    }
}

type Criterion = (&'static str, fn() -> Outcome);

fn main() -> ExitCode {
    let criteria: [Criterion; 7] = [
        ("mi-oracle-equivalence", mi_oracle),
        ("covering-set-exactness", covering_set_exactness),
        ("planted-detector-recovery", planted_detector_recovery),
        ("suppression-construction", suppression_construction),
        ("pattern-archetypes", pattern_archetypes),
        ("store-determinism-integrity", store_determinism),
        ("throughput", throughput),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (name, run) in criteria {
        if !filter.is_empty() && !filter.iter().any(|f| name.contains(f.as_str())) {
            continue;
        }
        let o = run();
        println!("[{}] {name}: {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
        failed += usize::from(!o.pass);
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failed} acceptance criteria failed");
        ExitCode::FAILURE
    }
}

/// `r ln r - r + 1` for `r = 1 + d`, without cancellation near `r = 1`.
fn phi(d: f64) -> f64 {
    if d.abs() >= 0.1 {
        let r = 1.0 + d;
        return if r == 0.0 { 1.0 } else { r * r.ln() - d };
    }
    // sum over k >= 2 of (-d)^k / (k (k - 1))
    let mut sum = 0.0;
    let mut pow = d * d;
    for k in 2..60 {
        let term = pow / (k * (k - 1)) as f64;
        sum += term;
        if term.abs() <= sum.abs() * 1e-18 {
            break;
        }
        pow *= -d;
    }
    sum
}

/// Discrete mutual information of an arbitrary joint probability table,
/// as the divergence of the joint from the product of its marginals:
/// `sum q phi(p / q)` with `q = p(x) p(y)`. Every term is non-negative, so
/// nearly independent tables do not lose digits to cancellation.
fn joint_table_mi(joint: &[Vec<f64>]) -> f64 {
    let rows: Vec<f64> = joint.iter().map(|r| r.iter().sum()).collect();
    let mut cols = vec![0.0; joint.first().map_or(0, Vec::len)];
    for r in joint {
        for (c, v) in cols.iter_mut().zip(r) {
            *c += v;
        }
    }
    let mut mi = 0.0;
    for (i, r) in joint.iter().enumerate() {
        for (j, &p) in r.iter().enumerate() {
            let q = rows[i] * cols[j];
            if q > 0.0 {
                mi += q * phi((p - q) / q);
            }
        }
    }
    mi
}

fn joint_of_profile(fr_pos: &[f64]) -> Vec<Vec<f64>> {
    let t = fr_pos.len() as f64;
    vec![
        fr_pos.iter().map(|f| f / t).collect(),
        fr_pos.iter().map(|f| (1.0 - f) / t).collect(),
    ]
}

fn random_profile(rng: &mut impl Rng, t: usize) -> Vec<f64> {
    match rng.random_range(0..4) {
        0 => (0..t).map(|_| rng.random::<f64>()).collect(),
        1 => {
            let base: f64 = rng.random();
            let amp: f64 = rng.random_range(0.0..0.05);
            (0..t)
                .map(|_| (base + rng.random_range(-amp..=amp)).clamp(0.0, 1.0))
                .collect()
        }
        2 => (0..t)
            .map(|_| match rng.random_range(0..3) {
                0 => 0.0,
                1 => 1.0,
                _ => rng.random(),
            })
            .collect(),
        _ => {
            let windows = rng.random_range(1..=500u32);
            (0..t)
                .map(|_| rng.random_range(0..=windows) as f64 / windows as f64)
                .collect()
        }
    }
}

fn mi_oracle() -> Outcome {
    let start = Instant::now();
    let mut rng = synth::rng(2024);
    let mut worst = 0.0f64;
    for _ in 0..MI_PROFILES {
        let fr = random_profile(&mut rng, MI_T);
        let ours = mutual_information(&fr);
        let oracle = joint_table_mi(&joint_of_profile(&fr)).max(0.0);
        let rel = if oracle == 0.0 {
            ours
        } else {
            (ours - oracle).abs() / oracle
        };
        worst = worst.max(rel);
    }
    let constants_zero = [0.0, 0.25, 0.5, 1.0 / 3.0, 0.9, 1.0]
        .iter()
        .all(|&c| mutual_information(&vec![c; MI_T]) == 0.0);
    let half: Vec<f64> = (0..MI_T).map(|p| if p < MI_T / 2 { 1.0 } else { 0.0 }).collect();
    let ln2_err = (mutual_information(&half) - LN_2).abs();
    let elapsed = start.elapsed();
    Outcome::new(
        worst <= MI_REL_TOL && constants_zero && ln2_err <= MI_LN2_TOL && elapsed < MI_BUDGET,
        format!(
            "{MI_PROFILES} profiles, max rel err {worst:.2e} (tol {MI_REL_TOL:.0e}); constants exactly 0: {constants_zero}; \
             |half - ln2| = {ln2_err:.1e} (tol {MI_LN2_TOL:.0e}); {:.2}s (budget {}s)",
            elapsed.as_secs_f64(),
            MI_BUDGET.as_secs()
        ),
    )
}

fn exhaustive_min_cover(counts: &[u64], total: u64, coverage: f64) -> usize {
    let k = counts.len();
    let mut best = usize::MAX;
    for mask in 0u32..(1 << k) {
        let size = mask.count_ones() as usize;
        if size >= best {
            continue;
        }
        let sum: u64 = (0..k).filter(|i| mask >> i & 1 == 1).map(|i| counts[i]).sum();
        if sum as f64 >= coverage * total as f64 {
            best = size;
        }
    }
    best
}

fn covering_set_exactness() -> Outcome {
    let start = Instant::now();
    let mut rng = synth::rng(77);
    let mut mismatches = 0;
    let mut checks = 0;
    for i in 0..COVER_TABLES {
        let k = rng.random_range(1..=COVER_MAX_KEYS);
        let heavy = rng.random_bool(0.5);
        let mut entries = BTreeMap::new();
        while entries.len() < k {
            let token = rng.random_range(1..5000u32);
            let count = if heavy && rng.random_bool(0.3) {
                rng.random_range(100..10_000u64)
            } else {
                rng.random_range(1..50u64)
            };
            entries.insert(NgramKey::unigram(token), count);
        }
        let counts: Vec<u64> = entries.values().copied().collect();
        let total: u64 = counts.iter().sum();
        let table = NeuronTriggerTable::from_entries(0, i as u32, 1, entries, 0);
        for &level in &COVER_LEVELS {
            checks += 1;
            let expected = exhaustive_min_cover(&counts, total, level);
            if covering_set_size(&table, level) != CoverSize::Exact(expected) {
                mismatches += 1;
            }
        }
    }
    let elapsed = start.elapsed();
    Outcome::new(
        mismatches == 0 && elapsed < COVER_BUDGET,
        format!(
            "{checks} table/level checks, {mismatches} mismatches vs exhaustive search; {:.2}s (budget {}s)",
            elapsed.as_secs_f64(),
            COVER_BUDGET.as_secs()
        ),
    )
}

fn detector_sets(found: &[neuronscope::ngram::TokenDetectorRecord]) -> BTreeSet<(u32, Vec<u32>)> {
    found.iter().map(|d| (d.neuron, d.trigger_tokens())).collect()
}

fn planted_detector_recovery() -> Outcome {
    let start = Instant::now();
    let dir = tempfile::tempdir().expect("tempdir");
    let spec = PlantedDetectorSpec::default();
    let data = planted_detectors(&spec);
    let root = data
        .write(dir.path().join("planted"))
        .expect("write planted store");
    let store = StoreHandle::open(&root).expect("open planted store");
    let found = find_detectors(&store, 0, &DetectorConfig::tokens()).expect("detectors");
    let got = detector_sets(&found);
    let planted: BTreeSet<(u32, Vec<u32>)> = data
        .detectors
        .iter()
        .map(|d| (d.neuron, d.triggers.clone()))
        .collect();
    let hits = got.intersection(&planted).count();
    let precision = if got.is_empty() {
        0.0
    } else {
        hits as f64 / got.len() as f64
    };
    let recall = hits as f64 / planted.len() as f64;

    let weak_spec = PlantedDetectorSpec {
        on_rate: DETECTOR_WEAK_ON_RATE,
        ..spec.clone()
    };
    let weak = planted_detectors(&weak_spec);
    let weak_root = weak.write(dir.path().join("weak")).expect("write weak store");
    let weak_store = StoreHandle::open(&weak_root).expect("open weak store");
    let weak_found = find_detectors(&weak_store, 0, &DetectorConfig::tokens()).expect("detectors");
    let weak_neurons: BTreeSet<u32> = weak.detectors.iter().map(|d| d.neuron).collect();
    let weak_hits = weak_found
        .iter()
        .filter(|d| weak_neurons.contains(&d.neuron))
        .count();
    let weak_recall = weak_hits as f64 / weak_neurons.len() as f64;
    let elapsed = start.elapsed();

    Outcome::new(
        precision == 1.0 && recall == 1.0 && weak_recall == 0.0 && elapsed < DETECTOR_BUDGET,
        format!(
            "{} tokens x {} neurons, {} planted: precision {precision:.3}, recall {recall:.3}; \
             on-rate {DETECTOR_WEAK_ON_RATE}: recall {weak_recall:.3} ({} detectors reported); {:.1}s (budget {}s)",
            spec.n_tokens,
            spec.n_neurons,
            planted.len(),
            weak_found.len(),
            elapsed.as_secs_f64(),
            DETECTOR_BUDGET.as_secs()
        ),
    )
}

fn negate_rows(m: &Matrix, rows: &[u32]) -> Matrix {
    let mut out = m.clone();
    for &r in rows {
        for v in out.row_mut(r as usize) {
            *v = -*v;
        }
    }
    out
}

fn suppression_construction() -> Outcome {
    let spec = PlantedDetectorSpec {
        n_tokens: 200_000,
        n_detectors: 50,
        ..PlantedDetectorSpec::default()
    };
    let data = planted_detectors(&spec);
    let mut rng = synth::rng(31);
    let plants: Vec<ValuePlant> = data
        .detectors
        .iter()
        .map(|d| {
            let next = loop {
                let t = rng.random_range(1..spec.vocab_size as u32);
                if !d.triggers.contains(&t) {
                    break t;
                }
            };
            ValuePlant {
                neuron: d.neuron,
                triggers: d.triggers.clone(),
                next,
            }
        })
        .collect();
    let (unembed, values) = suppression_weights(
        spec.vocab_size,
        SUPPRESSION_D_MODEL,
        spec.n_neurons,
        &plants,
        &mut rng,
    );
    let neurons: Vec<u32> = plants.iter().map(|p| p.neuron).collect();

    let dir = tempfile::tempdir().expect("tempdir");
    let root = data.write(dir.path().join("s")).expect("write store");
    let store = StoreHandle::open(&root).expect("open store");
    let detectors = find_detectors(&store, 0, &DetectorConfig::tokens()).expect("detectors");

    let rate = |values: Matrix, center: bool| {
        let mut w = WeightSet::new(unembed.clone());
        w.insert(0, values);
        suppression_rate(&detectors, &w, SUPPRESSION_K, ProjectionOptions { center })
            .expect("suppression")
            .rate
    };
    let plain = rate(values.clone(), false);
    let negated = rate(negate_rows(&values, &neurons), false);
    let centered = rate(values.clone(), true);
    let centered_negated = rate(negate_rows(&values, &neurons), true);
    Outcome::new(
        detectors.len() == plants.len() && plain == Some(1.0) && negated == Some(0.0),
        format!(
            "{} detectors, d_model {SUPPRESSION_D_MODEL}: rate {plain:?}, negated {negated:?}; \
             with centered scores (final-LN flag): {centered:?} / {centered_negated:?}",
            detectors.len()
        ),
    )
}

fn pattern_archetypes() -> Outcome {
    let config = ClassifyConfig::default();
    let mut rng = synth::rng(5);
    let mut wrong = Vec::new();
    let mut flips = 0;
    let mut checked = 0;
    for shape in Shape::ALL {
        for strength in [Strength::Strong, Strength::Weak] {
            let intended = PatternClass::new(shape, strength);
            let profile = archetype(shape, strength, ARCHETYPE_T, &mut rng);
            let mi = mutual_information(&profile);
            let got = classify_pattern(&profile, &config);
            if got != intended || mi <= DEFAULT_MI_THRESHOLD {
                wrong.push(format!("{intended} -> {got} (mi {mi:.3})"));
            }
            if strength == Strength::Strong {
                let half = config.epsilon / 2.0;
                for _ in 0..ARCHETYPE_NOISE_DRAWS {
                    checked += 1;
                    let noisy: Vec<f64> = profile
                        .iter()
                        .map(|v| (v + rng.random_range(-half..=half)).clamp(0.0, 1.0))
                        .collect();
                    if classify_pattern(&noisy, &config) != intended {
                        flips += 1;
                    }
                }
            }
        }
    }
    Outcome::new(
        wrong.is_empty() && flips == 0,
        format!(
            "8 archetypes (strong/weak x 4 shapes), misclassified or unselected: {}; \
             strong classes changed by +-eps/2 noise: {flips}/{checked}",
            if wrong.is_empty() {
                "none".to_string()
            } else {
                wrong.join(", ")
            }
        ),
    )
}

fn tree_hash(root: &Path) -> String {
    let mut names: Vec<String> = fs::read_dir(root)
        .expect("read store dir")
        .map(|e| {
            e.expect("dir entry")
                .file_name()
                .into_string()
                .expect("utf-8 name")
        })
        .collect();
    names.sort();
    let mut h = Sha256::new();
    for name in names {
        h.update(name.as_bytes());
        h.update(fs::read(root.join(&name)).expect("read store file"));
    }
    hex::encode(h.finalize())
}

/// Everything a reader can be asked to do with a store.
fn read_everything(root: &Path) -> neuronscope::Result<()> {
    let store = StoreHandle::open(root)?;
    store.token_index()?;
    store.verify()?;
    store.unembedding()?;
    for layer in 0..store.manifest().n_layers {
        store.value_matrix(layer)?;
    }
    Ok(())
}

fn store_determinism() -> Outcome {
    let dir = tempfile::tempdir().expect("tempdir");
    let spec = synth::DemoSpec::default();
    let (a, _) = synth::write_demo_store(dir.path().join("a"), &spec).expect("write a");
    let (b, _) = synth::write_demo_store(dir.path().join("b"), &spec).expect("write b");
    let identical = tree_hash(&a) == tree_hash(&b);

    let mut files: Vec<(PathBuf, u64)> = fs::read_dir(&a)
        .expect("read store dir")
        .map(|e| {
            let e = e.expect("dir entry");
            (e.path(), e.metadata().expect("metadata").len())
        })
        .collect();
    files.sort();
    let total: u64 = files.iter().map(|f| f.1).sum();
    let mut rng = synth::rng(404);
    let mut silent = Vec::new();
    let mut other_errors = Vec::new();
    for _ in 0..FUZZ_TRUNCATIONS {
        // Offsets are drawn over the concatenation of all files.
        let mut at = rng.random_range(0..total);
        let (path, cut) = files
            .iter()
            .find_map(|(p, len)| {
                if at < *len {
                    Some((p.clone(), at))
                } else {
                    at -= len;
                    None
                }
            })
            .expect("offset inside some file");
        let original = fs::read(&path).expect("read file");
        fs::write(&path, &original[..cut as usize]).expect("truncate");
        let name = path.file_name().unwrap().to_string_lossy().into_owned();
        match read_everything(&a) {
            Ok(()) => silent.push(format!("{name}@{cut}")),
            Err(Error::Corruption { .. }) => {}
            Err(e) => other_errors.push(format!("{name}@{cut}: {e}")),
        }
        fs::write(&path, &original).expect("restore");
    }
    let pristine_ok = read_everything(&a).is_ok();
    let manifest_intact = a.join(MANIFEST_FILE).exists();
    Outcome::new(
        identical && silent.is_empty() && other_errors.is_empty() && pristine_ok && manifest_intact,
        format!(
            "double write identical: {identical}; {FUZZ_TRUNCATIONS} truncations over {} files ({total} bytes): \
             {} silent, {} non-corruption errors{}",
            files.len(),
            silent.len(),
            other_errors.len(),
            other_errors
                .first()
                .or(silent.first())
                .map(|e| format!(" (first: {e})"))
                .unwrap_or_default()
        ),
    )
}

fn peak_rss_bytes() -> Option<u64> {
    let status = fs::read_to_string("/proc/self/status").ok()?;
    let line = status.lines().find(|l| l.starts_with("VmHWM:"))?;
    let kb: u64 = line.split_whitespace().nth(1)?.parse().ok()?;
    Some(kb * 1024)
}

fn reset_peak_rss() -> bool {
    fs::write("/proc/self/clear_refs", "5").is_ok()
}

fn throughput() -> Outcome {
    let tokens = std::env::var("NEURONSCOPE_THROUGHPUT_TOKENS")
        .ok()
        .and_then(|v| v.parse().ok())
        .unwrap_or(THROUGHPUT_TOKENS);
    let spec = RandomStoreSpec {
        n_layers: THROUGHPUT_LAYERS,
        d_ffn: THROUGHPUT_D_FFN,
        vocab_size: THROUGHPUT_VOCAB,
        context_len: 2048,
        n_tokens: tokens,
        events_per_position: THROUGHPUT_EVENTS_PER_TOKEN,
        dead_fraction: RandomStoreSpec::dead_in_first_half(THROUGHPUT_LAYERS, 0.3),
        zipf_exponent: 1.1,
        seed: 12,
    };

    let reuse = std::env::var_os("NEURONSCOPE_THROUGHPUT_STORE").map(PathBuf::from);
    let _guard;
    let root = match reuse {
        Some(path) if path.join(MANIFEST_FILE).exists() => path,
        Some(path) => match synth::write_random_store(&path, &spec) {
            Ok(p) => p,
            Err(e) => return Outcome::new(false, format!("could not build synthetic store: {e}")),
        },
        None => {
            let dir = match tempfile::tempdir() {
                Ok(d) => d,
                Err(e) => return Outcome::new(false, format!("no temp dir: {e}")),
            };
            let gen_start = Instant::now();
            let p = match synth::write_random_store(dir.path().join("throughput"), &spec) {
                Ok(p) => p,
                Err(e) => return Outcome::new(false, format!("could not build synthetic store: {e}")),
            };
            eprintln!(
                "throughput store generated in {:.0}s",
                gen_start.elapsed().as_secs_f64()
            );
            _guard = dir;
            p
        }
    };

    let peak_reset = reset_peak_rss();
    let start = Instant::now();
    let result = (|| -> neuronscope::Result<(u64, usize, usize, Vec<CoverageHistogram>)> {
        let store = StoreHandle::open(&root)?;
        let summaries = layer_summaries(&store)?;
        let dead: usize = summaries.iter().map(|s| s.dead_count).sum();
        let config = TableConfig::new(1);
        let mut tables = 0usize;
        let mut histograms = Vec::new();
        for layer in 0..store.manifest().n_layers {
            let mut h = CoverageHistogram::new(layer, 1, 0.95);
            for_each_trigger_table(&store, layer, &config, |t| {
                tables += 1;
                h.add(&t);
            })?;
            histograms.push(h);
        }
        Ok((store.total_tokens(), dead, tables, histograms))
    })();
    let elapsed = start.elapsed();
    let peak = peak_rss_bytes();
    let cores = std::thread::available_parallelism().map_or(1, |n| n.get());

    match result {
        Err(e) => Outcome::new(false, format!("analysis failed: {e}")),
        Ok((n_tokens, dead, tables, _)) => {
            let full_scale = n_tokens as usize == THROUGHPUT_TOKENS;
            let peak_ok = peak.is_some_and(|p| p < THROUGHPUT_MEMORY_BYTES);
            Outcome::new(
                full_scale && elapsed < THROUGHPUT_BUDGET && peak_ok,
                format!(
                    "{n_tokens} tokens x {THROUGHPUT_D_FFN} neurons x {THROUGHPUT_LAYERS} layers \
                     (~{THROUGHPUT_EVENTS_PER_TOKEN} events/token): census ({dead} dead) + {tables} unigram tables \
                     in {:.1}s (budget {}s) on {cores} core(s); peak RSS {} (limit 8 GiB{}){}",
                    elapsed.as_secs_f64(),
                    THROUGHPUT_BUDGET.as_secs(),
                    peak.map_or("unknown".to_string(), |p| format!("{:.2} GiB", p as f64 / (1u64 << 30) as f64)),
                    if peak_reset { ", measured from analysis start" } else { ", process lifetime" },
                    if full_scale { "" } else { "; NOT the full-size store" }
                ),
            )
        }
    }
}
