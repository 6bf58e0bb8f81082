// SPDX-License-Identifier: MIT OR Apache-2.0

//! Analysis stages. Each stage reads the store layer by layer and writes
//! its artifacts into the bundle; stages run one after another.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::Serialize;
use serde_json::{json, Map, Value};

use neuronscope::actstore::StoreHandle;
use neuronscope::ngram::{
    find_detectors, for_each_trigger_table, layer_novelty, CoverageBucket, CoverageHistogram, LayerNovelty,
    TableConfig, TokenDetectorRecord,
};
use neuronscope::posneuron::{
    classify_layer, downsample, indicator_ranges, positional_map, positional_profiles, team_coverage,
    IndicatorRanges, LayerPositional, PatternClass, PositionalMap, PositionalProfile, Shape, Strength,
    TeamCoverage,
};
use neuronscope::stats::{neuron_stats, relative_depth, summarize_layer, LayerSummary};
use neuronscope::vocabproj::{suppression_rate, ProjectionOptions, WeightSet};
use neuronscope::Error;

use crate::bundle::Bundle;
use crate::config::{Analysis, AnalysisConfig};
use crate::error::CliResult;
use crate::svg::{self, Canvas, Frame};

pub struct Run<'a> {
    pub store: &'a StoreHandle,
    pub config: &'a AnalysisConfig,
    pub layers: Vec<usize>,
    pub bundle: Bundle,
    pub summaries: Map<String, Value>,
}

/// Detectors per n, each as `(layer, records)` in layer order.
type DetectorSets = BTreeMap<usize, Vec<(usize, Vec<TokenDetectorRecord>)>>;

fn layer_tag(layer: usize) -> String {
    format!("layer_{layer:02}")
}

impl<'a> Run<'a> {
    fn n_layers(&self) -> usize {
        self.store.manifest().n_layers
    }

    /// Store errors abort the run; anything else becomes a warning and the
    /// affected part is skipped.
    fn soft<T>(&mut self, what: &str, r: neuronscope::Result<T>) -> CliResult<Option<T>> {
        match r {
            Ok(v) => Ok(Some(v)),
            Err(e) if e.is_store_error() => Err(e.into()),
            Err(e) => {
                self.bundle.warn(format!("{what}: {e}"));
                Ok(None)
            }
        }
    }

    pub fn execute(&mut self, analyses: &[Analysis]) -> CliResult<()> {
        let want = |a| analyses.contains(&a);
        if want(Analysis::Dead) {
            self.dead()?;
        }
        if want(Analysis::Ngram) {
            self.ngram()?;
        }
        if want(Analysis::Detectors) || want(Analysis::Suppression) {
            let sets = self.detectors(want(Analysis::Detectors))?;
            if want(Analysis::Suppression) {
                self.suppression(&sets)?;
            }
        }
        if want(Analysis::Positional) {
            self.positional()?;
        }
        Ok(())
    }

    fn dead(&mut self) -> CliResult<()> {
        log::info!("dead neurons: {} layers", self.layers.len());
        let store = self.store;
        let per_layer = self
            .layers
            .par_iter()
            .map(|&layer| neuron_stats(store, layer))
            .collect::<neuronscope::Result<Vec<_>>>()?;
        let total = store.total_tokens();
        let n_layers = self.n_layers();
        let mut summaries: Vec<LayerSummary> = Vec::new();
        for (stats, &layer) in per_layer.iter().zip(&self.layers) {
            let rows: Vec<Vec<String>> = stats
                .iter()
                .map(|s| {
                    vec![
                        s.neuron.to_string(),
                        s.activation_count.to_string(),
                        s.frequency.to_string(),
                        s.is_dead.to_string(),
                    ]
                })
                .collect();
            self.bundle.write_csv(
                "dead",
                &format!("dead/{}.csv", layer_tag(layer)),
                &["neuron_id", "count", "frequency", "is_dead"],
                &rows,
            )?;
            summaries.push(summarize_layer(layer, stats, total));
        }

        #[derive(Serialize)]
        struct Row<'s> {
            relative_depth: f64,
            #[serde(flatten)]
            summary: &'s LayerSummary,
        }
        let rows: Vec<Row> = summaries
            .iter()
            .map(|s| Row {
                relative_depth: relative_depth(s.layer, n_layers),
                summary: s,
            })
            .collect();
        self.bundle.write_json(
            "dead",
            "dead/summary.json",
            &json!({ "n_layers": n_layers, "total_positions": total, "layers": rows }),
        )?;

        let model = &store.manifest().model_id;
        let depth = |s: &LayerSummary| relative_depth(s.layer, n_layers);
        let dead: Vec<(f64, f64)> = summaries.iter().map(|s| (depth(s), s.dead_fraction)).collect();
        let freq: Vec<(f64, f64)> = summaries
            .iter()
            .filter_map(|s| s.mean_alive_frequency.map(|f| (depth(s), f)))
            .collect();
        self.bundle.write_svg(
            "dead",
            "dead/dead_fraction.svg",
            &svg::line_chart(
                "Dead neurons",
                "relative layer depth",
                "fraction of neurons",
                &[(model.clone(), dead)],
                Some((0.0, 1.0)),
            ),
        )?;
        self.bundle.write_svg(
            "dead",
            "dead/mean_alive_frequency.svg",
            &svg::line_chart(
                "Activation frequency of alive neurons",
                "relative layer depth",
                "mean activation frequency",
                &[(model.clone(), freq)],
                None,
            ),
        )?;
        let dead_total: usize = summaries.iter().map(|s| s.dead_count).sum();
        self.summaries.insert(
            "dead".into(),
            json!({ "layers": summaries.len(), "dead_neurons": dead_total }),
        );
        Ok(())
    }

    fn ngram(&mut self) -> CliResult<()> {
        let coverage = self.config.ngram.coverage;
        let n_layers = self.n_layers();
        let mut summary = Map::new();
        for &n in &self.config.ngram.n {
            log::info!("coverage histograms: n = {n}");
            let table_config = TableConfig {
                diffuse_cap: self.config.ngram.diffuse_cap,
                ..TableConfig::new(n)
            };
            let mut hists = Vec::new();
            for layer in self.layers.clone() {
                let mut h = CoverageHistogram::new(layer, n, coverage);
                let r = for_each_trigger_table(self.store, layer, &table_config, |t| h.add(&t));
                if self.soft(&format!("ngram n={n} layer {layer}"), r)?.is_some() {
                    hists.push(h);
                }
            }
            self.bundle.write_json(
                "ngram",
                &format!("ngram/coverage_n{n}.json"),
                &json!({ "n": n, "coverage": coverage, "layers": hists }),
            )?;

            // The published figure shows the lower half of the network.
            let lower: Vec<&CoverageHistogram> = hists
                .iter()
                .filter(|h| relative_depth(h.layer, n_layers) < 0.5)
                .collect();
            let shown = if lower.is_empty() {
                hists.iter().collect()
            } else {
                lower
            };
            let categories: Vec<String> = CoverageBucket::ALL
                .iter()
                .map(|b| b.label().to_string())
                .collect();
            let series: Vec<(String, Vec<f64>)> = shown
                .iter()
                .map(|h| {
                    let total = h.total().max(1) as f64;
                    let values = CoverageBucket::ALL
                        .iter()
                        .map(|&b| 100.0 * h.count(b) as f64 / total)
                        .collect();
                    (format!("layer {}", h.layer), values)
                })
                .collect();
            let noun = ["tokens", "bigrams", "trigrams"][n - 1];
            self.bundle.write_svg(
                "ngram",
                &format!("ngram/coverage_n{n}.svg"),
                &svg::bar_chart(
                    &format!("{noun} covering {:.0}% of activations", coverage * 100.0),
                    &format!("number of {noun}"),
                    "% of alive neurons",
                    &categories,
                    &series,
                ),
            )?;
            let small: u64 = hists.iter().map(|h| h.count(CoverageBucket::K1To5)).sum();
            summary.insert(
                format!("n{n}"),
                json!({ "layers": hists.len(), "neurons_1_to_5": small }),
            );
        }
        self.summaries.insert("ngram".into(), Value::Object(summary));
        Ok(())
    }

    fn detectors(&mut self, write: bool) -> CliResult<DetectorSets> {
        let mut sets = DetectorSets::new();
        let mut summary = Map::new();
        for &n in &self.config.detectors.n {
            log::info!("detectors: n = {n}");
            let cfg = self.config.detectors.config(n, self.config.ngram.diffuse_cap);
            let mut per_layer = Vec::new();
            for layer in self.layers.clone() {
                let r = find_detectors(self.store, layer, &cfg);
                if let Some(records) = self.soft(&format!("detectors n={n} layer {layer}"), r)? {
                    per_layer.push((layer, records));
                }
            }
            let novelty = layer_novelty(&per_layer);
            if write {
                self.write_detectors(n, &per_layer, &novelty)?;
                let total: usize = per_layer.iter().map(|l| l.1.len()).sum();
                summary.insert(
                    format!("n{n}"),
                    json!({
                        "detectors": total,
                        "distinct_ngrams": novelty.last().map_or(0, |l| l.cumulative),
                    }),
                );
            }
            sets.insert(n, per_layer);
        }
        if write {
            self.summaries.insert("detectors".into(), Value::Object(summary));
        }
        Ok(sets)
    }

    fn write_detectors(
        &mut self,
        n: usize,
        per_layer: &[(usize, Vec<TokenDetectorRecord>)],
        novelty: &[LayerNovelty],
    ) -> CliResult<()> {
        let join = |parts: Vec<String>| parts.join(";");
        let rows: Vec<Vec<String>> = per_layer
            .iter()
            .flat_map(|(_, records)| records)
            .map(|r| {
                vec![
                    r.layer.to_string(),
                    r.neuron.to_string(),
                    r.n.to_string(),
                    join(r.covered.iter().map(|c| c.key.to_string()).collect()),
                    join(r.covered.iter().map(|c| c.rate().to_string()).collect()),
                    join(r.covered.iter().map(|c| c.occurrences.to_string()).collect()),
                    join(r.covered.iter().map(|c| c.co_activations.to_string()).collect()),
                    r.activations.to_string(),
                    r.joint_coverage.to_string(),
                ]
            })
            .collect();
        self.bundle.write_csv(
            "detectors",
            &format!("detectors/detectors_n{n}.csv"),
            &[
                "layer",
                "neuron",
                "n",
                "ngrams",
                "rates",
                "occurrences",
                "co_activations",
                "activations",
                "joint_coverage",
            ],
            &rows,
        )?;
        let records: Vec<&TokenDetectorRecord> = per_layer.iter().flat_map(|l| &l.1).collect();
        self.bundle
            .write_json("detectors", &format!("detectors/detectors_n{n}.json"), &records)?;
        self.bundle
            .write_json("detectors", &format!("detectors/novelty_n{n}.json"), &novelty)?;

        let x = |l: &LayerNovelty| l.layer as f64;
        let series = vec![
            (
                "detected".to_string(),
                novelty.iter().map(|l| (x(l), l.detected as f64)).collect(),
            ),
            (
                "new vs previous layer".to_string(),
                novelty.iter().map(|l| (x(l), l.new_vs_previous as f64)).collect(),
            ),
            (
                "new overall".to_string(),
                novelty.iter().map(|l| (x(l), l.new_overall as f64)).collect(),
            ),
            (
                "cumulative".to_string(),
                novelty.iter().map(|l| (x(l), l.cumulative as f64)).collect(),
            ),
        ];
        let noun = if n == 1 { "tokens" } else { "trigrams" };
        self.bundle.write_svg(
            "detectors",
            &format!("detectors/novelty_n{n}.svg"),
            &svg::line_chart(
                &format!("Detected {noun} per layer"),
                "layer",
                noun,
                &series,
                None,
            ),
        )
    }

    fn suppression(&mut self, sets: &DetectorSets) -> CliResult<()> {
        let detectors: Vec<TokenDetectorRecord> = sets
            .values()
            .flat_map(|per_layer| per_layer.iter().flat_map(|l| l.1.iter().cloned()))
            .collect();
        let r = WeightSet::load(self.store, self.layers.iter().copied());
        let Some(weights) = self.soft("suppression", r)? else {
            return Ok(());
        };
        let Some(weights) = weights else {
            self.bundle
                .warn("suppression: store has no unembed.bin; suppression analysis skipped");
            return Ok(());
        };
        let options = ProjectionOptions {
            center: self.config.suppression.center,
        };
        log::info!("suppression: {} detectors", detectors.len());
        let r = suppression_rate(&detectors, &weights, self.config.suppression.k, options);
        let Some(report) = self.soft("suppression", r)? else {
            return Ok(());
        };
        for w in &report.warnings {
            self.bundle.warn(format!("suppression: {w}"));
        }
        self.bundle
            .write_json("suppression", "suppression/report.json", &report)?;

        let mut rows = Vec::new();
        for e in &report.entries {
            let triggers: Vec<String> = e.triggers.iter().map(|t| t.token.to_string()).collect();
            for (rank, (p, s)) in e.top_promoted.iter().zip(&e.top_suppressed).enumerate() {
                rows.push(vec![
                    e.layer.to_string(),
                    e.neuron.to_string(),
                    triggers.join(" "),
                    e.suppressed.to_string(),
                    (rank + 1).to_string(),
                    p.token.to_string(),
                    p.score.to_string(),
                    s.token.to_string(),
                    s.score.to_string(),
                ]);
            }
        }
        self.bundle.write_csv(
            "suppression",
            "suppression/examples.csv",
            &[
                "layer",
                "neuron",
                "triggers",
                "suppressed",
                "rank",
                "promoted_token",
                "promoted_score",
                "suppressed_token",
                "suppressed_score",
            ],
            &rows,
        )?;
        self.summaries.insert(
            "suppression".into(),
            json!({
                "k": report.k,
                "centered": report.centered,
                "detectors": report.n_detectors,
                "suppressed": report.n_suppressed,
                "rate": report.rate,
            }),
        );
        Ok(())
    }

    fn positional(&mut self) -> CliResult<()> {
        let cfg = self.config.positional.config();
        let bins = self.config.positional.profile_bins;
        let reduce = |v: &[f64]| {
            if bins == 0 {
                v.to_vec()
            } else {
                downsample(v, bins)
            }
        };
        let mut layers_out: Vec<LayerPositional> = Vec::new();
        let mut ranges_out = Vec::new();
        for layer in self.layers.clone() {
            log::info!("positional: layer {layer}");
            let r = positional_profiles(self.store, layer);
            let profiles = match r {
                Err(e @ Error::NoFullLengthDocuments { .. }) => {
                    self.bundle.warn(format!("positional: {e}"));
                    return Ok(());
                }
                r => match self.soft(&format!("positional layer {layer}"), r)? {
                    Some(p) => p,
                    None => continue,
                },
            };
            let selected: Vec<PositionalProfile> = (0..profiles.d_ffn() as u32)
                .into_par_iter()
                .map(|n| profiles.profile(n))
                .filter(|p| p.mi > cfg.threshold)
                .collect();
            let mut classified = classify_layer(layer, &selected, &cfg);
            classified.n_neurons = profiles.d_ffn();

            let domains: Vec<Value> = profiles
                .domains()
                .iter()
                .map(|d| json!({ "domain_id": d.domain_id, "name": d.name, "n_windows": d.n_windows }))
                .collect();
            let neurons: Vec<Value> = selected
                .iter()
                .map(|p| {
                    let per_domain: Vec<Value> = profiles
                        .domains()
                        .iter()
                        .filter_map(|d| Some((d, profiles.domain_profile(d.domain_id, p.neuron)?)))
                        .map(|(d, dp)| {
                            json!({
                                "domain_id": d.domain_id,
                                "mi": dp.mi,
                                "fr": dp.fr,
                                "fr_pos": reduce(&dp.fr_pos),
                            })
                        })
                        .collect();
                    json!({
                        "neuron": p.neuron,
                        "mi": p.mi,
                        "mi_bits": p.mi_bits(),
                        "fr": p.fr,
                        "fr_pos": reduce(&p.fr_pos),
                        "domains": per_domain,
                    })
                })
                .collect();
            self.bundle.write_json(
                "positional",
                &format!("positional/profiles_{}.json", layer_tag(layer)),
                &json!({
                    "layer": layer,
                    "context_len": profiles.context_len(),
                    "n_windows": profiles.n_windows(),
                    "n_neurons": profiles.d_ffn(),
                    "threshold": cfg.threshold,
                    "bins": if bins == 0 { profiles.context_len() } else { bins.min(profiles.context_len()) },
                    "domains": domains,
                    "neurons": neurons,
                }),
            )?;

            let team: Vec<IndicatorRanges> = selected
                .iter()
                .map(|p| {
                    indicator_ranges(
                        layer,
                        p.neuron,
                        &p.fr_pos,
                        cfg.classify.epsilon,
                        cfg.classify.min_run,
                    )
                })
                .filter(|r| !r.on_intervals.is_empty())
                .collect();
            let coverage: TeamCoverage = team_coverage(&team, profiles.context_len());
            ranges_out.push(json!({ "layer": layer, "neurons": team, "team": coverage }));

            self.plot_profiles(layer, &selected, &classified)?;
            layers_out.push(classified);
        }

        let map = positional_map(self.n_layers(), layers_out);
        self.write_positional_map(&map)?;
        self.bundle
            .write_json("positional", "positional/ranges.json", &ranges_out)?;

        let mut counts: BTreeMap<String, usize> = BTreeMap::new();
        for (_, _, class) in map.entries() {
            *counts.entry(class.to_string()).or_insert(0) += 1;
        }
        self.summaries.insert(
            "positional".into(),
            json!({ "positional_neurons": map.entries().count(), "classes": counts }),
        );
        Ok(())
    }

    fn plot_profiles(
        &mut self,
        layer: usize,
        selected: &[PositionalProfile],
        classified: &LayerPositional,
    ) -> CliResult<()> {
        let mut order: Vec<&PositionalProfile> = selected.iter().collect();
        order.sort_by(|a, b| b.mi.total_cmp(&a.mi).then(a.neuron.cmp(&b.neuron)));
        let eps = self.config.positional.epsilon;
        for p in order.into_iter().take(self.config.positional.max_plots) {
            let class = classified
                .neurons
                .iter()
                .find(|n| n.neuron == p.neuron)
                .map(|n| n.class.to_string())
                .unwrap_or_default();
            let points: Vec<(f64, f64)> = p
                .fr_pos
                .iter()
                .enumerate()
                .map(|(i, &v)| ((i + 1) as f64, v))
                .collect();
            let frame = Frame {
                x: (1.0, p.fr_pos.len().max(2) as f64),
                y: (0.0, 1.0),
            };
            let mut c = Canvas::new(&format!("layer {layer}, neuron {}: {class}", p.neuron));
            c.hband(&frame, 0.0, eps, "#999999");
            c.hband(&frame, 1.0 - eps, 1.0, "#999999");
            c.axes(&frame, "position", "activation frequency", None);
            c.polyline(&frame, &points, class_color(classified, p.neuron), false);
            c.legend(
                &format!("MI {:.4} nats", p.mi),
                class_color(classified, p.neuron),
                1.0,
            );
            self.bundle.write_svg(
                "positional",
                &format!("positional/plots/{}_neuron_{:05}.svg", layer_tag(layer), p.neuron),
                &c.finish(),
            )?;
        }
        Ok(())
    }

    fn write_positional_map(&mut self, map: &PositionalMap) -> CliResult<()> {
        self.bundle.write_json("positional", "positional/map.json", map)?;
        let rows: Vec<Vec<String>> = map
            .layers
            .iter()
            .flat_map(|l| l.neurons.iter().map(move |n| (l.layer, n)))
            .map(|(layer, n)| {
                vec![
                    layer.to_string(),
                    n.neuron.to_string(),
                    n.mi.to_string(),
                    n.mi_bits.to_string(),
                    n.fr.to_string(),
                    n.class.shape.label().to_string(),
                    n.class.strength.label().to_string(),
                    n.evidence.weak_alternations.to_string(),
                    n.evidence.strong_alternations.to_string(),
                    n.evidence.lag1_autocorrelation.to_string(),
                ]
            })
            .collect();
        self.bundle.write_csv(
            "positional",
            "positional/classifications.csv",
            &[
                "layer",
                "neuron",
                "mi_nats",
                "mi_bits",
                "fr",
                "shape",
                "strength",
                "weak_alternations",
                "strong_alternations",
                "lag1_autocorrelation",
            ],
            &rows,
        )?;
        let d_ffn = self.store.manifest().d_ffn;
        self.bundle.write_svg(
            "positional",
            "positional/map.svg",
            &map_svg(map, d_ffn, &self.store.manifest().model_id),
        )
    }
}

pub fn shape_color(shape: Shape) -> &'static str {
    match shape {
        Shape::Oscillatory => "#7b3294",
        Shape::BothExtremes => "#d7191c",
        Shape::OneExtreme => "#1a9641",
        Shape::Other => "#e6b800",
    }
}

pub fn strength_opacity(strength: Strength) -> f64 {
    match strength {
        Strength::Strong => 0.9,
        Strength::Weak => 0.35,
    }
}

fn class_color(layer: &LayerPositional, neuron: u32) -> &'static str {
    layer
        .neurons
        .iter()
        .find(|n| n.neuron == neuron)
        .map_or("#333333", |n| shape_color(n.class.shape))
}

/// Layer on x, neuron index on y, one mark per positional neuron.
pub fn map_svg(map: &PositionalMap, d_ffn: usize, model: &str) -> String {
    let frame = Frame {
        x: (-0.5, map.n_layers.max(1) as f64 - 0.5),
        y: (0.0, d_ffn.max(1) as f64),
    };
    let mut c = Canvas::new(&format!("Positional neurons: {model}"));
    c.axes(&frame, "layer", "neuron", None);
    for (layer, neuron, class) in map.entries() {
        c.circle(
            &frame,
            layer as f64,
            neuron as f64 + 0.5,
            3.0,
            shape_color(class.shape),
            strength_opacity(class.strength),
        );
    }
    for strength in [Strength::Strong, Strength::Weak] {
        for shape in Shape::ALL {
            let class = PatternClass::new(shape, strength);
            c.legend(&class.to_string(), shape_color(shape), strength_opacity(strength));
        }
    }
    if map.is_empty() {
        c.note("no positional neurons");
    }
    c.finish()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_map_still_renders_legend() {
        let map = positional_map(4, Vec::new());
        let s = map_svg(&map, 128, "m");
        assert!(s.contains("no positional neurons"));
        assert_eq!(s.matches("<circle").count(), 0);
        assert!(s.contains("weak oscillatory"));
    }
}
