// SPDX-License-Identifier: MIT OR Apache-2.0

//! Run configuration: a TOML file, overridden field by field from the
//! command line.

use std::collections::BTreeSet;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use neuronscope::ngram::{DetectorConfig, GroupRule, DEFAULT_DIFFUSE_CAP};
use neuronscope::posneuron::{ClassifyConfig, PositionalConfig};

#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize, clap::ValueEnum,
)]
#[serde(rename_all = "snake_case")]
pub enum Analysis {
    Dead,
    Ngram,
    Detectors,
    Suppression,
    Positional,
}

impl Analysis {
    pub const ALL: [Analysis; 5] = [
        Analysis::Dead,
        Analysis::Ngram,
        Analysis::Detectors,
        Analysis::Suppression,
        Analysis::Positional,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Analysis::Dead => "dead",
            Analysis::Ngram => "ngram",
            Analysis::Detectors => "detectors",
            Analysis::Suppression => "suppression",
            Analysis::Positional => "positional",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Format {
    Json,
    Csv,
    Svg,
}

/// `"all"`, a range list such as `"0-5,8"`, or an explicit list of indices.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Layers {
    Spec(String),
    List(Vec<usize>),
}

impl Default for Layers {
    fn default() -> Self {
        Layers::Spec("all".into())
    }
}

impl Layers {
    pub fn resolve(&self, n_layers: usize) -> Result<Vec<usize>, String> {
        let set: BTreeSet<usize> = match self {
            Layers::List(v) => v.iter().copied().collect(),
            Layers::Spec(s) if s.trim() == "all" => (0..n_layers).collect(),
            Layers::Spec(s) => {
                let mut set = BTreeSet::new();
                for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
                    let (a, b) = match part.split_once('-') {
                        Some((a, b)) => (a.trim(), b.trim()),
                        None => (part, part),
                    };
                    let parse = |x: &str| {
                        x.parse::<usize>()
                            .map_err(|_| format!("layers: cannot parse `{part}`"))
                    };
                    let (a, b) = (parse(a)?, parse(b)?);
                    if a > b {
                        return Err(format!("layers: empty range `{part}`"));
                    }
                    set.extend(a..=b);
                }
                set
            }
        };
        if let Some(&bad) = set.iter().find(|&&l| l >= n_layers) {
            return Err(format!(
                "layers: layer {bad} does not exist (store has {n_layers})"
            ));
        }
        Ok(set.into_iter().collect())
    }
}

impl FromStr for Layers {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        Ok(Layers::Spec(s.to_string()))
    }
}

impl fmt::Display for Layers {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Layers::Spec(s) => f.write_str(s),
            Layers::List(v) => {
                let parts: Vec<String> = v.iter().map(ToString::to_string).collect();
                f.write_str(&parts.join(","))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NgramSection {
    pub n: Vec<usize>,
    pub coverage: f64,
    pub diffuse_cap: usize,
}

impl Default for NgramSection {
    fn default() -> Self {
        Self {
            n: vec![1, 2, 3],
            coverage: 0.95,
            diffuse_cap: DEFAULT_DIFFUSE_CAP,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DetectorSection {
    pub n: Vec<usize>,
    pub coverage: f64,
    pub co_activation: f64,
    pub joint_coverage: f64,
    pub max_group_tokens: usize,
    pub max_group_trigrams: usize,
    pub min_occurrences: u64,
    pub rule: GroupRule,
}

impl Default for DetectorSection {
    fn default() -> Self {
        let t = DetectorConfig::tokens();
        Self {
            n: vec![1, 3],
            coverage: t.coverage,
            co_activation: t.co_activation,
            joint_coverage: t.joint_coverage,
            max_group_tokens: t.max_group,
            max_group_trigrams: DetectorConfig::trigrams().max_group,
            min_occurrences: t.min_occurrences,
            rule: t.rule,
        }
    }
}

impl DetectorSection {
    pub fn config(&self, n: usize, diffuse_cap: usize) -> DetectorConfig {
        DetectorConfig {
            n,
            coverage: self.coverage,
            co_activation: self.co_activation,
            joint_coverage: self.joint_coverage,
            max_group: if n == 1 {
                self.max_group_tokens
            } else {
                self.max_group_trigrams
            },
            min_occurrences: self.min_occurrences,
            rule: self.rule,
            diffuse_cap,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SuppressionSection {
    pub k: usize,
    /// Subtract the mean score over the vocabulary before ranking.
    pub center: bool,
}

impl Default for SuppressionSection {
    fn default() -> Self {
        Self { k: 10, center: false }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PositionalSection {
    pub threshold: f64,
    pub epsilon: f64,
    pub weak_band: f64,
    pub min_run: usize,
    pub smoothing_window: usize,
    pub min_alternations: usize,
    pub predictability: f64,
    /// Points per profile in the JSON output; 0 keeps every position.
    pub profile_bins: usize,
    /// Per-neuron profile plots per layer, highest MI first.
    pub max_plots: usize,
}

impl Default for PositionalSection {
    fn default() -> Self {
        let p = PositionalConfig::default();
        Self {
            threshold: p.threshold,
            epsilon: p.classify.epsilon,
            weak_band: p.classify.weak_band,
            min_run: p.classify.min_run,
            smoothing_window: p.classify.smoothing_window,
            min_alternations: p.classify.min_alternations,
            predictability: p.classify.predictability,
            profile_bins: 256,
            max_plots: 8,
        }
    }
}

impl PositionalSection {
    pub fn config(&self) -> PositionalConfig {
        PositionalConfig {
            threshold: self.threshold,
            classify: ClassifyConfig {
                epsilon: self.epsilon,
                weak_band: self.weak_band,
                min_run: self.min_run,
                smoothing_window: self.smoothing_window,
                min_alternations: self.min_alternations,
                predictability: self.predictability,
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnalysisConfig {
    pub store: Option<PathBuf>,
    pub output: Option<PathBuf>,
    pub layers: Layers,
    pub analyses: Vec<Analysis>,
    pub formats: Vec<Format>,
    pub ngram: NgramSection,
    pub detectors: DetectorSection,
    pub suppression: SuppressionSection,
    pub positional: PositionalSection,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        Self {
            store: None,
            output: None,
            layers: Layers::default(),
            analyses: Analysis::ALL.to_vec(),
            formats: vec![Format::Json, Format::Csv, Format::Svg],
            ngram: NgramSection::default(),
            detectors: DetectorSection::default(),
            suppression: SuppressionSection::default(),
            positional: PositionalSection::default(),
        }
    }
}

/// Invalid configuration; maps to exit code 2.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfigError(pub Vec<String>);

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "invalid configuration: {}", self.0.join("; "))
    }
}

impl std::error::Error for ConfigError {}

impl ConfigError {
    pub fn one(msg: impl Into<String>) -> Self {
        ConfigError(vec![msg.into()])
    }
}

impl AnalysisConfig {
    pub fn from_toml(text: &str, origin: &Path) -> Result<Self, ConfigError> {
        toml::from_str(text).map_err(|e| {
            let msg = e.message().trim().to_string();
            let location = e
                .span()
                .map(|s| {
                    let line = text[..s.start].matches('\n').count() + 1;
                    format!(" (line {line})")
                })
                .unwrap_or_default();
            ConfigError::one(format!("{}: {msg}{location}", origin.display()))
        })
    }

    pub fn output_dir(&self) -> Result<&Path, ConfigError> {
        self.output
            .as_deref()
            .ok_or_else(|| ConfigError::one("output: no output directory given (config `output` or --out)"))
    }

    /// Range checks and the store path, all problems at once. The output
    /// directory is checked separately since `validate` does not need one.
    pub fn validate(&self) -> Result<(), ConfigError> {
        let mut errs = Vec::new();
        let mut fraction = |name: &str, v: f64| {
            if !(0.0..=1.0).contains(&v) {
                errs.push(format!("{name} = {v} is not within [0, 1]"));
            }
        };
        fraction("ngram.coverage", self.ngram.coverage);
        fraction("detectors.coverage", self.detectors.coverage);
        fraction("detectors.co_activation", self.detectors.co_activation);
        fraction("detectors.joint_coverage", self.detectors.joint_coverage);
        fraction("positional.epsilon", self.positional.epsilon);
        fraction("positional.weak_band", self.positional.weak_band);
        fraction("positional.predictability", self.positional.predictability);
        if !(0.0..=std::f64::consts::LN_2).contains(&self.positional.threshold) {
            errs.push(format!(
                "positional.threshold = {} is outside [0, ln 2] (nats)",
                self.positional.threshold
            ));
        }
        if self.positional.epsilon > self.positional.weak_band {
            errs.push("positional.epsilon must not exceed positional.weak_band".into());
        }
        if let Some(&n) = self.ngram.n.iter().find(|&&n| !(1..=3).contains(&n)) {
            errs.push(format!("ngram.n contains {n}; supported values are 1, 2, 3"));
        }
        if let Some(&n) = self.detectors.n.iter().find(|&&n| n != 1 && n != 3) {
            errs.push(format!("detectors.n contains {n}; supported values are 1, 3"));
        }
        if self.suppression.k == 0 {
            errs.push("suppression.k must be at least 1".into());
        }
        if self.positional.smoothing_window == 0 {
            errs.push("positional.smoothing_window must be at least 1".into());
        }
        match &self.store {
            None => errs.push("store: no store path given (config `store` or --store)".into()),
            Some(p) if !p.is_dir() => errs.push(format!("store: {} is not a directory", p.display())),
            Some(_) => {}
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(ConfigError(errs))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_follow_the_fixed_constants() {
        let c = AnalysisConfig::default();
        assert_eq!(c.ngram.coverage, 0.95);
        assert_eq!(
            (c.detectors.max_group_tokens, c.detectors.max_group_trigrams),
            (5, 50)
        );
        assert_eq!(c.positional.threshold, 0.05);
        assert_eq!(c.detectors.min_occurrences, 10);
    }

    #[test]
    fn unknown_key_is_named() {
        let err =
            AnalysisConfig::from_toml("store = \"x\"\nbogus_key = 1\n", Path::new("c.toml")).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("bogus_key"), "{msg}");
        assert!(msg.contains("line 2"), "{msg}");
        let err =
            AnalysisConfig::from_toml("[positional]\nepsilonn = 0.1\n", Path::new("c.toml")).unwrap_err();
        assert!(err.to_string().contains("epsilonn"));
    }

    #[test]
    fn parses_sections_and_layers() {
        let text = r#"
            store = "s"
            output = "o"
            layers = "0-2,5"
            analyses = ["dead", "positional"]
            [positional]
            epsilon = 0.02
        "#;
        let c = AnalysisConfig::from_toml(text, Path::new("c.toml")).unwrap();
        assert_eq!(c.layers.resolve(6).unwrap(), vec![0, 1, 2, 5]);
        assert!(c.layers.resolve(4).is_err());
        assert_eq!(c.analyses, vec![Analysis::Dead, Analysis::Positional]);
        assert_eq!(c.positional.epsilon, 0.02);
        assert_eq!(c.positional.min_run, 32);
        let list = AnalysisConfig::from_toml("layers = [3, 1]", Path::new("c.toml")).unwrap();
        assert_eq!(list.layers.resolve(4).unwrap(), vec![1, 3]);
    }

    #[test]
    fn validation_collects_every_problem() {
        let mut c = AnalysisConfig::default();
        c.ngram.coverage = 1.5;
        c.detectors.n = vec![2];
        let err = c.validate().unwrap_err();
        assert_eq!(err.0.len(), 3, "{err}");
    }
}
