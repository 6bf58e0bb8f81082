// SPDX-License-Identifier: MIT OR Apache-2.0

use std::fmt;
use std::ops::Range;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Shape {
    Oscillatory,
    BothExtremes,
    OneExtreme,
    Other,
}

impl Shape {
    pub const ALL: [Shape; 4] = [
        Shape::Oscillatory,
        Shape::BothExtremes,
        Shape::OneExtreme,
        Shape::Other,
    ];

    pub fn label(self) -> &'static str {
        match self {
            Shape::Oscillatory => "oscillatory",
            Shape::BothExtremes => "both_extremes",
            Shape::OneExtreme => "one_extreme",
            Shape::Other => "other",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strength {
    Strong,
    Weak,
}

impl Strength {
    pub fn label(self) -> &'static str {
        match self {
            Strength::Strong => "strong",
            Strength::Weak => "weak",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct PatternClass {
    pub shape: Shape,
    pub strength: Strength,
}

impl PatternClass {
    pub fn new(shape: Shape, strength: Strength) -> Self {
        Self { shape, strength }
    }
}

impl fmt::Display for PatternClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {}", self.strength.label(), self.shape.label())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClassifyConfig {
    /// Strong bands are `[0, epsilon]` and `[1 - epsilon, 1]`.
    pub epsilon: f64,
    /// Weak bands are `[0, weak_band]` and `[1 - weak_band, 1]`.
    pub weak_band: f64,
    /// Shortest run (in positions) that counts as reaching a band.
    pub min_run: usize,
    /// Centered moving-average window applied before band tests.
    pub smoothing_window: usize,
    pub min_alternations: usize,
    /// Lag-1 autocorrelation at or above which an "other" profile is strong.
    pub predictability: f64,
}

impl Default for ClassifyConfig {
    fn default() -> Self {
        Self {
            epsilon: 0.05,
            weak_band: 0.2,
            min_run: 32,
            smoothing_window: 11,
            min_alternations: 3,
            predictability: 0.9,
        }
    }
}

/// Centered moving average; the window shrinks at the edges.
pub fn smooth(values: &[f64], window: usize) -> Vec<f64> {
    let half = window.max(1) / 2;
    (0..values.len())
        .map(|i| {
            let lo = i.saturating_sub(half);
            let hi = (i + half + 1).min(values.len());
            values[lo..hi].iter().sum::<f64>() / (hi - lo) as f64
        })
        .collect()
}

/// Maximal runs (0-based, half-open) in the low and high bands.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct BandRuns {
    pub low: Vec<Range<usize>>,
    pub high: Vec<Range<usize>>,
}

impl BandRuns {
    pub fn reaches_low(&self) -> bool {
        !self.low.is_empty()
    }

    pub fn reaches_high(&self) -> bool {
        !self.high.is_empty()
    }
}

fn runs_where(values: &[f64], min_run: usize, pred: impl Fn(f64) -> bool) -> Vec<Range<usize>> {
    let mut out = Vec::new();
    let mut start = None;
    for (i, &v) in values.iter().enumerate() {
        match (pred(v), start) {
            (true, None) => start = Some(i),
            (false, Some(s)) => {
                if i - s >= min_run.max(1) {
                    out.push(s..i);
                }
                start = None;
            }
            _ => {}
        }
    }
    if let Some(s) = start {
        if values.len() - s >= min_run.max(1) {
            out.push(s..values.len());
        }
    }
    out
}

pub fn band_runs(values: &[f64], band: f64, min_run: usize) -> BandRuns {
    BandRuns {
        low: runs_where(values, min_run, |v| v <= band),
        high: runs_where(values, min_run, |v| v >= 1.0 - band),
    }
}

/// Number of switches between low and high runs, in position order.
pub fn alternations(runs: &BandRuns) -> usize {
    let mut marks: Vec<(usize, bool)> = runs
        .low
        .iter()
        .map(|r| (r.start, false))
        .chain(runs.high.iter().map(|r| (r.start, true)))
        .collect();
    marks.sort_unstable();
    marks.windows(2).filter(|w| w[0].1 != w[1].1).count()
}

/// Pearson correlation between `x[i]` and `x[i + 1]`. A flat series is
/// perfectly predictable and returns 1.
pub fn lag1_autocorrelation(x: &[f64]) -> f64 {
    if x.len() < 2 || x.iter().all(|&v| v == x[0]) {
        return 1.0;
    }
    let mean = x.iter().sum::<f64>() / x.len() as f64;
    let var: f64 = x.iter().map(|v| (v - mean).powi(2)).sum();
    if var <= 0.0 {
        return 1.0;
    }
    let cov: f64 = x.windows(2).map(|w| (w[0] - mean) * (w[1] - mean)).sum();
    cov / var
}

/// Everything the decision rules look at, for reports and debugging.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PatternEvidence {
    pub class: PatternClass,
    pub weak_alternations: usize,
    pub strong_alternations: usize,
    pub weak_low: bool,
    pub weak_high: bool,
    pub strong_low: bool,
    pub strong_high: bool,
    pub lag1_autocorrelation: f64,
}

pub fn classify_with_evidence(fr_pos: &[f64], config: &ClassifyConfig) -> PatternEvidence {
    let smoothed = smooth(fr_pos, config.smoothing_window);
    let weak = band_runs(&smoothed, config.weak_band, config.min_run);
    let strong = band_runs(&smoothed, config.epsilon, config.min_run);
    let weak_alternations = alternations(&weak);
    let strong_alternations = alternations(&strong);
    let ac = lag1_autocorrelation(fr_pos);

    let shape = if weak_alternations >= config.min_alternations {
        Shape::Oscillatory
    } else if weak.reaches_low() && weak.reaches_high() {
        Shape::BothExtremes
    } else if weak.reaches_low() || weak.reaches_high() {
        Shape::OneExtreme
    } else {
        Shape::Other
    };
    let strong_enough = match shape {
        Shape::Oscillatory => strong_alternations >= config.min_alternations,
        Shape::BothExtremes => strong.reaches_low() && strong.reaches_high(),
        Shape::OneExtreme => {
            (weak.reaches_low() && strong.reaches_low()) || (weak.reaches_high() && strong.reaches_high())
        }
        Shape::Other => ac >= config.predictability,
    };
    let strength = if strong_enough {
        Strength::Strong
    } else {
        Strength::Weak
    };
    PatternEvidence {
        class: PatternClass::new(shape, strength),
        weak_alternations,
        strong_alternations,
        weak_low: weak.reaches_low(),
        weak_high: weak.reaches_high(),
        strong_low: strong.reaches_low(),
        strong_high: strong.reaches_high(),
        lag1_autocorrelation: ac,
    }
}

pub fn classify_pattern(fr_pos: &[f64], config: &ClassifyConfig) -> PatternClass {
    classify_with_evidence(fr_pos, config).class
}

#[cfg(test)]
mod tests {
    use super::*;

    const T: usize = 2048;

    fn square(lo: f64, hi: f64, period: usize) -> Vec<f64> {
        (0..T)
            .map(|p| if (p / (period / 2)) % 2 == 0 { hi } else { lo })
            .collect()
    }

    fn class(fr: &[f64]) -> PatternClass {
        classify_pattern(fr, &ClassifyConfig::default())
    }

    #[test]
    fn smoothing_truncates_at_edges() {
        let s = smooth(&[0.0, 0.0, 3.0, 0.0], 3);
        assert_eq!(s, vec![0.0, 1.0, 1.0, 1.5]);
        assert_eq!(smooth(&[2.0; 5], 11), vec![2.0; 5]);
    }

    #[test]
    fn runs_respect_min_length() {
        let v = [0.0, 0.0, 0.0, 0.5, 0.0, 1.0, 1.0, 1.0];
        let r = band_runs(&v, 0.05, 3);
        assert_eq!(r.low, vec![0..3]);
        assert_eq!(r.high, vec![5..8]);
        assert_eq!(alternations(&r), 1);
    }

    #[test]
    fn square_wave_is_strong_oscillatory() {
        let c = class(&square(0.0, 1.0, 200));
        assert_eq!(c, PatternClass::new(Shape::Oscillatory, Strength::Strong));
        let c = class(&square(0.1, 0.9, 200));
        assert_eq!(c, PatternClass::new(Shape::Oscillatory, Strength::Weak));
    }

    #[test]
    fn step_is_both_extremes() {
        let fr: Vec<f64> = (0..T).map(|p| if p < 499 { 1.0 } else { 0.0 }).collect();
        assert_eq!(
            class(&fr),
            PatternClass::new(Shape::BothExtremes, Strength::Strong)
        );
    }

    #[test]
    fn one_strong_band_of_two_weak_is_weak() {
        let fr: Vec<f64> = (0..T).map(|p| if p < 1000 { 0.0 } else { 0.85 }).collect();
        assert_eq!(class(&fr), PatternClass::new(Shape::BothExtremes, Strength::Weak));
    }

    #[test]
    fn short_excursions_do_not_count() {
        // 20-position dips are shorter than the minimal run.
        let fr: Vec<f64> = (0..T).map(|p| if p % 200 < 20 { 0.0 } else { 0.5 }).collect();
        assert_eq!(class(&fr).shape, Shape::Other);
    }

    #[test]
    fn other_strength_follows_predictability() {
        let smooth_curve: Vec<f64> = (0..T).map(|p| 0.5 + 0.25 * (p as f64 / 300.0).sin()).collect();
        assert_eq!(
            class(&smooth_curve),
            PatternClass::new(Shape::Other, Strength::Strong)
        );
        let jagged: Vec<f64> = (0..T).map(|p| if p % 2 == 0 { 0.35 } else { 0.65 }).collect();
        assert_eq!(class(&jagged), PatternClass::new(Shape::Other, Strength::Weak));
    }

    #[test]
    fn autocorrelation_edges() {
        assert_eq!(lag1_autocorrelation(&[0.4; 10]), 1.0);
        assert!(lag1_autocorrelation(&[0.0, 1.0, 0.0, 1.0, 0.0, 1.0]) < -0.5);
    }
}
