// SPDX-License-Identifier: MIT OR Apache-2.0

use std::cmp::Ordering;

use serde::Serialize;

use crate::actstore::Matrix;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ProjectionOptions {
    /// Subtract the mean score over the vocabulary (softmax is invariant to it).
    pub center: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ScoredToken {
    pub token: u32,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VocabProjection {
    pub layer: usize,
    pub neuron: u32,
    #[serde(skip)]
    pub scores: Vec<f64>,
    /// Highest scores first, ties by ascending token id.
    pub top_promoted: Vec<ScoredToken>,
    /// Lowest scores first, ties by ascending token id.
    pub top_suppressed: Vec<ScoredToken>,
}

fn check_dims(values: &Matrix, unembed: &Matrix, layer: usize, neuron: u32) -> Result<()> {
    if values.cols() != unembed.cols() {
        return Err(Error::Dimension(format!(
            "weights_{layer}.bin has d_model {} but unembed.bin has d_model {}",
            values.cols(),
            unembed.cols()
        )));
    }
    if neuron as usize >= values.rows() {
        return Err(Error::Dimension(format!(
            "neuron {neuron} outside weights_{layer}.bin ({} rows)",
            values.rows()
        )));
    }
    Ok(())
}

/// `scores[v] = unembed[v] · values[neuron]`, accumulated in f64.
pub fn vocab_scores(
    values: &Matrix,
    unembed: &Matrix,
    layer: usize,
    neuron: u32,
    options: ProjectionOptions,
) -> Result<Vec<f64>> {
    check_dims(values, unembed, layer, neuron)?;
    let row = values.row(neuron as usize);
    let mut scores: Vec<f64> = (0..unembed.rows())
        .map(|v| {
            unembed
                .row(v)
                .iter()
                .zip(row)
                .map(|(&a, &b)| f64::from(a) * f64::from(b))
                .sum()
        })
        .collect();
    if options.center && !scores.is_empty() {
        let mean = scores.iter().sum::<f64>() / scores.len() as f64;
        scores.iter_mut().for_each(|s| *s -= mean);
    }
    Ok(scores)
}

fn by_score_desc(a: &ScoredToken, b: &ScoredToken) -> Ordering {
    b.score.total_cmp(&a.score).then(a.token.cmp(&b.token))
}

fn by_score_asc(a: &ScoredToken, b: &ScoredToken) -> Ordering {
    a.score.total_cmp(&b.score).then(a.token.cmp(&b.token))
}

/// The `k` first tokens under `order`, by partial selection.
pub(crate) fn select_top(
    scores: &[f64],
    k: usize,
    order: fn(&ScoredToken, &ScoredToken) -> Ordering,
) -> Vec<ScoredToken> {
    let mut all: Vec<ScoredToken> = scores
        .iter()
        .enumerate()
        .map(|(t, &score)| ScoredToken {
            token: t as u32,
            score,
        })
        .collect();
    let k = k.min(all.len());
    if k == 0 {
        return Vec::new();
    }
    if k < all.len() {
        all.select_nth_unstable_by(k - 1, order);
        all.truncate(k);
    }
    all.sort_unstable_by(order);
    all
}

pub fn project_row(
    values: &Matrix,
    unembed: &Matrix,
    layer: usize,
    neuron: u32,
    k: usize,
    options: ProjectionOptions,
) -> Result<VocabProjection> {
    if k > unembed.rows() {
        return Err(Error::InvalidArgument(format!(
            "k = {k} exceeds vocabulary size {}",
            unembed.rows()
        )));
    }
    let scores = vocab_scores(values, unembed, layer, neuron, options)?;
    Ok(VocabProjection {
        layer,
        neuron,
        top_promoted: select_top(&scores, k, by_score_desc),
        top_suppressed: select_top(&scores, k, by_score_asc),
        scores,
    })
}

/// Position of `token` in ascending score order (0 = most suppressed).
pub(crate) fn rank_from_bottom(scores: &[f64], token: u32) -> usize {
    let s = scores[token as usize];
    scores
        .iter()
        .enumerate()
        .filter(|&(v, &x)| x < s || (x == s && (v as u32) < token))
        .count()
}
