// SPDX-License-Identifier: MIT OR Apache-2.0

use serde::Serialize;

/// Closed interval of 1-based positions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub struct Interval {
    pub start: usize,
    pub end: usize,
}

impl Interval {
    pub fn new(start: usize, end: usize) -> Self {
        debug_assert!(1 <= start && start <= end);
        Self { start, end }
    }

    pub fn len(&self) -> usize {
        self.end + 1 - self.start
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn contains(&self, pos: usize) -> bool {
        self.start <= pos && pos <= self.end
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct IndicatorRanges {
    pub layer: usize,
    pub neuron: u32,
    /// Disjoint and sorted.
    pub on_intervals: Vec<Interval>,
}

impl IndicatorRanges {
    pub fn covered_positions(&self) -> usize {
        self.on_intervals.iter().map(Interval::len).sum()
    }
}

/// Maximal position intervals of length `>= min_len` on which the raw
/// profile stays at or above `1 - epsilon`.
pub fn indicator_ranges(
    layer: usize,
    neuron: u32,
    fr_pos: &[f64],
    epsilon: f64,
    min_len: usize,
) -> IndicatorRanges {
    let mut on_intervals = Vec::new();
    let mut start = None;
    for (i, &v) in fr_pos
        .iter()
        .chain(std::iter::once(&f64::NEG_INFINITY))
        .enumerate()
    {
        let on = v >= 1.0 - epsilon;
        match (on, start) {
            (true, None) => start = Some(i),
            (false, Some(s)) => {
                if i - s >= min_len.max(1) {
                    on_intervals.push(Interval::new(s + 1, i));
                }
                start = None;
            }
            _ => {}
        }
    }
    IndicatorRanges {
        layer,
        neuron,
        on_intervals,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TeamCoverage {
    pub context_len: usize,
    pub members: Vec<u32>,
    pub covered_positions: usize,
    /// `covered_positions / context_len`.
    pub coverage: f64,
    pub gaps: Vec<Interval>,
    /// Neurons whose removal on its own leaves the union unchanged.
    pub individually_redundant: Vec<u32>,
    /// Neurons dropped by removing redundant members one at a time, last
    /// member first. The remaining team has the same union and no redundancy.
    pub redundant: Vec<u32>,
}

/// Union coverage of `[1, context_len]` by a team of indicator neurons.
pub fn team_coverage(team: &[IndicatorRanges], context_len: usize) -> TeamCoverage {
    let mut cover = vec![0u32; context_len + 1];
    let clamp = |iv: &Interval| iv.start.max(1)..=iv.end.min(context_len);
    for member in team {
        for iv in &member.on_intervals {
            for p in clamp(iv) {
                cover[p] += 1;
            }
        }
    }
    let covered_positions = cover[1..].iter().filter(|&&c| c > 0).count();

    let mut gaps = Vec::new();
    let mut gap_start = None;
    for (p, &c) in cover
        .iter()
        .enumerate()
        .skip(1)
        .chain(std::iter::once((context_len + 1, &1)))
    {
        let covered = c > 0;
        match (covered, gap_start) {
            (false, None) => gap_start = Some(p),
            (true, Some(s)) => {
                gaps.push(Interval::new(s, p - 1));
                gap_start = None;
            }
            _ => {}
        }
    }

    let removable = |member: &IndicatorRanges, cover: &[u32]| {
        member
            .on_intervals
            .iter()
            .all(|iv| clamp(iv).all(|p| cover[p] >= 2))
    };
    let individually_redundant = team
        .iter()
        .filter(|m| removable(m, &cover))
        .map(|m| m.neuron)
        .collect();
    let mut redundant = Vec::new();
    for member in team.iter().rev() {
        if removable(member, &cover) {
            for iv in &member.on_intervals {
                for p in clamp(iv) {
                    cover[p] -= 1;
                }
            }
            redundant.push(member.neuron);
        }
    }
    redundant.reverse();

    TeamCoverage {
        context_len,
        members: team.iter().map(|m| m.neuron).collect(),
        covered_positions,
        coverage: if context_len == 0 {
            0.0
        } else {
            covered_positions as f64 / context_len as f64
        },
        gaps,
        individually_redundant,
        redundant,
    }
}
