// SPDX-License-Identifier: MIT OR Apache-2.0

use std::f64::consts::LN_2;

use super::profile::PositionalProfile;

pub const DEFAULT_MI_THRESHOLD: f64 = 0.05;

/// Binary KL divergence `KL(p || q)` in nats, with `0 ln 0 = 0`. Written in
/// terms of `p - q` through `ln_1p` so that nearly equal arguments keep their
/// relative precision.
fn binary_kl(p: f64, q: f64) -> f64 {
    let d = p - q;
    let on = if p > 0.0 { p * (d / q).ln_1p() } else { 0.0 };
    let off = if p < 1.0 {
        (1.0 - p) * (-d / (1.0 - q)).ln_1p()
    } else {
        0.0
    };
    on + off
}

/// I(act; pos) in nats for a uniform position distribution, given the
/// per-position activation frequencies.
///
/// Each position contributes the binary KL divergence between its frequency
/// and the overall one, so the result is 0 for a constant profile and at most
/// ln 2.
pub fn mutual_information(fr_pos: &[f64]) -> f64 {
    let Some(&first) = fr_pos.first() else {
        return 0.0;
    };
    if fr_pos.iter().all(|&p| p == first) {
        return 0.0;
    }
    let t = fr_pos.len() as f64;
    let fr = fr_pos.iter().sum::<f64>() / t;
    if fr <= 0.0 || fr >= 1.0 {
        return 0.0;
    }
    let sum: f64 = fr_pos.iter().map(|&p| binary_kl(p, fr).max(0.0)).sum();
    (sum / t).max(0.0)
}

pub fn mutual_information_bits(fr_pos: &[f64]) -> f64 {
    mutual_information(fr_pos) / LN_2
}

/// Neurons with `mi > threshold`, highest MI first (ties by neuron id).
pub fn select_positional(profiles: &[PositionalProfile], threshold: f64) -> Vec<u32> {
    let mut hits: Vec<(f64, u32)> = profiles
        .iter()
        .filter(|p| p.mi > threshold)
        .map(|p| (p.mi, p.neuron))
        .collect();
    hits.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    hits.into_iter().map(|(_, n)| n).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Plain discrete MI over an explicit 2 x T joint table.
    fn joint_mi(fr_pos: &[f64]) -> f64 {
        let t = fr_pos.len() as f64;
        let joint: Vec<[f64; 2]> = fr_pos.iter().map(|&p| [p / t, (1.0 - p) / t]).collect();
        let mut p_act = [0.0; 2];
        for row in &joint {
            p_act[0] += row[0];
            p_act[1] += row[1];
        }
        let mut mi = 0.0;
        for row in &joint {
            let p_pos = row[0] + row[1];
            for a in 0..2 {
                if row[a] > 0.0 {
                    mi += row[a] * (row[a] / (p_pos * p_act[a])).ln();
                }
            }
        }
        mi
    }

    fn profile(neuron: u32, fr_pos: Vec<f64>) -> PositionalProfile {
        PositionalProfile::from_frequencies(0, neuron, fr_pos, 1)
    }

    #[test]
    fn half_indicator_is_ln2() {
        let fr: Vec<f64> = (0..2048).map(|p| if p < 1024 { 1.0 } else { 0.0 }).collect();
        assert!((mutual_information(&fr) - LN_2).abs() <= 1e-12);
        assert!((mutual_information_bits(&fr) - 1.0).abs() <= 1e-12);
    }

    #[test]
    fn degenerate_profiles() {
        assert_eq!(mutual_information(&[]), 0.0);
        assert_eq!(mutual_information(&[0.3; 100]), 0.0);
        assert_eq!(mutual_information(&[0.0; 10]), 0.0);
        assert_eq!(mutual_information(&[1.0; 10]), 0.0);
    }

    #[test]
    fn first_position_only() {
        let mut fr = vec![0.0; 16];
        fr[0] = 1.0;
        // H(act) for a 1/16 event: every bit of entropy is explained by position.
        let f: f64 = 1.0 / 16.0;
        let h = -(f * f.ln() + (1.0 - f) * (1.0 - f).ln());
        assert!((mutual_information(&fr) - h).abs() < 1e-12);
    }

    #[test]
    fn threshold_is_strict() {
        let mut ps = vec![profile(0, vec![0.5; 4]), profile(1, vec![1.0, 1.0, 0.0, 0.0])];
        ps.push(profile(2, vec![0.2, 0.1, 0.2, 0.1]));
        let exact = ps[2].mi;
        assert_eq!(select_positional(&ps, exact), vec![1]);
        assert_eq!(select_positional(&ps, 0.0), vec![1, 2]);
        assert_eq!(select_positional(&ps, DEFAULT_MI_THRESHOLD), vec![1]);
    }

    proptest! {
        #[test]
        fn matches_joint_table(fr in prop::collection::vec(0.0f64..=1.0, 1..300)) {
            let a = mutual_information(&fr);
            let b = joint_mi(&fr).max(0.0);
            prop_assert!((a - b).abs() <= 1e-9 * b.max(1e-300) || (a - b).abs() < 1e-15);
        }

        #[test]
        fn bounded_and_permutation_invariant(
            fr in prop::collection::vec(0.0f64..=1.0, 2..200),
            seed in any::<u64>(),
        ) {
            let mi = mutual_information(&fr);
            prop_assert!((0.0..=LN_2 + 1e-12).contains(&mi));
            let mut shuffled = fr.clone();
            let n = shuffled.len();
            let mut s = seed;
            for i in (1..n).rev() {
                s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                shuffled.swap(i, (s >> 33) as usize % (i + 1));
            }
            prop_assert!((mutual_information(&shuffled) - mi).abs() < 1e-12);
        }

        #[test]
        fn zero_only_for_constant(c in 0.0f64..=1.0, bump in 1e-3f64..0.5, at in 0usize..50) {
            let mut fr = vec![c; 50];
            fr[at] = if c + bump <= 1.0 { c + bump } else { c - bump };
            prop_assert!(mutual_information(&fr) > 1e-12);
        }
    }
}
