// SPDX-License-Identifier: MIT OR Apache-2.0

//! Vocabulary projection of FFN value rows.
//!
//! When neuron `i` fires, row `i` of the second FFN matrix (scaled by the
//! activation) is added to the residual stream. Dotting that row with every
//! unembedding row shows which tokens the update promotes (positive score)
//! and which it suppresses (negative score). Scores are raw dot products: no
//! final LayerNorm and no bias.

mod projection;
mod suppression;

pub use projection::{project_row, vocab_scores, ProjectionOptions, ScoredToken, VocabProjection};
pub use suppression::{suppression_rate, SuppressionEntry, SuppressionReport, TriggerScore, WeightSet};
