// SPDX-License-Identifier: MIT OR Apache-2.0

//! # neuronscope
//!
//! Neuron-level analysis of feed-forward (FFN) activations in decoder-only
//! transformers. The toolkit works on a compact binary store of activation
//! events (which neurons fired at which token) and answers four questions:
//!
//! - which neurons never fire ([`stats`]),
//! - which neurons fire on a small group of tokens or trigrams ([`ngram`]),
//! - what those neurons write into the residual stream, read through the
//!   unembedding ([`vocabproj`]),
//! - which neurons encode token position rather than content ([`posneuron`]).
//!
//! Only the activated/not-activated bit of each neuron is used. A neuron is
//! activated when its post-nonlinearity value is strictly positive.
//!
//! ```no_run
//! use neuronscope::actstore::StoreHandle;
//! use neuronscope::stats::layer_summaries;
//!
//! # fn main() -> neuronscope::Result<()> {
//! let store = StoreHandle::open("dump/opt-125m")?;
//! for summary in layer_summaries(&store)? {
//!     println!("layer {:2}: {:.1}% dead", summary.layer, 100.0 * summary.dead_fraction);
//! }
//! # Ok(())
//! # }
//! ```

pub mod actstore;
pub mod error;
pub mod ngram;
pub mod posneuron;
pub mod stats;
pub mod synth;
pub mod vocabproj;

pub use error::{Error, Result};
