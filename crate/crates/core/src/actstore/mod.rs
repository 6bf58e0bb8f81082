// SPDX-License-Identifier: MIT OR Apache-2.0

//! On-disk activation store.
//!
//! A store is a directory:
//!
//! ```text
//! manifest.json        StoreManifest as JSON
//! tokens.bin           "NSTK" u32 version, u32 doc_count, docs...
//! act_<layer>.bin      "NSAC" u32 version, u32 layer, u64 token_count, positions...
//! weights_<layer>.bin  "NSMX" value matrix (optional)
//! unembed.bin          "NSMX" unembedding matrix (optional)
//! ```
//!
//! All integers are little-endian. Each position record in an activation file
//! is `u32 k` followed by `k` ascending neuron ids and, when the manifest has
//! `has_values`, `k` f32 values. Global token positions are the flattened
//! (document, offset) order of `tokens.bin`.

mod block;
mod format;
mod manifest;
mod matrix;
mod postings;
mod reader;
mod tokens;
mod writer;

pub use block::EventBlock;
pub use format::{ACT_MAGIC, FORMAT_VERSION, MATRIX_MAGIC, TOKENS_MAGIC};
pub use manifest::StoreManifest;
pub use matrix::{read_matrix, write_matrix, Matrix};
pub use postings::{invert_postings, NeuronPostings};
pub use reader::{DocumentView, EventIter, LayerEvents, PositionEvents, StoreHandle};
pub use tokens::{Document, TokenIndex, TokenStream};
pub use writer::{write_store, LayerWriter, StoreWriter};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const TOKENS_FILE: &str = "tokens.bin";
pub const UNEMBED_FILE: &str = "unembed.bin";

pub fn activation_file_name(layer: usize) -> String {
    format!("act_{layer}.bin")
}

pub fn weights_file_name(layer: usize) -> String {
    format!("weights_{layer}.bin")
}
