// SPDX-License-Identifier: MIT OR Apache-2.0

use std::path::PathBuf;

/// Errors produced while reading, writing or analyzing an activation store.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// Wrong magic bytes or a format version this build does not read.
    #[error("unsupported format in {path}: {reason}")]
    UnsupportedFormat { path: PathBuf, reason: String },

    /// Structurally invalid or truncated file.
    #[error("corrupt store file {path} at byte offset {offset}: {reason}")]
    Corruption {
        path: PathBuf,
        offset: u64,
        reason: String,
    },

    #[error("invalid manifest: {0}")]
    InvalidManifest(String),

    /// Data handed to the writer does not agree with the manifest.
    #[error("layer {layer}: {reason}")]
    LayerData { layer: usize, reason: String },

    #[error("invalid token stream: {0}")]
    TokenStream(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error(
        "store has no documents of exactly {context_len} tokens; \
         capture with packed full-length windows to analyze positions"
    )]
    NoFullLengthDocuments { context_len: usize },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn corrupt(path: impl Into<PathBuf>, offset: u64, reason: impl Into<String>) -> Self {
        Error::Corruption {
            path: path.into(),
            offset,
            reason: reason.into(),
        }
    }

    /// True for errors that indicate a damaged or unreadable store
    /// (as opposed to bad arguments).
    pub fn is_store_error(&self) -> bool {
        matches!(
            self,
            Error::Io { .. }
                | Error::UnsupportedFormat { .. }
                | Error::Corruption { .. }
                | Error::InvalidManifest(_)
        )
    }
}
