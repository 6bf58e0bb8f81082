// SPDX-License-Identifier: MIT OR Apache-2.0

use std::ops::Range;

use serde::{Deserialize, Serialize};

/// One context window. Offsets within a document are 1-based in reports and
/// 0-based in code.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    pub doc_id: u32,
    pub domain_id: u32,
    pub tokens: Vec<u32>,
}

impl Document {
    pub fn new(doc_id: u32, domain_id: u32, tokens: Vec<u32>) -> Self {
        Self {
            doc_id,
            domain_id,
            tokens,
        }
    }
}

/// Ordered documents; global positions run through them in order.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct TokenStream {
    pub documents: Vec<Document>,
}

impl TokenStream {
    pub fn new(documents: Vec<Document>) -> Self {
        Self { documents }
    }

    pub fn total_tokens(&self) -> usize {
        self.documents.iter().map(|d| d.tokens.len()).sum()
    }
}

/// Flat, fully decoded token stream with document boundaries.
///
/// This is what the analyses iterate over: `tokens[p]` is the token at global
/// position `p`, and `doc_starts[d]..doc_starts[d + 1]` is document `d`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenIndex {
    tokens: Vec<u32>,
    doc_starts: Vec<usize>,
    doc_ids: Vec<u32>,
    domain_ids: Vec<u32>,
}

impl TokenIndex {
    pub fn from_stream(stream: &TokenStream) -> Self {
        let mut index = Self::with_capacity(stream.documents.len(), stream.total_tokens());
        for doc in &stream.documents {
            index.push_document(doc.doc_id, doc.domain_id, &doc.tokens);
        }
        index
    }

    pub(crate) fn with_capacity(docs: usize, tokens: usize) -> Self {
        let mut doc_starts = Vec::with_capacity(docs + 1);
        doc_starts.push(0);
        Self {
            tokens: Vec::with_capacity(tokens),
            doc_starts,
            doc_ids: Vec::with_capacity(docs),
            domain_ids: Vec::with_capacity(docs),
        }
    }

    pub(crate) fn push_document(&mut self, doc_id: u32, domain_id: u32, tokens: &[u32]) {
        self.tokens.extend_from_slice(tokens);
        self.doc_starts.push(self.tokens.len());
        self.doc_ids.push(doc_id);
        self.domain_ids.push(domain_id);
    }

    pub fn tokens(&self) -> &[u32] {
        &self.tokens
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn n_docs(&self) -> usize {
        self.doc_ids.len()
    }

    pub fn doc_range(&self, doc: usize) -> Range<usize> {
        self.doc_starts[doc]..self.doc_starts[doc + 1]
    }

    pub fn doc_len(&self, doc: usize) -> usize {
        self.doc_starts[doc + 1] - self.doc_starts[doc]
    }

    pub fn doc_id(&self, doc: usize) -> u32 {
        self.doc_ids[doc]
    }

    pub fn domain_id(&self, doc: usize) -> u32 {
        self.domain_ids[doc]
    }

    /// For every global position, its 0-based offset inside its document.
    pub fn offsets(&self) -> Vec<u32> {
        let mut out = Vec::with_capacity(self.len());
        for d in 0..self.n_docs() {
            out.extend(0..self.doc_len(d) as u32);
        }
        out
    }

    /// Document index containing global position `pos`.
    pub fn doc_of(&self, pos: usize) -> usize {
        debug_assert!(pos < self.len());
        self.doc_starts.partition_point(|&s| s <= pos) - 1
    }

    /// Tokens of the n-gram ending at `pos`, if it lies inside one document.
    pub fn ngram_ending_at(&self, pos: usize, n: usize) -> Option<&[u32]> {
        let start = self.doc_starts[self.doc_of(pos)];
        if n == 0 || pos + 1 < start + n {
            return None;
        }
        Some(&self.tokens[pos + 1 - n..=pos])
    }
}
