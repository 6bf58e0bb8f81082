// SPDX-License-Identifier: MIT OR Apache-2.0

use std::fs::File;
use std::ops::Deref;
use std::path::{Path, PathBuf};
use std::sync::OnceLock;

use memmap2::Mmap;

use crate::{Error, Result};

use super::format::{read_u32_at, ByteCursor, ACT_HEADER_LEN, ACT_MAGIC, FORMAT_VERSION, TOKENS_MAGIC};
use super::manifest::StoreManifest;
use super::matrix::{read_matrix, Matrix};
use super::tokens::TokenIndex;
use super::{activation_file_name, weights_file_name, MANIFEST_FILE, TOKENS_FILE, UNEMBED_FILE};

/// File contents, memory-mapped when non-empty.
enum Bytes {
    Mapped(Mmap),
    Empty,
}

impl Deref for Bytes {
    type Target = [u8];
    fn deref(&self) -> &[u8] {
        match self {
            Bytes::Mapped(m) => m,
            Bytes::Empty => &[],
        }
    }
}

fn map_file(path: &Path) -> Result<Bytes> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let len = file.metadata().map_err(|e| Error::io(path, e))?.len();
    if len == 0 {
        return Ok(Bytes::Empty);
    }
    // SAFETY: store files are treated as immutable once written; every read
    // through the map is bounds-checked against the mapped length.
    let map = unsafe { Mmap::map(&file) }.map_err(|e| Error::io(path, e))?;
    #[cfg(unix)]
    let _ = map.advise(memmap2::Advice::Sequential);
    Ok(Bytes::Mapped(map))
}

#[derive(Debug, Clone, Copy)]
struct DocEntry {
    doc_id: u32,
    domain_id: u32,
    byte_offset: usize,
    len: usize,
    start: u64,
}

/// Read-only view of a store directory. Immutable after open and safe to share
/// between threads.
pub struct StoreHandle {
    root: PathBuf,
    manifest: StoreManifest,
    tokens: Bytes,
    docs: Vec<DocEntry>,
    total_tokens: u64,
    token_index: OnceLock<TokenIndex>,
}

impl std::fmt::Debug for StoreHandle {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("StoreHandle")
            .field("root", &self.root)
            .field("manifest", &self.manifest)
            .field("documents", &self.docs.len())
            .field("total_tokens", &self.total_tokens)
            .finish()
    }
}

impl StoreHandle {
    /// Opens a store, checking the manifest, the token file structure and the
    /// header of every activation file. Event payloads are validated lazily
    /// while iterating (see [`StoreHandle::verify`] for a full scan).
    pub fn open(root: impl AsRef<Path>) -> Result<Self> {
        let root = root.as_ref().to_path_buf();
        let manifest = read_manifest(&root.join(MANIFEST_FILE))?;

        let tokens_path = root.join(TOKENS_FILE);
        let tokens = map_file(&tokens_path)?;
        let (docs, total_tokens) = scan_tokens(&tokens, &tokens_path, &manifest)?;

        let handle = Self {
            root,
            manifest,
            tokens,
            docs,
            total_tokens,
            token_index: OnceLock::new(),
        };
        for layer in 0..handle.manifest.n_layers {
            handle.layer(layer)?;
        }
        Ok(handle)
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn manifest(&self) -> &StoreManifest {
        &self.manifest
    }

    pub fn total_tokens(&self) -> u64 {
        self.total_tokens
    }

    pub fn n_documents(&self) -> usize {
        self.docs.len()
    }

    /// Documents in write order, tokens decoded on demand from the map.
    pub fn documents(&self) -> impl Iterator<Item = DocumentView<'_>> + '_ {
        self.docs.iter().map(move |d| DocumentView {
            doc_id: d.doc_id,
            domain_id: d.domain_id,
            start: d.start,
            bytes: &self.tokens[d.byte_offset..d.byte_offset + 4 * d.len],
        })
    }

    /// Flat decoded token stream, built on first use and cached. Token ids are
    /// validated here.
    pub fn token_index(&self) -> Result<&TokenIndex> {
        if let Some(ix) = self.token_index.get() {
            return Ok(ix);
        }
        let ix = self.decode_tokens()?;
        Ok(self.token_index.get_or_init(|| ix))
    }

    fn decode_tokens(&self) -> Result<TokenIndex> {
        let path = self.root.join(TOKENS_FILE);
        let mut ix = TokenIndex::with_capacity(self.docs.len(), self.total_tokens as usize);
        let mut buf = Vec::new();
        for d in &self.docs {
            buf.clear();
            for i in 0..d.len {
                let off = d.byte_offset + 4 * i;
                let t = read_u32_at(&self.tokens, off);
                if t as usize >= self.manifest.vocab_size {
                    return Err(Error::corrupt(
                        &path,
                        off as u64,
                        format!("token {t} is not below vocab_size {}", self.manifest.vocab_size),
                    ));
                }
                if i == 0 && t != self.manifest.bos_token_id {
                    return Err(Error::corrupt(
                        &path,
                        off as u64,
                        format!("document {} does not start with BOS", d.doc_id),
                    ));
                }
                buf.push(t);
            }
            ix.push_document(d.doc_id, d.domain_id, &buf);
        }
        Ok(ix)
    }

    /// Maps the activation file of `layer` and checks its header.
    pub fn layer(&self, layer: usize) -> Result<LayerEvents> {
        if layer >= self.manifest.n_layers {
            return Err(Error::InvalidArgument(format!(
                "layer {layer} out of range (store has {} layers)",
                self.manifest.n_layers
            )));
        }
        let path = self.root.join(activation_file_name(layer));
        let bytes = map_file(&path)?;
        let mut c = ByteCursor::new(&bytes, &path);
        c.header(ACT_MAGIC)?;
        let file_layer = c.u32("layer")?;
        let token_count = c.u64("token_count")?;
        if file_layer as usize != layer {
            return Err(c.corrupt(8, format!("header says layer {file_layer}, expected {layer}")));
        }
        if token_count != self.total_tokens {
            return Err(c.corrupt(
                12,
                format!(
                    "token_count {token_count} disagrees with tokens.bin ({})",
                    self.total_tokens
                ),
            ));
        }
        let min_len = (ACT_HEADER_LEN as u64).saturating_add(token_count.saturating_mul(4));
        if (bytes.len() as u64) < min_len {
            return Err(c.corrupt(
                bytes.len(),
                format!("file too short for {token_count} position records"),
            ));
        }
        Ok(LayerEvents {
            layer,
            path,
            bytes,
            token_count,
            d_ffn: self.manifest.d_ffn,
            has_values: self.manifest.has_values,
        })
    }

    /// Full scan of tokens and every layer. Returns total event count per layer.
    pub fn verify(&self) -> Result<Vec<u64>> {
        self.token_index()?;
        (0..self.manifest.n_layers)
            .map(|l| self.layer(l)?.verify())
            .collect()
    }

    pub fn has_unembedding(&self) -> bool {
        self.root.join(UNEMBED_FILE).exists()
    }

    /// Value matrix for `layer` (rows = d_ffn), or `None` when not exported.
    pub fn value_matrix(&self, layer: usize) -> Result<Option<Matrix>> {
        let path = self.root.join(weights_file_name(layer));
        if !path.exists() {
            return Ok(None);
        }
        let m = read_matrix(&path)?;
        if m.rows() != self.manifest.d_ffn {
            return Err(Error::Dimension(format!(
                "{}: {} rows, manifest d_ffn is {}",
                path.display(),
                m.rows(),
                self.manifest.d_ffn
            )));
        }
        Ok(Some(m))
    }

    pub fn unembedding(&self) -> Result<Option<Matrix>> {
        let path = self.root.join(UNEMBED_FILE);
        if !path.exists() {
            return Ok(None);
        }
        let m = read_matrix(&path)?;
        if m.rows() != self.manifest.vocab_size {
            return Err(Error::Dimension(format!(
                "{}: {} rows, manifest vocab_size is {}",
                path.display(),
                m.rows(),
                self.manifest.vocab_size
            )));
        }
        Ok(Some(m))
    }
}

fn read_manifest(path: &Path) -> Result<StoreManifest> {
    let text = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let manifest: StoreManifest = serde_json::from_slice(&text).map_err(|e| {
        use serde_json::error::Category;
        match e.classify() {
            Category::Eof | Category::Syntax => {
                let offset = line_col_offset(&text, e.line(), e.column());
                Error::corrupt(path, offset, format!("manifest JSON: {e}"))
            }
            _ => Error::InvalidManifest(e.to_string()),
        }
    })?;
    if manifest.format_version != FORMAT_VERSION {
        return Err(Error::UnsupportedFormat {
            path: path.to_path_buf(),
            reason: format!(
                "format_version {}, this build reads {FORMAT_VERSION}",
                manifest.format_version
            ),
        });
    }
    manifest.validate()?;
    Ok(manifest)
}

fn line_col_offset(text: &[u8], line: usize, column: usize) -> u64 {
    let mut offset = 0usize;
    for (i, l) in text.split(|&b| b == b'\n').enumerate() {
        if i + 1 == line {
            return (offset + column.saturating_sub(1)).min(text.len()) as u64;
        }
        offset += l.len() + 1;
    }
    text.len() as u64
}

fn scan_tokens(bytes: &[u8], path: &Path, manifest: &StoreManifest) -> Result<(Vec<DocEntry>, u64)> {
    let mut c = ByteCursor::new(bytes, path);
    c.header(TOKENS_MAGIC)?;
    let doc_count = c.u32("doc_count")? as usize;
    let mut docs = Vec::with_capacity(doc_count.min(bytes.len() / 12));
    let mut start = 0u64;
    for _ in 0..doc_count {
        let header_at = c.pos();
        let doc_id = c.u32("doc_id")?;
        let domain_id = c.u32("domain_id")?;
        let len = c.u32("document length")? as usize;
        if len == 0 || len > manifest.context_len {
            return Err(c.corrupt(
                header_at + 8,
                format!("document length {len} outside 1..={}", manifest.context_len),
            ));
        }
        if domain_id as usize >= manifest.domain_names.len() {
            return Err(c.corrupt(header_at + 4, format!("domain_id {domain_id} out of range")));
        }
        let byte_offset = c.pos();
        c.take(4 * len, "document tokens")?;
        docs.push(DocEntry {
            doc_id,
            domain_id,
            byte_offset,
            len,
            start,
        });
        start += len as u64;
    }
    if c.remaining() != 0 {
        return Err(c.corrupt(c.pos(), "trailing bytes after last document"));
    }
    Ok((docs, start))
}

/// One document of the token stream, borrowed from the mapped token file.
#[derive(Debug, Clone, Copy)]
pub struct DocumentView<'a> {
    pub doc_id: u32,
    pub domain_id: u32,
    /// Global position of the first token.
    pub start: u64,
    bytes: &'a [u8],
}

impl<'a> DocumentView<'a> {
    pub fn len(&self) -> usize {
        self.bytes.len() / 4
    }

    pub fn is_empty(&self) -> bool {
        self.bytes.is_empty()
    }

    pub fn tokens(&self) -> impl Iterator<Item = u32> + 'a {
        let bytes = self.bytes;
        bytes
            .chunks_exact(4)
            .map(|b| u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}

/// Mapped activation file of one layer.
pub struct LayerEvents {
    layer: usize,
    path: PathBuf,
    bytes: Bytes,
    token_count: u64,
    d_ffn: usize,
    has_values: bool,
}

impl LayerEvents {
    pub fn layer(&self) -> usize {
        self.layer
    }

    pub fn token_count(&self) -> u64 {
        self.token_count
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    /// Position records in token-stream order. Each item is validated; the
    /// first structural problem is yielded as an error and ends iteration.
    pub fn iter(&self) -> EventIter<'_> {
        EventIter {
            bytes: &self.bytes,
            path: &self.path,
            pos: ACT_HEADER_LEN,
            index: 0,
            token_count: self.token_count,
            d_ffn: self.d_ffn as u64,
            has_values: self.has_values,
            finished: false,
        }
    }

    /// Scans the whole file; returns the total number of events.
    pub fn verify(&self) -> Result<u64> {
        let mut total = 0u64;
        for p in self.iter() {
            total += p?.len() as u64;
        }
        Ok(total)
    }
}

/// Iterator over the position records of a [`LayerEvents`].
pub struct EventIter<'a> {
    bytes: &'a [u8],
    path: &'a Path,
    pos: usize,
    index: u64,
    token_count: u64,
    d_ffn: u64,
    has_values: bool,
    finished: bool,
}

impl<'a> EventIter<'a> {
    fn fail(&mut self, offset: usize, reason: String) -> Option<Result<PositionEvents<'a>>> {
        self.finished = true;
        Some(Err(Error::corrupt(self.path, offset as u64, reason)))
    }
}

impl<'a> Iterator for EventIter<'a> {
    type Item = Result<PositionEvents<'a>>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.finished {
            return None;
        }
        if self.index == self.token_count {
            self.finished = true;
            if self.pos != self.bytes.len() {
                return self.fail(self.pos, "trailing bytes after last position".into());
            }
            return None;
        }
        let at = self.pos;
        if self.bytes.len() - at < 4 {
            return self.fail(at, format!("truncated record for position {}", self.index));
        }
        let k = read_u32_at(self.bytes, at) as usize;
        let width = if self.has_values { 8 } else { 4 };
        let body = k.checked_mul(width);
        let end = body.and_then(|b| (at + 4).checked_add(b));
        let end = match end {
            Some(e) if e <= self.bytes.len() => e,
            _ => {
                return self.fail(
                    at,
                    format!(
                        "truncated record for position {}: {k} events declared",
                        self.index
                    ),
                )
            }
        };
        let ids = &self.bytes[at + 4..at + 4 + 4 * k];
        let mut prev: Option<u32> = None;
        for (i, b) in ids.chunks_exact(4).enumerate() {
            let id = u32::from_le_bytes([b[0], b[1], b[2], b[3]]);
            if u64::from(id) >= self.d_ffn || prev.is_some_and(|p| p >= id) {
                return self.fail(
                    at + 4 + 4 * i,
                    format!("invalid neuron id {id} at position {}", self.index),
                );
            }
            prev = Some(id);
        }
        let values = self.has_values.then(|| &self.bytes[at + 4 + 4 * k..end]);
        self.pos = end;
        self.index += 1;
        Some(Ok(PositionEvents { ids, values }))
    }
}

/// Events at one token position, borrowed from the mapped file.
#[derive(Debug, Clone, Copy)]
pub struct PositionEvents<'a> {
    ids: &'a [u8],
    values: Option<&'a [u8]>,
}

impl<'a> PositionEvents<'a> {
    pub fn len(&self) -> usize {
        self.ids.len() / 4
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// Active neuron ids, ascending.
    pub fn neurons(&self) -> impl Iterator<Item = u32> + 'a {
        self.ids
            .chunks_exact(4)
            .map(|b| u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    pub fn values(&self) -> Option<impl Iterator<Item = f32> + 'a> {
        self.values.map(|v| {
            v.chunks_exact(4)
                .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
        })
    }

    pub fn to_vec(&self) -> Vec<u32> {
        self.neurons().collect()
    }
}
