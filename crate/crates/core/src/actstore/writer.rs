// SPDX-License-Identifier: MIT OR Apache-2.0

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use tempfile::TempDir;

use crate::{Error, Result};

use super::block::EventBlock;
use super::format::{
    write_f32_slice, write_u32, write_u32_slice, write_u64, ACT_MAGIC, FORMAT_VERSION, TOKENS_MAGIC,
};
use super::manifest::StoreManifest;
use super::matrix::{write_matrix_to, Matrix};
use super::tokens::TokenStream;
use super::{activation_file_name, weights_file_name, MANIFEST_FILE, TOKENS_FILE, UNEMBED_FILE};

const WRITE_BUFFER: usize = 1 << 20;

/// Streaming store writer. Files go into a hidden temporary directory next to
/// the destination, which is renamed into place by [`StoreWriter::finish`].
/// Dropping the writer without finishing leaves nothing behind.
pub struct StoreWriter {
    dest: PathBuf,
    tmp: TempDir,
    manifest: StoreManifest,
    token_count: Option<u64>,
    layers_done: Vec<bool>,
}

impl StoreWriter {
    pub fn create(dest: impl AsRef<Path>, manifest: StoreManifest) -> Result<Self> {
        manifest.validate()?;
        if manifest.format_version != FORMAT_VERSION {
            return Err(Error::InvalidManifest(format!(
                "writer produces format_version {FORMAT_VERSION}, manifest says {}",
                manifest.format_version
            )));
        }
        let dest = dest.as_ref().to_path_buf();
        if dest.exists() {
            return Err(Error::io(
                &dest,
                std::io::Error::new(std::io::ErrorKind::AlreadyExists, "destination exists"),
            ));
        }
        let parent = dest
            .parent()
            .filter(|p| !p.as_os_str().is_empty())
            .unwrap_or(Path::new("."));
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        let tmp = tempfile::Builder::new()
            .prefix(".neuronscope-store-")
            .tempdir_in(parent)
            .map_err(|e| Error::io(parent, e))?;
        let n_layers = manifest.n_layers;
        Ok(Self {
            dest,
            tmp,
            manifest,
            token_count: None,
            layers_done: vec![false; n_layers],
        })
    }

    pub fn manifest(&self) -> &StoreManifest {
        &self.manifest
    }

    fn tmp_path(&self, name: &str) -> PathBuf {
        self.tmp.path().join(name)
    }

    pub fn write_tokens(&mut self, stream: &TokenStream) -> Result<()> {
        if self.token_count.is_some() {
            return Err(Error::TokenStream("tokens already written".into()));
        }
        validate_stream(&self.manifest, stream)?;
        let path = self.tmp_path(TOKENS_FILE);
        let file = File::create(&path).map_err(|e| Error::io(&path, e))?;
        let mut w = BufWriter::with_capacity(WRITE_BUFFER, file);
        let io = |e| Error::io(&path, e);
        w.write_all(&TOKENS_MAGIC).map_err(io)?;
        write_u32(&mut w, FORMAT_VERSION).map_err(io)?;
        write_u32(&mut w, stream.documents.len() as u32).map_err(io)?;
        for doc in &stream.documents {
            write_u32(&mut w, doc.doc_id).map_err(io)?;
            write_u32(&mut w, doc.domain_id).map_err(io)?;
            write_u32(&mut w, doc.tokens.len() as u32).map_err(io)?;
            write_u32_slice(&mut w, &doc.tokens).map_err(io)?;
        }
        w.flush().map_err(io)?;
        self.token_count = Some(stream.total_tokens() as u64);
        Ok(())
    }

    /// Opens the activation file for `layer`. Tokens must be written first so
    /// the position count is known.
    pub fn layer(&mut self, layer: usize) -> Result<LayerWriter<'_>> {
        let token_count = self.token_count.ok_or_else(|| Error::LayerData {
            layer,
            reason: "write tokens before activation events".into(),
        })?;
        if layer >= self.manifest.n_layers {
            return Err(Error::LayerData {
                layer,
                reason: format!("manifest has only {} layers", self.manifest.n_layers),
            });
        }
        if self.layers_done[layer] {
            return Err(Error::LayerData {
                layer,
                reason: "layer written twice".into(),
            });
        }
        let path = self.tmp_path(&activation_file_name(layer));
        let file = File::create(&path).map_err(|e| Error::io(&path, e))?;
        let mut w = BufWriter::with_capacity(WRITE_BUFFER, file);
        let header = (|| {
            w.write_all(&ACT_MAGIC)?;
            write_u32(&mut w, FORMAT_VERSION)?;
            write_u32(&mut w, layer as u32)?;
            write_u64(&mut w, token_count)
        })();
        header.map_err(|e| Error::io(&path, e))?;
        Ok(LayerWriter {
            layer,
            path,
            w,
            expected: token_count,
            written: 0,
            d_ffn: self.manifest.d_ffn,
            has_values: self.manifest.has_values,
            done: &mut self.layers_done[layer],
        })
    }

    pub fn write_value_matrix(&mut self, layer: usize, matrix: &Matrix) -> Result<()> {
        if layer >= self.manifest.n_layers {
            return Err(Error::LayerData {
                layer,
                reason: "value matrix for a layer outside the manifest".into(),
            });
        }
        if matrix.rows() != self.manifest.d_ffn {
            return Err(Error::Dimension(format!(
                "{}: {} rows, manifest d_ffn is {}",
                weights_file_name(layer),
                matrix.rows(),
                self.manifest.d_ffn
            )));
        }
        self.write_matrix_file(&weights_file_name(layer), matrix)
    }

    pub fn write_unembedding(&mut self, matrix: &Matrix) -> Result<()> {
        if matrix.rows() != self.manifest.vocab_size {
            return Err(Error::Dimension(format!(
                "{UNEMBED_FILE}: {} rows, manifest vocab_size is {}",
                matrix.rows(),
                self.manifest.vocab_size
            )));
        }
        self.write_matrix_file(UNEMBED_FILE, matrix)
    }

    fn write_matrix_file(&self, name: &str, matrix: &Matrix) -> Result<()> {
        let path = self.tmp_path(name);
        let file = File::create(&path).map_err(|e| Error::io(&path, e))?;
        let mut w = BufWriter::with_capacity(WRITE_BUFFER, file);
        write_matrix_to(&mut w, matrix)
            .and_then(|_| w.flush())
            .map_err(|e| Error::io(&path, e))
    }

    /// Writes the manifest and moves the finished store into place.
    pub fn finish(self) -> Result<PathBuf> {
        if self.token_count.is_none() {
            return Err(Error::TokenStream("no token stream written".into()));
        }
        if let Some(layer) = self.layers_done.iter().position(|done| !done) {
            return Err(Error::LayerData {
                layer,
                reason: "no activation events written for this layer".into(),
            });
        }
        let path = self.tmp_path(MANIFEST_FILE);
        let mut json =
            serde_json::to_vec_pretty(&self.manifest).map_err(|e| Error::InvalidManifest(e.to_string()))?;
        json.push(b'\n');
        std::fs::write(&path, json).map_err(|e| Error::io(&path, e))?;

        if self.dest.exists() {
            return Err(Error::io(
                &self.dest,
                std::io::Error::new(std::io::ErrorKind::AlreadyExists, "destination exists"),
            ));
        }
        let tmp = self.tmp.keep();
        if let Err(e) = std::fs::rename(&tmp, &self.dest) {
            let _ = std::fs::remove_dir_all(&tmp);
            return Err(Error::io(&self.dest, e));
        }
        Ok(self.dest)
    }
}

/// Writer for one `act_<layer>.bin`; positions are pushed in token-stream order.
pub struct LayerWriter<'a> {
    layer: usize,
    path: PathBuf,
    w: BufWriter<File>,
    expected: u64,
    written: u64,
    d_ffn: usize,
    has_values: bool,
    done: &'a mut bool,
}

impl LayerWriter<'_> {
    fn check(&self, neurons: &[u32]) -> Result<()> {
        if self.written >= self.expected {
            return Err(Error::LayerData {
                layer: self.layer,
                reason: format!("more than {} positions written", self.expected),
            });
        }
        if let Some(&last) = neurons.last() {
            if last as usize >= self.d_ffn {
                return Err(Error::LayerData {
                    layer: self.layer,
                    reason: format!(
                        "neuron id {last} at position {} is not below d_ffn {}",
                        self.written, self.d_ffn
                    ),
                });
            }
        }
        if neurons.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::LayerData {
                layer: self.layer,
                reason: format!(
                    "neuron list at position {} is not strictly ascending",
                    self.written
                ),
            });
        }
        Ok(())
    }

    pub fn push(&mut self, neurons: &[u32]) -> Result<()> {
        if self.has_values {
            return Err(Error::LayerData {
                layer: self.layer,
                reason: "store has values; use push_with_values".into(),
            });
        }
        self.check(neurons)?;
        let path = &self.path;
        write_u32(&mut self.w, neurons.len() as u32)
            .and_then(|_| write_u32_slice(&mut self.w, neurons))
            .map_err(|e| Error::io(path, e))?;
        self.written += 1;
        Ok(())
    }

    pub fn push_with_values(&mut self, neurons: &[u32], values: &[f32]) -> Result<()> {
        if !self.has_values {
            return Err(Error::LayerData {
                layer: self.layer,
                reason: "store has no values; use push".into(),
            });
        }
        if neurons.len() != values.len() {
            return Err(Error::LayerData {
                layer: self.layer,
                reason: format!(
                    "position {}: {} neurons but {} values",
                    self.written,
                    neurons.len(),
                    values.len()
                ),
            });
        }
        self.check(neurons)?;
        let path = &self.path;
        write_u32(&mut self.w, neurons.len() as u32)
            .and_then(|_| write_u32_slice(&mut self.w, neurons))
            .and_then(|_| write_f32_slice(&mut self.w, values))
            .map_err(|e| Error::io(path, e))?;
        self.written += 1;
        Ok(())
    }

    pub fn push_block(&mut self, block: &EventBlock) -> Result<()> {
        for p in 0..block.len() {
            match block.values_at(p) {
                Some(values) if self.has_values => self.push_with_values(block.position(p), values)?,
                None if !self.has_values => self.push(block.position(p))?,
                _ => {
                    return Err(Error::LayerData {
                        layer: self.layer,
                        reason: "block has_values disagrees with manifest".into(),
                    })
                }
            }
        }
        Ok(())
    }

    pub fn finish(mut self) -> Result<()> {
        if self.written != self.expected {
            return Err(Error::LayerData {
                layer: self.layer,
                reason: format!(
                    "{} positions written, token stream has {}",
                    self.written, self.expected
                ),
            });
        }
        self.w.flush().map_err(|e| Error::io(&self.path, e))?;
        *self.done = true;
        Ok(())
    }
}

fn validate_stream(manifest: &StoreManifest, stream: &TokenStream) -> Result<()> {
    let n_domains = manifest.domain_names.len();
    for (i, doc) in stream.documents.iter().enumerate() {
        let fail = |msg: String| {
            Err(Error::TokenStream(format!(
                "document #{i} (id {}): {msg}",
                doc.doc_id
            )))
        };
        if doc.tokens.is_empty() {
            return fail("empty document".into());
        }
        if doc.tokens.len() > manifest.context_len {
            return fail(format!(
                "{} tokens exceeds context_len {}",
                doc.tokens.len(),
                manifest.context_len
            ));
        }
        if doc.tokens[0] != manifest.bos_token_id {
            return fail(format!(
                "first token {} is not bos_token_id {}",
                doc.tokens[0], manifest.bos_token_id
            ));
        }
        if doc.domain_id as usize >= n_domains {
            return fail(format!(
                "domain_id {} but only {n_domains} domains",
                doc.domain_id
            ));
        }
        if let Some(t) = doc.tokens.iter().find(|&&t| t as usize >= manifest.vocab_size) {
            return fail(format!(
                "token {t} is not below vocab_size {}",
                manifest.vocab_size
            ));
        }
    }
    Ok(())
}

/// Writes a complete store from in-memory data. `blocks` must hold exactly one
/// block per manifest layer, each with one entry per token.
pub fn write_store(
    dest: impl AsRef<Path>,
    manifest: &StoreManifest,
    stream: &TokenStream,
    blocks: &[EventBlock],
) -> Result<PathBuf> {
    let mut by_layer: Vec<Option<&EventBlock>> = vec![None; manifest.n_layers];
    for block in blocks {
        let slot = by_layer.get_mut(block.layer()).ok_or_else(|| Error::LayerData {
            layer: block.layer(),
            reason: format!("manifest has only {} layers", manifest.n_layers),
        })?;
        if slot.replace(block).is_some() {
            return Err(Error::LayerData {
                layer: block.layer(),
                reason: "more than one block for this layer".into(),
            });
        }
    }
    let total = stream.total_tokens();
    for (layer, block) in by_layer.iter().enumerate() {
        match block {
            None => {
                return Err(Error::LayerData {
                    layer,
                    reason: "no event block for this layer".into(),
                })
            }
            Some(b) if b.len() != total => {
                return Err(Error::LayerData {
                    layer,
                    reason: format!("block has {} positions, token stream has {total}", b.len()),
                })
            }
            Some(_) => {}
        }
    }

    let mut writer = StoreWriter::create(dest, manifest.clone())?;
    writer.write_tokens(stream)?;
    for block in by_layer.into_iter().flatten() {
        let mut lw = writer.layer(block.layer())?;
        lw.push_block(block)?;
        lw.finish()?;
    }
    writer.finish()
}
