// SPDX-License-Identifier: MIT OR Apache-2.0

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

use super::format::FORMAT_VERSION;

/// Store-level metadata, serialized verbatim as `manifest.json`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StoreManifest {
    pub model_id: String,
    pub n_layers: usize,
    pub d_ffn: usize,
    pub vocab_size: usize,
    /// Context length `T`; full-length documents have exactly this many tokens.
    pub context_len: usize,
    pub bos_token_id: u32,
    pub domain_names: Vec<String>,
    pub has_values: bool,
    pub format_version: u32,
}

impl StoreManifest {
    pub fn new(
        model_id: impl Into<String>,
        n_layers: usize,
        d_ffn: usize,
        vocab_size: usize,
        context_len: usize,
        bos_token_id: u32,
    ) -> Self {
        Self {
            model_id: model_id.into(),
            n_layers,
            d_ffn,
            vocab_size,
            context_len,
            bos_token_id,
            domain_names: vec!["default".to_owned()],
            has_values: false,
            format_version: FORMAT_VERSION,
        }
    }

    pub fn with_domains<I, S>(mut self, names: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        self.domain_names = names.into_iter().map(Into::into).collect();
        self
    }

    pub fn with_values(mut self, has_values: bool) -> Self {
        self.has_values = has_values;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::InvalidManifest(msg));
        if self.n_layers == 0 {
            return fail("n_layers must be at least 1".into());
        }
        if self.d_ffn == 0 {
            return fail("d_ffn must be at least 1".into());
        }
        if self.d_ffn > u32::MAX as usize {
            return fail(format!("d_ffn {} does not fit a u32 neuron id", self.d_ffn));
        }
        if self.context_len < 2 {
            return fail(format!(
                "context_len must be at least 2, got {}",
                self.context_len
            ));
        }
        if self.vocab_size == 0 || self.bos_token_id as usize >= self.vocab_size {
            return fail(format!(
                "bos_token_id {} must be below vocab_size {}",
                self.bos_token_id, self.vocab_size
            ));
        }
        if self.domain_names.is_empty() {
            return fail("domain_names must name at least one domain".into());
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn json_keys_are_exact() {
        let m = StoreManifest::new("opt-125m", 12, 3072, 50272, 2048, 2);
        let value = serde_json::to_value(&m).unwrap();
        let mut keys: Vec<_> = value.as_object().unwrap().keys().cloned().collect();
        keys.sort();
        assert_eq!(
            keys,
            [
                "bos_token_id",
                "context_len",
                "d_ffn",
                "domain_names",
                "format_version",
                "has_values",
                "model_id",
                "n_layers",
                "vocab_size"
            ]
        );
    }

    #[test]
    fn rejects_bad_dimensions() {
        let ok = StoreManifest::new("m", 1, 1, 10, 2, 9);
        assert!(ok.validate().is_ok());
        let mut m = ok.clone();
        m.n_layers = 0;
        assert!(m.validate().is_err());
        let mut m = ok.clone();
        m.context_len = 1;
        assert!(m.validate().is_err());
        let mut m = ok.clone();
        m.bos_token_id = 10;
        assert!(m.validate().is_err());
        let mut m = ok;
        m.d_ffn = 0;
        assert!(m.validate().is_err());
    }

    #[test]
    fn unknown_keys_rejected() {
        let text = r#"{"model_id":"m","n_layers":1,"d_ffn":1,"vocab_size":4,"context_len":2,
            "bos_token_id":0,"domain_names":["a"],"has_values":false,"format_version":1,"extra":1}"#;
        assert!(serde_json::from_str::<StoreManifest>(text).is_err());
    }
}
