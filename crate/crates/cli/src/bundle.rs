// SPDX-License-Identifier: MIT OR Apache-2.0

//! Output directory bookkeeping: every artifact is hashed as it is written
//! and listed in `report.json`.

use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::config::Format;
use crate::error::{CliError, CliResult};

pub const REPORT_FILE: &str = "report.json";

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Artifact {
    pub path: String,
    pub analysis: String,
    pub format: Format,
    pub bytes: u64,
    pub sha256: String,
}

#[derive(Debug)]
pub struct Bundle {
    root: PathBuf,
    formats: Vec<Format>,
    artifacts: Vec<Artifact>,
    warnings: Vec<String>,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Output {
        path: path.to_path_buf(),
        source,
    }
}

impl Bundle {
    pub fn create(root: &Path, formats: &[Format]) -> CliResult<Self> {
        std::fs::create_dir_all(root).map_err(io_err(root))?;
        Ok(Self {
            root: root.to_path_buf(),
            formats: formats.to_vec(),
            artifacts: Vec::new(),
            warnings: Vec::new(),
        })
    }

    pub fn wants(&self, format: Format) -> bool {
        self.formats.contains(&format)
    }

    /// Writes `bytes` to `rel` (forward slashes) unless `format` is disabled.
    pub fn write(&mut self, analysis: &str, rel: &str, format: Format, bytes: &[u8]) -> CliResult<()> {
        if !self.wants(format) {
            return Ok(());
        }
        let path = self.root.join(rel);
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir).map_err(io_err(dir))?;
        }
        std::fs::write(&path, bytes).map_err(io_err(&path))?;
        self.artifacts.push(Artifact {
            path: rel.to_string(),
            analysis: analysis.to_string(),
            format,
            bytes: bytes.len() as u64,
            sha256: hex::encode(Sha256::digest(bytes)),
        });
        Ok(())
    }

    pub fn write_json<T: Serialize + ?Sized>(
        &mut self,
        analysis: &str,
        rel: &str,
        value: &T,
    ) -> CliResult<()> {
        if !self.wants(Format::Json) {
            return Ok(());
        }
        let mut text =
            serde_json::to_vec_pretty(value).map_err(|e| CliError::Other(format!("{rel}: {e}")))?;
        text.push(b'\n');
        self.write(analysis, rel, Format::Json, &text)
    }

    pub fn write_csv(
        &mut self,
        analysis: &str,
        rel: &str,
        header: &[&str],
        rows: &[Vec<String>],
    ) -> CliResult<()> {
        if !self.wants(Format::Csv) {
            return Ok(());
        }
        let mut w = csv::Writer::from_writer(Vec::new());
        let err = |e: csv::Error| CliError::Other(format!("{rel}: {e}"));
        w.write_record(header).map_err(err)?;
        for row in rows {
            w.write_record(row).map_err(err)?;
        }
        let bytes = w
            .into_inner()
            .map_err(|e| CliError::Other(format!("{rel}: {e}")))?;
        self.write(analysis, rel, Format::Csv, &bytes)
    }

    pub fn write_svg(&mut self, analysis: &str, rel: &str, svg: &str) -> CliResult<()> {
        self.write(analysis, rel, Format::Svg, svg.as_bytes())
    }

    pub fn warn(&mut self, msg: impl Into<String>) {
        let msg = msg.into();
        log::warn!("{msg}");
        self.warnings.push(msg);
    }

    #[cfg(test)]
    pub fn artifacts(&self) -> &[Artifact] {
        &self.artifacts
    }

    /// Writes the index. `body` supplies everything except the artifact
    /// list and warnings, which are appended here.
    pub fn finish(mut self, mut body: serde_json::Map<String, serde_json::Value>) -> CliResult<PathBuf> {
        self.artifacts.sort_by(|a, b| a.path.cmp(&b.path));
        body.insert(
            "warnings".into(),
            serde_json::to_value(&self.warnings).expect("strings"),
        );
        body.insert(
            "artifacts".into(),
            serde_json::to_value(&self.artifacts).expect("plain struct"),
        );
        let path = self.root.join(REPORT_FILE);
        let mut text = serde_json::to_vec_pretty(&body).expect("json value");
        text.push(b'\n');
        std::fs::write(&path, text).map_err(io_err(&path))?;
        Ok(path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hashes_and_skips_disabled_formats() {
        let dir = tempfile::tempdir().unwrap();
        let mut b = Bundle::create(dir.path(), &[Format::Json, Format::Csv]).unwrap();
        b.write_csv("dead", "dead/x.csv", &["a", "b"], &[vec!["1".into(), "2".into()]])
            .unwrap();
        b.write_svg("dead", "dead/x.svg", "<svg/>").unwrap();
        assert_eq!(b.artifacts().len(), 1);
        let a = &b.artifacts()[0];
        assert_eq!(a.bytes, 8);
        // sha256("a,b\n1,2\n")
        let want = hex::encode(Sha256::digest(b"a,b\n1,2\n"));
        assert_eq!(a.sha256, want);
        assert!(!dir.path().join("dead/x.svg").exists());
        let report = b.finish(serde_json::Map::new()).unwrap();
        let v: serde_json::Value = serde_json::from_slice(&std::fs::read(report).unwrap()).unwrap();
        assert_eq!(v["artifacts"][0]["path"], "dead/x.csv");
    }
}
