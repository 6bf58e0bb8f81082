// SPDX-License-Identifier: MIT OR Apache-2.0

use std::io::{BufWriter, Write};
use std::path::Path;

use crate::{Error, Result};

use super::format::{write_f32_slice, write_u32, ByteCursor, MATRIX_HEADER_LEN, MATRIX_MAGIC};

/// Dense row-major f32 matrix, as stored in `weights_<layer>.bin` and
/// `unembed.bin`.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f32>,
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f32>) -> Result<Self> {
        if rows.checked_mul(cols) != Some(data.len()) {
            return Err(Error::Dimension(format!(
                "{rows}x{cols} matrix needs {} values, got {}",
                rows.saturating_mul(cols),
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_rows(rows: &[Vec<f32>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::Dimension("ragged rows".into()));
        }
        Self::new(rows.len(), cols, rows.concat())
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn row(&self, r: usize) -> &[f32] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f32] {
        let c = self.cols;
        &mut self.data[r * c..(r + 1) * c]
    }
}

/// Writes a matrix atomically (temporary file in the same directory, then rename).
pub fn write_matrix(path: impl AsRef<Path>, matrix: &Matrix) -> Result<()> {
    let path = path.as_ref();
    let dir = path
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .unwrap_or(Path::new("."));
    let tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| Error::io(dir, e))?;
    {
        let mut w = BufWriter::new(tmp.as_file());
        write_matrix_to(&mut w, matrix).map_err(|e| Error::io(path, e))?;
        w.flush().map_err(|e| Error::io(path, e))?;
    }
    tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
    Ok(())
}

pub(crate) fn write_matrix_to<W: Write>(w: &mut W, m: &Matrix) -> std::io::Result<()> {
    let dims = |v: usize| {
        u32::try_from(v).map_err(|_| std::io::Error::other(format!("matrix dimension {v} exceeds u32")))
    };
    w.write_all(&MATRIX_MAGIC)?;
    write_u32(w, dims(m.rows)?)?;
    write_u32(w, dims(m.cols)?)?;
    write_f32_slice(w, &m.data)
}

pub fn read_matrix(path: impl AsRef<Path>) -> Result<Matrix> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_matrix(&bytes, path)
}

pub(crate) fn parse_matrix(bytes: &[u8], path: &Path) -> Result<Matrix> {
    let mut c = ByteCursor::new(bytes, path);
    let magic = c.take(4, "magic")?;
    if magic != MATRIX_MAGIC {
        return Err(Error::UnsupportedFormat {
            path: path.to_path_buf(),
            reason: "bad matrix magic".into(),
        });
    }
    let rows = c.u32("rows")? as usize;
    let cols = c.u32("cols")? as usize;
    let body = rows
        .checked_mul(cols)
        .and_then(|n| n.checked_mul(4))
        .ok_or_else(|| c.corrupt(4, "matrix dimensions overflow"))?;
    let raw = c.take(body, "matrix body")?;
    if c.remaining() != 0 {
        return Err(c.corrupt(MATRIX_HEADER_LEN + body, "trailing bytes after matrix body"));
    }
    let data = raw
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
        .collect();
    Ok(Matrix { rows, cols, data })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_matrix_body_has_exact_size() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("w.bin");
        write_matrix(&path, &Matrix::zeros(3, 5)).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        assert_eq!(bytes.len(), MATRIX_HEADER_LEN + 3 * 5 * 4);
        assert!(bytes[MATRIX_HEADER_LEN..].iter().all(|&b| b == 0));
        let back = read_matrix(&path).unwrap();
        assert_eq!((back.rows(), back.cols()), (3, 5));
    }

    #[test]
    fn truncated_matrix_is_corruption() {
        let m = Matrix::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
        let mut bytes = Vec::new();
        write_matrix_to(&mut bytes, &m).unwrap();
        assert_eq!(parse_matrix(&bytes, Path::new("m")).unwrap(), m);
        for cut in 0..bytes.len() {
            let err = parse_matrix(&bytes[..cut], Path::new("m")).unwrap_err();
            assert!(matches!(err, Error::Corruption { .. }), "cut {cut}: {err}");
        }
    }
}
