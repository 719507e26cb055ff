//! Binary embedding files, label CSVs, number formatting and hashing.
//!
//! Embedding layout: the 7 magic bytes `LGEMB1\n`, a little-endian `u32`
//! row count, a little-endian `u32` dimension, then `count·dim` little-endian
//! IEEE-754 binary32 values in row-major order. Nothing follows the payload.

use std::fs;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::numeric::Matrix;
use crate::scalar::Scalar;

pub const EMBEDDING_MAGIC: &[u8; 7] = b"LGEMB1\n";
const HEADER_LEN: usize = 7 + 4 + 4;

/// A decoded embedding file: `count` vectors of dimension `dim`.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingFile<T> {
    pub vectors: Matrix<T>,
}

impl<T: Scalar> EmbeddingFile<T> {
    pub fn count(&self) -> usize {
        self.vectors.rows()
    }

    pub fn dim(&self) -> usize {
        self.vectors.cols()
    }
}

/// Serializes a matrix; values are narrowed to binary32.
pub fn encode_embeddings<T: Scalar>(m: &Matrix<T>) -> Result<Vec<u8>> {
    if m.rows() == 0 || m.cols() == 0 {
        return Err(Error::Malformed(format!(
            "embedding files need count >= 1 and dim >= 1, got {}x{}",
            m.rows(),
            m.cols()
        )));
    }
    let count = u32::try_from(m.rows()).map_err(|_| Error::Malformed("count exceeds u32".into()))?;
    let dim = u32::try_from(m.cols()).map_err(|_| Error::Malformed("dim exceeds u32".into()))?;
    let mut out = Vec::with_capacity(HEADER_LEN + 4 * m.len());
    out.extend_from_slice(EMBEDDING_MAGIC);
    out.extend_from_slice(&count.to_le_bytes());
    out.extend_from_slice(&dim.to_le_bytes());
    for &v in m.as_slice() {
        let x = v.to_f32_lossy();
        if !x.is_finite() {
            return Err(Error::NonFinite("encode_embeddings"));
        }
        out.extend_from_slice(&x.to_le_bytes());
    }
    Ok(out)
}

/// Parses an embedding buffer; `origin` only labels errors.
pub fn decode_embeddings<T: Scalar>(bytes: &[u8], origin: &Path) -> Result<EmbeddingFile<T>> {
    if bytes.len() < EMBEDDING_MAGIC.len() || &bytes[..7] != EMBEDDING_MAGIC {
        return Err(Error::BadMagic(origin.to_path_buf()));
    }
    if bytes.len() < HEADER_LEN {
        return Err(Error::TruncatedFile {
            path: origin.to_path_buf(),
            expected: HEADER_LEN as u64,
            found: bytes.len() as u64,
        });
    }
    let count = u32::from_le_bytes(bytes[7..11].try_into().expect("4 bytes")) as usize;
    let dim = u32::from_le_bytes(bytes[11..15].try_into().expect("4 bytes")) as usize;
    if count == 0 || dim == 0 {
        return Err(Error::Malformed(format!(
            "{}: header declares {count}x{dim}",
            origin.display()
        )));
    }
    let expected = HEADER_LEN as u64 + 4 * count as u64 * dim as u64;
    let found = bytes.len() as u64;
    if found < expected {
        return Err(Error::TruncatedFile {
            path: origin.to_path_buf(),
            expected,
            found,
        });
    }
    if found > expected {
        return Err(Error::DimMismatch(format!(
            "{}: {} trailing bytes after {count}x{dim} payload",
            origin.display(),
            found - expected
        )));
    }
    let data = bytes[HEADER_LEN..]
        .chunks_exact(4)
        .map(|c| T::of(f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64))
        .collect();
    Ok(EmbeddingFile {
        vectors: Matrix::new(count, dim, data)?,
    })
}

pub fn write_embeddings<T: Scalar>(path: &Path, m: &Matrix<T>) -> Result<()> {
    let bytes = encode_embeddings(m)?;
    write_bytes(path, &bytes)
}

pub fn load_embeddings<T: Scalar>(path: &Path) -> Result<EmbeddingFile<T>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_embeddings(&bytes, path)
}

pub(crate) fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub(crate) fn write_json<S: serde::Serialize>(path: &Path, value: &S) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::json(path, e))?;
    text.push('\n');
    write_bytes(path, text.as_bytes())
}

pub(crate) fn read_json<D: serde::de::DeserializeOwned>(path: &Path) -> Result<D> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::json(path, e))
}

/// Writes `index,<column>` rows with a header.
pub fn write_index_csv(path: &Path, column: &str, rows: &[(usize, usize)]) -> Result<()> {
    let mut text = format!("index,{column}\n");
    for (i, v) in rows {
        text.push_str(&format!("{i},{v}\n"));
    }
    write_bytes(path, text.as_bytes())
}

/// Reads a two-column integer CSV with a header row.
pub fn read_index_csv(path: &Path) -> Result<Vec<(usize, usize)>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::Malformed(format!("{}: empty CSV", path.display())))?;
    if !header.trim_start().starts_with("index,") {
        return Err(Error::Malformed(format!(
            "{}: expected header `index,...`, got `{header}`",
            path.display()
        )));
    }
    let mut rows = Vec::new();
    for (n, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let mut parts = line.split(',');
        let parse = |s: Option<&str>| -> Result<usize> {
            s.map(str::trim)
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| Error::Malformed(format!("{}:{}: `{line}`", path.display(), n + 2)))
        };
        let idx = parse(parts.next())?;
        let val = parse(parts.next())?;
        if parts.next().is_some() {
            return Err(Error::Malformed(format!(
                "{}:{}: too many columns",
                path.display(),
                n + 2
            )));
        }
        rows.push((idx, val));
    }
    Ok(rows)
}

/// Formats with 9 significant digits, switching to exponent form outside [1e-4, 1e9).
pub fn fmt_sig9(x: f64) -> String {
    if x == 0.0 {
        return "0".to_string();
    }
    let sci = format!("{x:.8e}");
    let exp: i32 = sci
        .rsplit_once('e')
        .and_then(|(_, e)| e.parse().ok())
        .unwrap_or(0);
    if (-4..9).contains(&exp) {
        let decimals = (8 - exp) as usize;
        format!("{x:.decimals$}")
    } else {
        sci
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(sha256_hex(&bytes))
}
