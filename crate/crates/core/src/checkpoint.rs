//! Parameter checkpoints: one embedding file per matrix plus `model.json`.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::{load_embeddings, read_json, sha256_hex, write_embeddings, write_json};
use crate::numeric::{Matrix, Parameter};
use crate::scalar::Scalar;

pub const DESCRIPTOR_FILE: &str = "model.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamEntry {
    pub name: String,
    pub file: String,
    pub rows: usize,
    pub cols: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Descriptor {
    pub kind: String,
    pub parameters: Vec<ParamEntry>,
    /// Free-form settings needed to rebuild the model (dims, config, seed, hashes).
    pub meta: serde_json::Value,
}

/// Writes every parameter and the descriptor into `dir`.
pub fn save<T: Scalar>(dir: &Path, kind: &str, params: &[&Parameter<T>], meta: serde_json::Value) -> Result<()> {
    let mut entries = Vec::with_capacity(params.len());
    for p in params {
        let file = format!("{}.emb", p.name);
        write_embeddings(&dir.join(&file), &p.value)?;
        entries.push(ParamEntry {
            name: p.name.clone(),
            file,
            rows: p.value.rows(),
            cols: p.value.cols(),
        });
    }
    let d = Descriptor {
        kind: kind.to_string(),
        parameters: entries,
        meta,
    };
    write_json(&dir.join(DESCRIPTOR_FILE), &d)
}

/// Reads a checkpoint written by [`save`], checking its kind and shapes.
pub fn load<T: Scalar>(dir: &Path, kind: &str) -> Result<(Vec<Parameter<T>>, Descriptor)> {
    let d: Descriptor = read_json(&dir.join(DESCRIPTOR_FILE))?;
    if d.kind != kind {
        return Err(Error::Malformed(format!(
            "{}: checkpoint kind `{}`, expected `{kind}`",
            dir.display(),
            d.kind
        )));
    }
    let mut params = Vec::with_capacity(d.parameters.len());
    for e in &d.parameters {
        let m: Matrix<T> = load_embeddings(&dir.join(&e.file))?.vectors;
        if m.shape() != (e.rows, e.cols) {
            return Err(Error::DimMismatch(format!(
                "{}: {}x{} on disk, descriptor says {}x{}",
                e.file,
                m.rows(),
                m.cols(),
                e.rows,
                e.cols
            )));
        }
        params.push(Parameter::new(e.name.clone(), m));
    }
    Ok((params, d))
}

/// Takes the named parameter out of a loaded list.
pub fn take<T: Scalar>(params: &mut Vec<Parameter<T>>, name: &str) -> Result<Parameter<T>> {
    let pos = params
        .iter()
        .position(|p| p.name == name)
        .ok_or_else(|| Error::Malformed(format!("checkpoint lacks parameter `{name}`")))?;
    Ok(params.remove(pos))
}

/// SHA-256 over names, shapes and the binary32 bytes of every parameter.
pub fn parameter_digest<T: Scalar>(params: &[&Parameter<T>]) -> String {
    let mut bytes = Vec::new();
    for p in params {
        bytes.extend_from_slice(p.name.as_bytes());
        bytes.extend_from_slice(&(p.value.rows() as u64).to_le_bytes());
        bytes.extend_from_slice(&(p.value.cols() as u64).to_le_bytes());
        for &v in p.value.as_slice() {
            bytes.extend_from_slice(&v.to_f64_lossy().to_le_bytes());
        }
    }
    sha256_hex(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_and_kind_check() {
        let dir = tempfile::tempdir().unwrap();
        let a = Parameter::new("enc.w1", Matrix::from_rows(&[vec![0.5f64, -1.25]]).unwrap());
        let b = Parameter::new("enc.b1", Matrix::from_rows(&[vec![2.0f64]]).unwrap());
        save(dir.path(), "toy", &[&a, &b], serde_json::json!({"seed": 3})).unwrap();
        let (mut back, d) = load::<f64>(dir.path(), "toy").unwrap();
        assert_eq!(d.meta["seed"], 3);
        assert_eq!(take(&mut back, "enc.b1").unwrap().value, b.value);
        assert_eq!(back[0].value, a.value);
        assert!(matches!(load::<f64>(dir.path(), "other"), Err(Error::Malformed(_))));
        assert_ne!(parameter_digest(&[&a]), parameter_digest(&[&b]));
    }
}
