use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use laguna_core::data::Manifest;
use laguna_core::io::sha256_file;
use serde::Serialize;
use serde_json::Value;

pub const PROVENANCE_FILE: &str = "provenance.json";

/// Record written beside every run's outputs. Deliberately carries no
/// timestamps or host details so that identical runs produce identical bytes.
#[derive(Debug, Serialize)]
pub struct Provenance {
    pub tool: &'static str,
    pub version: &'static str,
    pub subcommand: &'static str,
    pub seed: Option<u64>,
    pub config: Value,
    pub config_hash: String,
    /// Input path (as given) to sha256.
    pub inputs: BTreeMap<String, String>,
    /// Output file relative to the run directory to sha256.
    pub outputs: BTreeMap<String, String>,
}

impl Provenance {
    pub fn new(subcommand: &'static str, seed: Option<u64>, config: &impl Serialize) -> Self {
        let config = serde_json::to_value(config).expect("config serializes");
        let config_hash = laguna_core::io::sha256_hex(config.to_string().as_bytes());
        Self {
            tool: env!("CARGO_PKG_NAME"),
            version: env!("CARGO_PKG_VERSION"),
            subcommand,
            seed,
            config,
            config_hash,
            inputs: BTreeMap::new(),
            outputs: BTreeMap::new(),
        }
    }

    pub fn input(&mut self, path: &Path) -> Result<()> {
        if path.is_dir() {
            for f in files_under(path)? {
                self.inputs.insert(f.display().to_string(), sha256_file(&f)?);
            }
        } else {
            self.inputs.insert(path.display().to_string(), sha256_file(path)?);
        }
        Ok(())
    }

    /// The manifest plus every file it references.
    pub fn manifest(&mut self, path: &Path) -> Result<()> {
        self.input(path)?;
        for f in Manifest::read(path)?.referenced_files(path) {
            self.input(&f)?;
        }
        Ok(())
    }

    /// Hashes everything already in `dir` and writes the record there.
    pub fn finish(mut self, dir: &Path) -> Result<()> {
        for f in files_under(dir)? {
            let rel = f.strip_prefix(dir).expect("under dir");
            if rel != Path::new(PROVENANCE_FILE) {
                self.outputs.insert(rel.display().to_string(), sha256_file(&f)?);
            }
        }
        let path = dir.join(PROVENANCE_FILE);
        let body = serde_json::to_string_pretty(&self)?;
        std::fs::write(&path, body + "\n").with_context(|| format!("writing {}", path.display()))
    }
}

/// Regular files below `dir`, sorted.
pub fn files_under(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).with_context(|| format!("listing {}", d.display()))? {
            let p = e?.path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push(p);
            }
        }
    }
    out.sort();
    Ok(out)
}
