//! Run manifests: the resolved configuration of a command plus SHA-256 digests of
//! the files it read and wrote. Nothing time- or host-dependent goes in, so a
//! repeated run produces a byte-identical manifest.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::{CliError, Result};

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Clone, Debug, Serialize)]
pub struct FileDigest {
    pub path: String,
    pub bytes: u64,
    pub sha256: String,
}

#[derive(Clone, Debug, Serialize)]
pub struct Manifest {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: String,
    pub config: serde_json::Value,
    pub inputs: Vec<FileDigest>,
    pub outputs: Vec<FileDigest>,
    pub warnings: Vec<String>,
}

pub fn sha256_file(path: &Path) -> Result<(u64, String)> {
    let bytes = fs::read(path).map_err(|e| CliError::io(path, e))?;
    Ok((bytes.len() as u64, hex::encode(Sha256::digest(&bytes))))
}

/// Every regular file under `root` in sorted order, skipping manifests.
fn walk(root: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    let mut entries: Vec<PathBuf> = fs::read_dir(root)
        .map_err(|e| CliError::io(root, e))?
        .map(|e| e.map(|e| e.path()).map_err(|err| CliError::io(root, err)))
        .collect::<Result<_>>()?;
    entries.sort();
    for p in entries {
        if p.is_dir() {
            walk(&p, out)?;
        } else if p.file_name().is_some_and(|n| n != MANIFEST_FILE) {
            out.push(p);
        }
    }
    Ok(())
}

/// Digests of a file, or of every file below a directory. Paths are shown relative
/// to `label_base` when given.
pub fn digest(path: &Path, label_base: Option<&Path>) -> Result<Vec<FileDigest>> {
    let files = if path.is_dir() {
        let mut v = Vec::new();
        walk(path, &mut v)?;
        v
    } else {
        vec![path.to_path_buf()]
    };
    files
        .iter()
        .map(|f| {
            let (bytes, sha256) = sha256_file(f)?;
            let shown = label_base.and_then(|b| f.strip_prefix(b).ok()).unwrap_or(f);
            Ok(FileDigest { path: shown.to_string_lossy().replace('\\', "/"), bytes, sha256 })
        })
        .collect()
}

impl Manifest {
    pub fn new(command: &str, config: serde_json::Value) -> Self {
        Manifest {
            tool: "ppk",
            version: env!("CARGO_PKG_VERSION"),
            command: command.to_string(),
            config,
            inputs: Vec::new(),
            outputs: Vec::new(),
            warnings: Vec::new(),
        }
    }

    pub fn input(&mut self, path: &Path) -> Result<()> {
        for d in digest(path, None)? {
            if !self.inputs.iter().any(|i| i.path == d.path) {
                self.inputs.push(d);
            }
        }
        Ok(())
    }

    /// Records an output file, or every file below an output directory with paths
    /// relative to it.
    pub fn output(&mut self, path: &Path) -> Result<()> {
        let base = if path.is_dir() { Some(path) } else { path.parent() };
        self.outputs.extend(digest(path, base)?);
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }

    pub fn to_line(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json()?).map_err(|e| CliError::io(path, e))
    }
}
