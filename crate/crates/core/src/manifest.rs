//! `manifest.json`: what produced an output directory and the hash of every
//! file in it.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::shapes::{COLORS_TSV, GRAMMAR_TOML};

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Error)]
pub enum ManifestError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: invalid manifest: {source}")]
    Json { path: PathBuf, source: serde_json::Error },
    #[error("{path}: hash mismatch (expected {expected}, found {found}); the file changed after it was written")]
    Mismatch { path: PathBuf, expected: String, found: String },
    #[error("{path}: listed in the manifest but missing")]
    Missing { path: PathBuf },
    #[error("{path}: asset {name} hash differs from this build ({expected} vs {found})")]
    Asset { path: PathBuf, name: String, expected: String, found: String },
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Hashes of the assets compiled into this build.
pub fn builtin_asset_hashes() -> BTreeMap<String, String> {
    BTreeMap::from([
        ("colors.tsv".to_string(), sha256_hex(COLORS_TSV.as_bytes())),
        ("grammar.toml".to_string(), sha256_hex(GRAMMAR_TOML.as_bytes())),
    ])
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub command: String,
    pub tool_version: String,
    pub seed: u64,
    pub config: serde_json::Value,
    pub config_hash: String,
    pub asset_hashes: BTreeMap<String, String>,
    /// Relative path to sha256 of the file contents.
    pub files: BTreeMap<String, String>,
}

impl Manifest {
    pub fn new<C: Serialize>(command: &str, seed: u64, config: &C) -> Self {
        let config = serde_json::to_value(config).expect("config serializes");
        let config_hash = sha256_hex(config.to_string().as_bytes());
        Self {
            command: command.to_string(),
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            seed,
            config,
            config_hash,
            asset_hashes: builtin_asset_hashes(),
            files: BTreeMap::new(),
        }
    }

    /// Records the hash of `dir/rel`, which must already exist.
    pub fn add_file(&mut self, dir: &Path, rel: &str) -> Result<(), ManifestError> {
        let path = dir.join(rel);
        let bytes = fs::read(&path).map_err(|source| ManifestError::Io { path: path.clone(), source })?;
        self.files.insert(rel.to_string(), sha256_hex(&bytes));
        Ok(())
    }

    /// Writes `bytes` to `dir/rel` and records its hash.
    pub fn write_file(&mut self, dir: &Path, rel: &str, bytes: &[u8]) -> Result<(), ManifestError> {
        let path = dir.join(rel);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(|source| ManifestError::Io { path: parent.to_path_buf(), source })?;
        }
        fs::write(&path, bytes).map_err(|source| ManifestError::Io { path: path.clone(), source })?;
        self.files.insert(rel.to_string(), sha256_hex(bytes));
        Ok(())
    }

    pub fn save(&self, dir: &Path) -> Result<(), ManifestError> {
        let path = dir.join(MANIFEST_FILE);
        let mut text = serde_json::to_string_pretty(self).expect("manifest serializes");
        text.push('\n');
        fs::create_dir_all(dir).map_err(|source| ManifestError::Io { path: dir.to_path_buf(), source })?;
        fs::write(&path, text).map_err(|source| ManifestError::Io { path, source })
    }

    pub fn load(dir: &Path) -> Result<Self, ManifestError> {
        let path = dir.join(MANIFEST_FILE);
        let text = fs::read_to_string(&path).map_err(|source| ManifestError::Io { path: path.clone(), source })?;
        serde_json::from_str(&text).map_err(|source| ManifestError::Json { path, source })
    }

    /// Checks every listed file and the embedded asset hashes.
    pub fn verify(&self, dir: &Path) -> Result<(), ManifestError> {
        for (name, expected) in &self.asset_hashes {
            if let Some(found) = builtin_asset_hashes().get(name) {
                if found != expected {
                    return Err(ManifestError::Asset {
                        path: dir.join(MANIFEST_FILE),
                        name: name.clone(),
                        expected: expected.clone(),
                        found: found.clone(),
                    });
                }
            }
        }
        for (rel, expected) in &self.files {
            let path = dir.join(rel);
            let bytes = match fs::read(&path) {
                Ok(b) => b,
                Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Err(ManifestError::Missing { path }),
                Err(source) => return Err(ManifestError::Io { path, source }),
            };
            let found = sha256_hex(&bytes);
            if &found != expected {
                return Err(ManifestError::Mismatch { path, expected: expected.clone(), found });
            }
        }
        Ok(())
    }

    /// Loads and verifies in one step.
    pub fn open(dir: &Path) -> Result<Self, ManifestError> {
        let m = Self::load(dir)?;
        m.verify(dir)?;
        Ok(m)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn known_digest() {
        assert_eq!(sha256_hex(b"abc"), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
    }

    #[test]
    fn tampering_is_detected() {
        let dir = tempfile::tempdir().unwrap();
        let mut m = Manifest::new("test", 0, &serde_json::json!({"k": 1}));
        m.write_file(dir.path(), "a.txt", b"hello").unwrap();
        m.save(dir.path()).unwrap();
        Manifest::open(dir.path()).unwrap();
        fs::write(dir.path().join("a.txt"), b"hellO").unwrap();
        assert!(matches!(Manifest::open(dir.path()), Err(ManifestError::Mismatch { .. })));
        fs::remove_file(dir.path().join("a.txt")).unwrap();
        assert!(matches!(Manifest::open(dir.path()), Err(ManifestError::Missing { .. })));
    }
}
