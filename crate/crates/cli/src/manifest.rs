//! Output bookkeeping and the per-run manifest.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct FileHash {
    pub path: String,
    pub sha256: String,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: Vec<String>,
    /// Fully resolved configuration, defaults included.
    pub config: serde_json::Value,
    pub seed: u64,
    pub versions: BTreeMap<String, String>,
    pub inputs: Vec<FileHash>,
    pub outputs: Vec<FileHash>,
    pub wall_clock_seconds: f64,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

fn hash_file(path: &Path) -> Result<FileHash> {
    let bytes = std::fs::read(path).with_context(|| format!("hashing {}", path.display()))?;
    Ok(FileHash {
        path: path.display().to_string(),
        sha256: sha256_hex(&bytes),
    })
}

/// Write via a temporary sibling and rename, so readers never see a
/// partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension(format!(
        "{}.tmp",
        path.extension().and_then(|e| e.to_str()).unwrap_or("")
    ));
    std::fs::write(&tmp, bytes).with_context(|| format!("writing {}", tmp.display()))?;
    std::fs::rename(&tmp, path).with_context(|| format!("renaming to {}", path.display()))?;
    Ok(())
}

/// Files written by one command, collected into its manifest.
pub struct Outputs {
    pub dir: PathBuf,
    written: Vec<PathBuf>,
    inputs: Vec<PathBuf>,
    started: Instant,
}

impl Outputs {
    pub fn new(dir: PathBuf) -> Self {
        Outputs {
            dir,
            written: Vec::new(),
            inputs: Vec::new(),
            started: Instant::now(),
        }
    }

    pub fn input(&mut self, path: &Path) {
        self.inputs.push(path.to_path_buf());
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    pub fn write(&mut self, name: &str, bytes: impl AsRef<[u8]>) -> Result<PathBuf> {
        let path = self.path(name);
        write_atomic(&path, bytes.as_ref())?;
        self.written.push(path.clone());
        Ok(path)
    }

    pub fn image(&mut self, name: &str, img: &dipgp::signal::ImageBuffer) -> Result<PathBuf> {
        let bytes = dipgp::signal::encode_netpbm(img, 65535, dipgp::signal::Encoding::Binary)?;
        self.write(name, bytes)
    }

    /// Hashes every input and output and writes `manifest.json`.
    pub fn finish(self, argv: &[String], config: serde_json::Value, seed: u64) -> Result<PathBuf> {
        let mut versions = BTreeMap::new();
        versions.insert("dipgp".to_string(), env!("CARGO_PKG_VERSION").to_string());
        let manifest = RunManifest {
            command: argv.to_vec(),
            config,
            seed,
            versions,
            inputs: self.inputs.iter().map(|p| hash_file(p)).collect::<Result<_>>()?,
            outputs: self.written.iter().map(|p| hash_file(p)).collect::<Result<_>>()?,
            wall_clock_seconds: self.started.elapsed().as_secs_f64(),
        };
        let path = self.dir.join("manifest.json");
        write_atomic(&path, serde_json::to_string_pretty(&manifest)?.as_bytes())?;
        Ok(path)
    }
}

/// Overlay the keys of `patch` onto `base`, recursing into objects.
pub fn merge_json(base: &mut serde_json::Value, patch: &serde_json::Value) {
    match (base, patch) {
        (serde_json::Value::Object(b), serde_json::Value::Object(p)) => {
            for (k, v) in p {
                match b.get_mut(k) {
                    Some(slot) => merge_json(slot, v),
                    None => {
                        b.insert(k.clone(), v.clone());
                    }
                }
            }
        }
        (b, p) => *b = p.clone(),
    }
}
