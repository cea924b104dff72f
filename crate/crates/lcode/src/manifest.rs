//! Run manifests: what ran, with which resolved config, on which inputs.
//!
//! Every command writes one next to its outputs.  Manifests contain wall
//! timings, so they are the one output file excluded when comparing reruns
//! byte-for-byte; everything else a command writes is reproducible.

use std::collections::BTreeMap;
use std::io::Read;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{Context, Result};
use serde::Serialize;
use sha2::{Digest, Sha256};

#[derive(Serialize)]
struct FileStamp {
    path: String,
    sha256: String,
}

#[derive(Serialize)]
struct RunManifest {
    command: String,
    /// Fully resolved configuration after flag/file/default precedence.
    config: serde_json::Value,
    seed: u64,
    inputs: Vec<FileStamp>,
    outputs: Vec<String>,
    /// Seconds per phase; informational only.
    timings_seconds: BTreeMap<String, f64>,
}

pub struct ManifestBuilder {
    manifest: RunManifest,
    started: Instant,
}

impl ManifestBuilder {
    pub fn new(command: &str, seed: u64, config: serde_json::Value) -> ManifestBuilder {
        ManifestBuilder {
            manifest: RunManifest {
                command: command.to_string(),
                config,
                seed,
                inputs: Vec::new(),
                outputs: Vec::new(),
                timings_seconds: BTreeMap::new(),
            },
            started: Instant::now(),
        }
    }

    /// Record an input file along with the digest of its bytes.
    pub fn input(&mut self, path: &Path) -> Result<()> {
        self.manifest.inputs.push(FileStamp {
            path: path.display().to_string(),
            sha256: sha256_file(path)?,
        });
        Ok(())
    }

    pub fn output(&mut self, path: &Path) {
        self.manifest.outputs.push(path.display().to_string());
    }

    pub fn phase(&mut self, name: &str, seconds: f64) {
        self.manifest.timings_seconds.insert(name.to_string(), seconds);
    }

    /// Write the manifest, stamping the total elapsed time.
    pub fn write(mut self, path: &Path) -> Result<()> {
        self.manifest
            .timings_seconds
            .insert("total".to_string(), self.started.elapsed().as_secs_f64());
        let mut text = serde_json::to_string_pretty(&self.manifest)?;
        text.push('\n');
        std::fs::write(path, text)
            .with_context(|| format!("writing manifest {}", path.display()))?;
        Ok(())
    }
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let mut file = std::fs::File::open(path)
        .with_context(|| format!("hashing input {}", path.display()))?;
    let mut hasher = Sha256::new();
    let mut buf = [0u8; 64 * 1024];
    loop {
        let n = file.read(&mut buf)?;
        if n == 0 {
            break;
        }
        hasher.update(&buf[..n]);
    }
    Ok(format!("{:x}", hasher.finalize()))
}

/// Manifest path for a file output: `data.jsonl` → `data.manifest.json`.
pub fn sibling_manifest(out: &Path) -> PathBuf {
    out.with_extension("manifest.json")
}

// ---------------------------------------------------------------------------
