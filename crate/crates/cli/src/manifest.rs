//! Run manifests: what was run, with which resolved configuration, and what
//! it produced.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{Context, Result};
use serde::Serialize;
use serde_json::Value;
use sha2::{Digest, Sha256};

pub const TOOL: &str = "gaussphys";

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

pub fn file_sha256(path: &Path) -> Result<String> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(sha256_hex(&bytes))
}

#[derive(Serialize)]
pub struct FileEntry {
    pub path: String,
    pub bytes: u64,
    pub sha256: String,
}

#[derive(Serialize)]
pub struct RunManifest {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: &'static str,
    /// SHA-256 of the canonical JSON of `config`.
    pub config_hash: String,
    /// Fully resolved inputs; together with `seeds` they determine every
    /// output.
    pub config: Value,
    pub seeds: BTreeMap<&'static str, u64>,
    pub threads: usize,
    /// Wall-clock seconds per phase.
    pub timings: BTreeMap<&'static str, f64>,
    pub files: Vec<FileEntry>,
    #[serde(skip_serializing_if = "BTreeMap::is_empty")]
    pub diagnostics: BTreeMap<&'static str, Value>,
}

impl RunManifest {
    pub fn new(command: &'static str, config: Value) -> Self {
        let canonical = serde_json::to_vec(&config).expect("config serializes");
        RunManifest {
            tool: TOOL,
            version: env!("CARGO_PKG_VERSION"),
            command,
            config_hash: sha256_hex(&canonical),
            config,
            seeds: BTreeMap::new(),
            threads: rayon::current_num_threads(),
            timings: BTreeMap::new(),
            files: Vec::new(),
            diagnostics: BTreeMap::new(),
        }
    }

    /// Runs `f`, recording its duration under `phase`.
    pub fn time<T>(&mut self, phase: &'static str, f: impl FnOnce() -> T) -> T {
        let start = Instant::now();
        let out = f();
        *self.timings.entry(phase).or_insert(0.0) += start.elapsed().as_secs_f64();
        out
    }

    /// Records an output file; paths are stored relative to `root`.
    pub fn add_file(&mut self, root: &Path, path: &Path) -> Result<()> {
        let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
        let rel = path.strip_prefix(root).unwrap_or(path);
        self.files.push(FileEntry {
            path: rel.to_string_lossy().replace('\\', "/"),
            bytes: bytes.len() as u64,
            sha256: sha256_hex(&bytes),
        });
        Ok(())
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        write_atomic(path, text.as_bytes())
    }
}

/// Writes through a sibling temporary file and a rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = tmp_path(path);
    {
        let mut f = fs::File::create(&tmp).with_context(|| format!("creating {}", tmp.display()))?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path).with_context(|| format!("renaming into {}", path.display()))?;
    Ok(())
}

fn tmp_path(path: &Path) -> PathBuf {
    let mut name = path.file_name().unwrap_or_default().to_os_string();
    name.push(".tmp");
    path.with_file_name(name)
}

/// Manifest location for a command whose output is a single file.
pub fn sidecar(path: &Path) -> PathBuf {
    let mut name = path.file_name().unwrap_or_default().to_os_string();
    name.push(".manifest.json");
    path.with_file_name(name)
}
