//! Run manifests: config echo, timings, convergence flags and file hashes.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

pub const MANIFEST_FILE: &str = "manifest.json";
/// Bumped whenever a file schema or the manifest layout changes.
pub const INTERFACE_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FileEntry {
    /// Path relative to the run directory, `/`-separated.
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PointStatus {
    pub label: String,
    pub converged: bool,
    pub energy: Option<f64>,
    pub sweeps: Option<usize>,
    pub max_truncation_error: Option<f64>,
    pub noise_floor: Option<f64>,
    pub error: Option<String>,
    pub resumed: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub interface_version: u32,
    pub command: String,
    pub parallel_build: bool,
    pub workers: usize,
    pub config: serde_json::Value,
    pub started_unix: f64,
    pub finished_unix: f64,
    pub points: Vec<PointStatus>,
    pub notes: Vec<String>,
    pub files: Vec<FileEntry>,
}

pub fn now_unix() -> f64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs_f64()).unwrap_or(0.0)
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

pub fn hash_file(path: &Path) -> std::io::Result<(String, u64)> {
    let bytes = std::fs::read(path)?;
    Ok((sha256_hex(&bytes), bytes.len() as u64))
}

impl Manifest {
    pub fn new(command: &str, config: serde_json::Value, workers: usize) -> Self {
        Self {
            tool: "lrxxz".into(),
            version: env!("CARGO_PKG_VERSION").into(),
            interface_version: INTERFACE_VERSION,
            command: command.into(),
            parallel_build: lrxxz_core::exec::is_parallel(),
            workers,
            config,
            started_unix: now_unix(),
            finished_unix: 0.0,
            points: Vec::new(),
            notes: Vec::new(),
            files: Vec::new(),
        }
    }

    /// Hashes `files` (relative to `dir`), stamps the finish time and writes
    /// the manifest into `dir`.
    pub fn finish(&mut self, dir: &Path, files: &[PathBuf]) -> std::io::Result<()> {
        let mut entries = Vec::with_capacity(files.len());
        for rel in files {
            let (sha256, bytes) = hash_file(&dir.join(rel))?;
            let path = rel.components().map(|c| c.as_os_str().to_string_lossy()).collect::<Vec<_>>().join("/");
            entries.push(FileEntry { path, sha256, bytes });
        }
        entries.sort_by(|a, b| a.path.cmp(&b.path));
        entries.dedup_by(|a, b| a.path == b.path);
        self.files = entries;
        self.finished_unix = now_unix();
        let text = serde_json::to_string_pretty(self).map_err(std::io::Error::other)?;
        std::fs::write(dir.join(MANIFEST_FILE), text)
    }

    pub fn load(dir: &Path) -> Result<Manifest, String> {
        let path = dir.join(MANIFEST_FILE);
        let text = std::fs::read_to_string(&path).map_err(|e| format!("{}: {e}", path.display()))?;
        serde_json::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))
    }

    pub fn entry(&self, rel: &str) -> Option<&FileEntry> {
        self.files.iter().find(|f| f.path == rel)
    }

    /// Files whose content no longer matches the recorded hash.
    pub fn verify(&self, dir: &Path) -> Vec<String> {
        let mut bad = Vec::new();
        for f in &self.files {
            match hash_file(&dir.join(&f.path)) {
                Ok((h, n)) if h == f.sha256 && n == f.bytes => {}
                Ok(_) => bad.push(format!("{}: hash mismatch", f.path)),
                Err(e) => bad.push(format!("{}: {e}", f.path)),
            }
        }
        bad
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
    fn finish_and_verify() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::create_dir_all(dir.path().join("p")).unwrap();
        std::fs::write(dir.path().join("a.csv"), "x\n").unwrap();
        std::fs::write(dir.path().join("p/b.csv"), "y\n").unwrap();
        let mut m = Manifest::new("ground", serde_json::json!({"k": 1}), 1);
        m.finish(dir.path(), &[PathBuf::from("p/b.csv"), PathBuf::from("a.csv")]).unwrap();
        let back = Manifest::load(dir.path()).unwrap();
        assert_eq!(back.files.len(), 2);
        assert_eq!(back.files[1].path, "p/b.csv");
        assert!(back.verify(dir.path()).is_empty());
        std::fs::write(dir.path().join("a.csv"), "z\n").unwrap();
        assert_eq!(back.verify(dir.path()).len(), 1);
    }
}
