//! Artifact writers and the per-task run manifest.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use serde::Serialize;
use sha2::{Digest, Sha256};

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

#[derive(Debug, Clone, Serialize)]
pub struct Artifact {
    pub file: String,
    pub sha256: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct Manifest<'a> {
    pub tool: &'static str,
    pub tool_version: &'static str,
    pub core_version: &'static str,
    pub task: &'a str,
    pub config_path: String,
    pub config_sha256: &'a str,
    pub seed: u64,
    pub threads: Option<usize>,
    pub tolerance: Option<f64>,
    pub status: &'a str,
    pub error: Option<String>,
    pub artifacts: &'a [Artifact],
    pub started_unix: u64,
    pub elapsed_seconds: f64,
}

/// Output directory of one task; every file written through it is listed in
/// the manifest.
pub struct TaskOutput {
    dir: PathBuf,
    artifacts: Vec<Artifact>,
    started: Instant,
    started_unix: u64,
}

impl TaskOutput {
    pub fn create(root: &Path, task: &str) -> std::io::Result<Self> {
        let dir = root.join(task);
        fs::create_dir_all(&dir)?;
        Ok(Self {
            dir,
            artifacts: Vec::new(),
            started: Instant::now(),
            started_unix: SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map_or(0, |d| d.as_secs()),
        })
    }

    fn write_bytes(&mut self, name: &str, bytes: &[u8]) -> std::io::Result<()> {
        fs::write(self.dir.join(name), bytes)?;
        self.artifacts.push(Artifact {
            file: name.to_string(),
            sha256: sha256_hex(bytes),
        });
        Ok(())
    }

    pub fn csv<R: Serialize>(&mut self, name: &str, rows: &[R]) -> std::io::Result<()> {
        let mut w = csv::Writer::from_writer(Vec::new());
        for r in rows {
            w.serialize(r).map_err(std::io::Error::other)?;
        }
        let bytes = w
            .into_inner()
            .map_err(|e| std::io::Error::other(e.to_string()))?;
        self.write_bytes(name, &bytes)
    }

    pub fn jsonl<R: Serialize>(&mut self, name: &str, records: &[R]) -> std::io::Result<()> {
        let mut bytes = Vec::new();
        for r in records {
            serde_json::to_writer(&mut bytes, r)?;
            bytes.push(b'\n');
        }
        self.write_bytes(name, &bytes)
    }

    pub fn json<R: Serialize>(&mut self, name: &str, value: &R) -> std::io::Result<()> {
        let mut bytes = serde_json::to_vec_pretty(value)?;
        bytes.push(b'\n');
        self.write_bytes(name, &bytes)
    }

    /// Files written so far, with the start time and elapsed seconds.
    pub fn summary(&self) -> (&[Artifact], u64, f64) {
        (
            &self.artifacts,
            self.started_unix,
            self.started.elapsed().as_secs_f64(),
        )
    }

    pub fn write_manifest(&self, m: &Manifest<'_>) -> std::io::Result<()> {
        let mut f = fs::File::create(self.dir.join("manifest.json"))?;
        serde_json::to_writer_pretty(&mut f, m)?;
        f.write_all(b"\n")
    }
}
