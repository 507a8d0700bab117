//! Run-directory plumbing: schema-versioned CSV files, the run manifest, and
//! atomic writes.

use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::Context;
use serde::Serialize;

pub const SCHEMA_VERSION: u32 = 1;

/// CSV writer that stamps the schema-version comment and a header row.
pub struct CsvFile {
    buf: String,
}

impl CsvFile {
    pub fn new(header: &str) -> Self {
        let mut buf = String::new();
        buf.push_str(&format!("# schema-version: {SCHEMA_VERSION}\n"));
        buf.push_str(header);
        buf.push('\n');
        CsvFile { buf }
    }

    pub fn row(&mut self, row: &str) {
        self.buf.push_str(row);
        self.buf.push('\n');
    }

    pub fn write_to(&self, path: &Path) -> anyhow::Result<()> {
        atomic_write(path, self.buf.as_bytes())
    }
}

/// Write-then-rename so partially written files are never observable.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> anyhow::Result<()> {
    let dir = path.parent().unwrap_or_else(|| Path::new("."));
    std::fs::create_dir_all(dir)?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.flush()?;
    tmp.persist(path)
        .map_err(|e| anyhow::Error::new(e.error))
        .with_context(|| format!("persisting {}", path.display()))?;
    Ok(())
}

/// Run manifest: command, fully resolved config, seed, tool version, and the
/// artifact list. Written atomically at run end. Timestamps live in the
/// separate `run_meta.json` so re-runs produce byte-identical manifests.
#[derive(Serialize)]
pub struct RunManifest<C: Serialize> {
    pub command: String,
    pub argv: Vec<String>,
    pub config: C,
    pub seed: u64,
    pub tool_version: String,
    pub artifacts: Vec<String>,
}

impl<C: Serialize> RunManifest<C> {
    pub fn new(command: &str, config: C, seed: u64) -> Self {
        RunManifest {
            command: command.to_string(),
            argv: std::env::args().collect(),
            config,
            seed,
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            artifacts: Vec::new(),
        }
    }

    pub fn artifact(&mut self, path: &Path) {
        self.artifacts.push(path.display().to_string());
    }

    pub fn write(&self, out_dir: &Path) -> anyhow::Result<PathBuf> {
        let path = out_dir.join("manifest.json");
        let json = serde_json::to_vec_pretty(self)?;
        atomic_write(&path, &json)?;
        Ok(path)
    }
}

/// Wall-clock metadata kept out of the deterministic outputs.
pub fn write_run_meta(out_dir: &Path, started: std::time::SystemTime) -> anyhow::Result<()> {
    let now = std::time::SystemTime::now();
    let to_ms = |t: std::time::SystemTime| {
        t.duration_since(std::time::UNIX_EPOCH).map(|d| d.as_millis()).unwrap_or(0)
    };
    let meta = serde_json::json!({
        "started_unix_ms": to_ms(started),
        "finished_unix_ms": to_ms(now),
    });
    atomic_write(&out_dir.join("run_meta.json"), &serde_json::to_vec_pretty(&meta)?)
}
