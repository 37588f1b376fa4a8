//! CSV writers and the run manifest.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::Result;

/// Collects files written below one output directory.
#[derive(Debug)]
pub struct OutputDir {
    root: PathBuf,
    files: Vec<PathBuf>,
}

impl OutputDir {
    pub fn create(root: impl Into<PathBuf>) -> Result<Self> {
        let root = root.into();
        fs::create_dir_all(&root)?;
        Ok(Self {
            root,
            files: Vec::new(),
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    /// Writes `contents` to `rel` below the root.
    pub fn write(&mut self, rel: impl AsRef<Path>, contents: &str) -> Result<PathBuf> {
        let rel = rel.as_ref().to_path_buf();
        let path = self.root.join(&rel);
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir)?;
        }
        fs::write(&path, contents)?;
        if !self.files.contains(&rel) {
            self.files.push(rel);
        }
        Ok(path)
    }

    /// Files written so far, relative to the root, in write order.
    pub fn files(&self) -> &[PathBuf] {
        &self.files
    }
}

/// Plain CSV with `#`-prefixed metadata lines above the header.
#[derive(Debug, Default, Clone)]
pub struct Csv {
    meta: Vec<(String, String)>,
    header: Vec<String>,
    rows: Vec<Vec<String>>,
}

/// Shortest text that parses back to the same `f64`.
pub fn num(v: f64) -> String {
    format!("{v:e}")
}

impl Csv {
    pub fn new<S: Into<String>>(header: impl IntoIterator<Item = S>) -> Self {
        Self {
            header: header.into_iter().map(Into::into).collect(),
            ..Self::default()
        }
    }

    pub fn meta(mut self, key: &str, value: impl ToString) -> Self {
        self.meta.push((key.to_string(), value.to_string()));
        self
    }

    pub fn push_meta(&mut self, key: &str, value: impl ToString) {
        self.meta.push((key.to_string(), value.to_string()));
    }

    pub fn row(&mut self, cells: Vec<String>) {
        debug_assert_eq!(cells.len(), self.header.len());
        self.rows.push(cells);
    }

    pub fn row_f64(&mut self, cells: &[f64]) {
        self.row(cells.iter().map(|&v| num(v)).collect());
    }

    pub fn render(&self) -> String {
        let mut s = String::new();
        for (k, v) in &self.meta {
            let _ = writeln!(s, "# {k}: {v}");
        }
        let _ = writeln!(s, "{}", self.header.join(","));
        for r in &self.rows {
            let _ = writeln!(s, "{}", r.join(","));
        }
        s
    }
}

#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct FileRecord {
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct Seeds {
    pub integrator: u64,
    pub calibration: u64,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub config_sha256: String,
    pub seeds: Seeds,
    pub version: String,
    pub wall_clock_seconds: f64,
    pub files: Vec<FileRecord>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

impl RunManifest {
    /// Checksums every file in `out` and writes `manifest.json` next to them.
    pub fn finish(
        out: &OutputDir,
        command: &str,
        config_text: &str,
        seeds: Seeds,
        started: Instant,
    ) -> Result<Self> {
        let files = out
            .files()
            .iter()
            .map(|rel| {
                let bytes = fs::read(out.root().join(rel))?;
                Ok(FileRecord {
                    path: rel.to_string_lossy().replace('\\', "/"),
                    sha256: sha256_hex(&bytes),
                    bytes: bytes.len() as u64,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let manifest = Self {
            command: command.to_string(),
            config_sha256: sha256_hex(config_text.as_bytes()),
            seeds,
            version: env!("CARGO_PKG_VERSION").to_string(),
            wall_clock_seconds: started.elapsed().as_secs_f64(),
            files,
        };
        let json = serde_json::to_string_pretty(&manifest)
            .map_err(|e| crate::Error::InvalidInput(e.to_string()))?;
        fs::write(out.root().join("manifest.json"), json + "\n")?;
        Ok(manifest)
    }
}
