//! Run manifests: what a command was asked to do and what it produced.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use anyhow::{Context, Result};
use serde::Serialize;
use serde_json::Value;

#[derive(Debug, Serialize)]
pub struct FileDigest {
    pub path: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sha256: Option<String>,
}

#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub config: Value,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    pub tool_version: &'static str,
    pub inputs: Vec<FileDigest>,
    pub outputs: Vec<FileDigest>,
    pub status: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub started_unix: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub wall_clock_secs: Option<f64>,
    #[serde(skip)]
    location: PathBuf,
    #[serde(skip)]
    clock: Option<Instant>,
    #[serde(skip)]
    planned: Vec<PathBuf>,
}

fn digest_file(path: &Path) -> Result<FileDigest> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(FileDigest {
        path: path.display().to_string(),
        sha256: Some(treeloss::sha256_hex(&bytes)),
    })
}

/// Digests of a file, or of every regular file directly inside a directory.
fn digest_path(path: &Path) -> Result<Vec<FileDigest>> {
    if !path.is_dir() {
        return Ok(vec![digest_file(path)?]);
    }
    let mut files: Vec<PathBuf> = fs::read_dir(path)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file())
        .collect();
    files.sort();
    files.iter().map(|p| digest_file(p)).collect()
}

impl RunManifest {
    /// Writes the manifest with status `running` and the planned outputs.
    pub fn begin(
        location: PathBuf,
        command: &str,
        config: Value,
        seed: Option<u64>,
        inputs: &[&Path],
        outputs: Vec<PathBuf>,
    ) -> Result<Self> {
        let mut digests = Vec::new();
        for p in inputs {
            digests.extend(digest_path(p)?);
        }
        let started = SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_secs_f64())
            .unwrap_or(0.0);
        let manifest = Self {
            command: command.to_string(),
            config,
            seed,
            tool_version: env!("CARGO_PKG_VERSION"),
            inputs: digests,
            outputs: outputs
                .iter()
                .map(|p| FileDigest {
                    path: p.display().to_string(),
                    sha256: None,
                })
                .collect(),
            status: "running".into(),
            error: None,
            started_unix: started,
            wall_clock_secs: None,
            location,
            clock: Some(Instant::now()),
            planned: outputs,
        };
        manifest.write()?;
        Ok(manifest)
    }

    fn write(&self) -> Result<()> {
        if let Some(dir) = self.location.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir)?;
        }
        fs::write(&self.location, serde_json::to_string_pretty(self)? + "\n")
            .with_context(|| format!("writing {}", self.location.display()))
    }

    /// Runs `body` and finalizes the manifest with output digests or the error.
    pub fn run<T>(mut self, body: impl FnOnce() -> Result<T>) -> Result<T> {
        let result = body();
        self.wall_clock_secs = self.clock.map(|c| c.elapsed().as_secs_f64());
        match &result {
            Ok(_) => {
                self.status = "ok".into();
                let planned = std::mem::take(&mut self.planned);
                self.outputs = planned
                    .iter()
                    .map(|p| digest_file(p))
                    .collect::<Result<_>>()?;
            }
            Err(e) => {
                self.status = "failed".into();
                self.error = Some(format!("{e:#}"));
            }
        }
        self.write()?;
        result
    }
}

/// Manifest path for a command whose only output is the file `out`.
pub fn beside(out: &Path) -> PathBuf {
    let mut name = out.file_name().unwrap_or_default().to_os_string();
    name.push(".manifest.json");
    out.with_file_name(name)
}
