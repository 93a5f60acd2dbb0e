//! Output directory handling and the run manifest.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;
use sha2::{Digest, Sha256};

use voltreach::config::RunConfig;
use voltreach::{Error, Result};

#[derive(Debug, Clone, Serialize)]
pub struct Artifact {
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Debug, Serialize)]
pub struct Manifest {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: String,
    pub config_hash: String,
    pub seed: u64,
    pub workers: usize,
    pub outcome: String,
    pub artifacts: Vec<Artifact>,
    pub timings_s: BTreeMap<String, f64>,
    /// Effective configuration, defaults included.
    pub config: serde_json::Value,
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

/// Collects artifacts written into one output directory.
pub struct Output {
    pub dir: PathBuf,
    artifacts: Vec<Artifact>,
    timings: BTreeMap<String, f64>,
    started: Instant,
}

impl Output {
    pub fn create(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir).map_err(|e| Error::Io(format!("{}: {e}", dir.display())))?;
        Ok(Self {
            dir: dir.to_path_buf(),
            artifacts: Vec::new(),
            timings: BTreeMap::new(),
            started: Instant::now(),
        })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    /// Writes `name` and records its checksum (replacing an older record).
    pub fn write(&mut self, name: &str, bytes: &[u8]) -> Result<()> {
        let p = self.path(name);
        if let Some(parent) = p.parent() {
            fs::create_dir_all(parent).map_err(|e| Error::Io(e.to_string()))?;
        }
        fs::write(&p, bytes).map_err(|e| Error::Io(format!("{}: {e}", p.display())))?;
        self.record(name)
    }

    /// Records a file that was written (or appended to) directly.
    pub fn record(&mut self, name: &str) -> Result<()> {
        let p = self.path(name);
        let meta = fs::metadata(&p).map_err(|e| Error::Io(format!("{}: {e}", p.display())))?;
        let a = Artifact {
            path: name.to_string(),
            sha256: sha256_file(&p)?,
            bytes: meta.len(),
        };
        self.artifacts.retain(|x| x.path != name);
        self.artifacts.push(a);
        Ok(())
    }

    pub fn time(&mut self, label: &str, since: Instant) {
        self.timings.insert(label.to_string(), since.elapsed().as_secs_f64());
    }

    pub fn finish(mut self, command: &str, cfg: &RunConfig, outcome: &str) -> Result<()> {
        self.timings
            .insert("total".into(), self.started.elapsed().as_secs_f64());
        self.write("config.toml", cfg.to_toml().as_bytes())?;
        let mut artifacts = self.artifacts.clone();
        artifacts.sort_by(|a, b| a.path.cmp(&b.path));
        let m = Manifest {
            tool: "voltreach",
            version: env!("CARGO_PKG_VERSION"),
            command: command.to_string(),
            config_hash: cfg.hash(),
            seed: cfg.seed,
            workers: cfg.workers,
            outcome: outcome.to_string(),
            artifacts,
            timings_s: self.timings.clone(),
            config: serde_json::to_value(cfg).map_err(|e| Error::Io(e.to_string()))?,
        };
        let text = serde_json::to_string_pretty(&m).map_err(|e| Error::Io(e.to_string()))?;
        fs::write(self.path("manifest.json"), text + "\n").map_err(|e| Error::Io(e.to_string()))
    }
}

/// Checks `file` against the manifest in the same directory.
pub fn verify_against_manifest(file: &Path) -> Result<()> {
    let dir = file.parent().unwrap_or(Path::new("."));
    let mpath = dir.join("manifest.json");
    let text = fs::read_to_string(&mpath).map_err(|e| Error::Io(format!("{}: {e}", mpath.display())))?;
    let v: serde_json::Value = serde_json::from_str(&text).map_err(|e| Error::Io(format!("manifest: {e}")))?;
    let name = file.file_name().and_then(|n| n.to_str()).unwrap_or_default();
    let expected = v["artifacts"]
        .as_array()
        .and_then(|a| a.iter().find(|x| x["path"] == name))
        .and_then(|x| x["sha256"].as_str())
        .ok_or_else(|| Error::Checkpoint(format!("{name} is not listed in {}", mpath.display())))?;
    let got = sha256_file(file)?;
    if got != expected {
        return Err(Error::Checkpoint(format!("checksum mismatch for {name}: manifest {expected}, file {got}")));
    }
    Ok(())
}
