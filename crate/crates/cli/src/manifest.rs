//! One JSON record per command invocation under `<out>/runs/`.

use std::collections::BTreeMap;
use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};
use unidiff::config::FlatConfig;

pub const RUNS_DIR: &str = "runs";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    /// Full argument vector, program name excluded.
    pub argv: Vec<String>,
    /// Every setting the command ran with.
    pub config: BTreeMap<String, String>,
    pub seed: Option<u64>,
    pub version: String,
    pub threads: usize,
    /// Unix time in seconds.
    pub started: f64,
    pub ended: f64,
    /// Written files, relative to the output root.
    pub outputs: Vec<String>,
    pub warnings: Vec<String>,
    /// Command-specific results.
    pub details: BTreeMap<String, String>,
    /// `ok` or the error message.
    pub status: String,
}

pub fn now() -> f64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0.0, |d| d.as_secs_f64())
}

impl RunManifest {
    pub fn start(command: &str, argv: Vec<String>, threads: usize) -> Self {
        Self {
            command: command.to_string(),
            argv,
            config: BTreeMap::new(),
            seed: None,
            version: env!("CARGO_PKG_VERSION").to_string(),
            threads,
            started: now(),
            ended: 0.0,
            outputs: Vec::new(),
            warnings: Vec::new(),
            details: BTreeMap::new(),
            status: "running".into(),
        }
    }

    pub fn set(&mut self, key: &str, value: impl ToString) {
        self.config.insert(key.to_string(), value.to_string());
    }

    pub fn snapshot(&mut self, flat: &FlatConfig) {
        for k in flat.keys() {
            self.config.insert(k.to_string(), flat.raw(k).unwrap_or_default().to_string());
        }
    }

    pub fn detail(&mut self, key: &str, value: impl ToString) {
        self.details.insert(key.to_string(), value.to_string());
    }

    pub fn warn(&mut self, msg: impl Into<String>) {
        let msg = msg.into();
        eprintln!("warning: {msg}");
        self.warnings.push(msg);
    }

    pub fn output(&mut self, root: &Path, path: &Path) {
        let rel = path.strip_prefix(root).unwrap_or(path);
        self.outputs.push(rel.display().to_string());
    }

    /// Writes the manifest to a fresh file; existing manifests are never
    /// replaced.
    pub fn write(&mut self, out: &Path) -> Result<PathBuf> {
        self.ended = now();
        let dir = out.join(RUNS_DIR);
        fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
        let stamp = (self.started * 1000.0) as u64;
        let text = serde_json::to_string_pretty(self)?;
        for n in 0.. {
            let name = match n {
                0 => format!("{stamp}-{}.json", self.command),
                n => format!("{stamp}-{}-{n}.json", self.command),
            };
            let path = dir.join(name);
            match OpenOptions::new().write(true).create_new(true).open(&path) {
                Ok(mut f) => {
                    f.write_all(text.as_bytes())?;
                    f.write_all(b"\n")?;
                    return Ok(path);
                }
                Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => continue,
                Err(e) => return Err(e).with_context(|| format!("writing {}", path.display())),
            }
        }
        unreachable!()
    }
}

/// All manifests under `out`, oldest first.
#[cfg(test)]
pub fn read_all(out: &Path) -> Result<Vec<RunManifest>> {
    let dir = out.join(RUNS_DIR);
    let mut paths: Vec<PathBuf> = fs::read_dir(&dir)
        .with_context(|| format!("reading {}", dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e == "json"))
        .collect();
    paths.sort();
    paths
        .iter()
        .map(|p| Ok(serde_json::from_str(&fs::read_to_string(p)?)?))
        .collect()
}
