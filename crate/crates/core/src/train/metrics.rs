//! Append-only training metrics CSV.

use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use super::stages::StageName;
use super::step::StepMetrics;
use crate::error::{Error, Result};

pub const HEADER: &str = "step,stage,loss,grad_norm,lr,wallclock";

pub struct MetricsWriter {
    file: File,
    path: PathBuf,
}

impl MetricsWriter {
    /// Opens `path` for appending, writing the header to a new file.
    pub fn open(path: &Path) -> Result<Self> {
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        let fresh = !path.exists();
        let mut file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|e| Error::io(path, e))?;
        if fresh {
            writeln!(file, "{HEADER}").map_err(|e| Error::io(path, e))?;
        }
        Ok(Self {
            file,
            path: path.to_path_buf(),
        })
    }

    pub fn append(&mut self, m: &StepMetrics, stage: StageName) -> Result<()> {
        let now = SystemTime::now().duration_since(UNIX_EPOCH).map_or(0.0, |d| d.as_secs_f64());
        writeln!(self.file, "{},{stage},{},{},{},{now:.3}", m.step, m.loss, m.grad_norm, m.lr)
            .map_err(|e| Error::io(&self.path, e))
    }
}

/// The CSV with the wallclock column removed, for run-to-run comparison.
pub fn deterministic_columns(path: &Path) -> Result<Vec<String>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    BufReader::new(file)
        .lines()
        .map(|line| {
            let line = line.map_err(|e| Error::io(path, e))?;
            Ok(match line.rsplit_once(',') {
                Some((head, _)) => head.to_string(),
                None => line,
            })
        })
        .collect()
}
