//! Append-only CSV loss log, one row per epoch and task.

use std::fs::{self, File, OpenOptions};
use std::path::{Path, PathBuf};

use psdepth_core::trainer::EpochStats;

use crate::error::{Error, Result};

pub const COMPONENTS: [&str; 7] = [
    "reconstruction",
    "left_right",
    "smoothness",
    "semantic",
    "cross_entropy",
    "distill",
    "unmo",
];

pub fn header() -> Vec<&'static str> {
    let mut h = vec!["epoch", "phase", "task", "lr", "loss_total"];
    h.extend(COMPONENTS);
    h
}

pub struct LossLog {
    path: PathBuf,
    writer: csv::Writer<File>,
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    Error::format(path, e.to_string())
}

impl LossLog {
    /// Starts a fresh log, or when `resume` keeps the rows of epochs up to
    /// `epoch` and appends after them.
    pub fn open(path: &Path, resume: bool, epoch: usize) -> Result<Self> {
        let mut kept = Vec::new();
        if resume && path.exists() {
            let mut reader = csv::Reader::from_path(path).map_err(|e| csv_error(path, e))?;
            for row in reader.records() {
                let row = row.map_err(|e| csv_error(path, e))?;
                let e: usize = row
                    .get(0)
                    .and_then(|v| v.parse().ok())
                    .ok_or_else(|| Error::format(path, "row without an epoch number"))?;
                if e <= epoch {
                    kept.push(row);
                }
            }
        }
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        let file = OpenOptions::new()
            .write(true)
            .create(true)
            .truncate(true)
            .open(path)
            .map_err(|e| Error::io(path, e))?;
        let mut writer = csv::Writer::from_writer(file);
        writer.write_record(header()).map_err(|e| csv_error(path, e))?;
        for row in &kept {
            writer.write_record(row).map_err(|e| csv_error(path, e))?;
        }
        writer.flush().map_err(|e| Error::io(path, e))?;
        Ok(Self {
            path: path.to_path_buf(),
            writer,
        })
    }

    pub fn append(&mut self, stats: &EpochStats) -> Result<()> {
        for t in &stats.tasks {
            let mut row = vec![
                stats.epoch.to_string(),
                stats.phase.to_string(),
                t.task.to_string(),
                format!("{:?}", stats.lr),
                format!("{:?}", t.loss.total),
            ];
            row.extend(
                COMPONENTS
                    .iter()
                    .map(|c| t.loss.component(c).map_or_else(String::new, |v| format!("{v:?}"))),
            );
            self.writer.write_record(&row).map_err(|e| csv_error(&self.path, e))?;
        }
        self.writer.flush().map_err(|e| Error::io(&self.path, e))
    }
}

/// Rows of a log as `(epoch, task, loss_total)`.
pub fn read_totals(path: &Path) -> Result<Vec<(usize, String, f64)>> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| csv_error(path, e))?;
    let mut out = Vec::new();
    for row in reader.records() {
        let row = row.map_err(|e| csv_error(path, e))?;
        let bad = || Error::format(path, "malformed log row");
        let epoch = row.get(0).and_then(|v| v.parse().ok()).ok_or_else(bad)?;
        let task = row.get(2).ok_or_else(bad)?.to_string();
        let total = row.get(4).and_then(|v| v.parse().ok()).ok_or_else(bad)?;
        out.push((epoch, task, total));
    }
    Ok(out)
}
