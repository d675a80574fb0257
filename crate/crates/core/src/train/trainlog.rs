//! Per-step training log, mirrored to CSV.

use std::fs::{File, OpenOptions};
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainLogRow {
    pub step: u64,
    pub phase: String,
    pub lr: f64,
    pub problem_loss: f64,
    /// Empty for encoder-only steps.
    pub solution_loss: Option<f64>,
    /// Global gradient norm after clipping.
    pub grad_norm: f64,
    pub wall_time_s: f64,
}

impl TrainLogRow {
    /// Equality ignoring wall time, for replay comparisons.
    pub fn same_trajectory(&self, other: &TrainLogRow) -> bool {
        TrainLogRow {
            wall_time_s: 0.0,
            ..self.clone()
        } == TrainLogRow {
            wall_time_s: 0.0,
            ..other.clone()
        }
    }
}

/// Append-only log. Rows are kept in memory and, when a file is attached,
/// written through on every [`TrainLog::flush`].
pub struct TrainLog {
    rows: Vec<TrainLogRow>,
    flushed: usize,
    sink: Option<csv::Writer<File>>,
    started: Instant,
}

impl Default for TrainLog {
    fn default() -> Self {
        Self::new()
    }
}

impl TrainLog {
    pub fn new() -> Self {
        TrainLog {
            rows: Vec::new(),
            flushed: 0,
            sink: None,
            started: Instant::now(),
        }
    }

    /// Log that also appends to `path`, writing the header if the file is new.
    pub fn with_file(path: &Path) -> Result<Self> {
        let fresh = std::fs::metadata(path).map(|m| m.len() == 0).unwrap_or(true);
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|e| Error::io(path, e))?;
        let sink = csv::WriterBuilder::new().has_headers(fresh).from_writer(file);
        Ok(TrainLog {
            sink: Some(sink),
            ..Self::new()
        })
    }

    pub fn elapsed_s(&self) -> f64 {
        self.started.elapsed().as_secs_f64()
    }

    pub fn push(&mut self, row: TrainLogRow) {
        self.rows.push(row);
    }

    pub fn rows(&self) -> &[TrainLogRow] {
        &self.rows
    }

    pub fn last(&self) -> Option<&TrainLogRow> {
        self.rows.last()
    }

    pub fn flush(&mut self) -> Result<()> {
        if let Some(w) = self.sink.as_mut() {
            for row in &self.rows[self.flushed..] {
                w.serialize(row)?;
            }
            w.flush().map_err(|e| Error::io("train log", e))?;
        }
        self.flushed = self.rows.len();
        Ok(())
    }

    pub fn read_csv(path: &Path) -> Result<Vec<TrainLogRow>> {
        let mut r = csv::Reader::from_path(path)?;
        r.deserialize().map(|row| row.map_err(Error::from)).collect()
    }
}
