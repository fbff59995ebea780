//! JSON-lines training log: one object per line with phase, step, loss
//! components, residual, accuracy and wall time.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{IgnnError, Result};

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct LogRecord {
    pub phase: String,
    pub step: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub loss_total: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub loss_reconstruction: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub loss_init: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub loss_alpha: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub residual: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub train_accuracy: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub val_accuracy: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub clipped: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub model_params: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub solver_params: Option<usize>,
    pub wall_time_s: f64,
}

impl LogRecord {
    pub fn new(phase: impl Into<String>, step: usize, wall_time_s: f64) -> Self {
        LogRecord {
            phase: phase.into(),
            step,
            loss_total: None,
            loss_reconstruction: None,
            loss_init: None,
            loss_alpha: None,
            residual: None,
            train_accuracy: None,
            val_accuracy: None,
            clipped: None,
            model_params: None,
            solver_params: None,
            wall_time_s,
        }
    }
}

/// Append-only JSONL writer; `None` sink discards records (used by tests
/// and library callers that do not want a file).
pub struct TrainLog {
    writer: Option<BufWriter<fs::File>>,
    pub records: Vec<LogRecord>,
}

impl TrainLog {
    pub fn to_file(path: &Path) -> Result<Self> {
        let file = fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)?;
        Ok(TrainLog {
            writer: Some(BufWriter::new(file)),
            records: Vec::new(),
        })
    }

    pub fn in_memory() -> Self {
        TrainLog {
            writer: None,
            records: Vec::new(),
        }
    }

    pub fn push(&mut self, record: LogRecord) -> Result<()> {
        if let Some(w) = &mut self.writer {
            let line = serde_json::to_string(&record)
                .map_err(|e| IgnnError::Domain(format!("log json: {e}")))?;
            writeln!(w, "{line}")?;
        }
        self.records.push(record);
        Ok(())
    }

    pub fn flush(&mut self) -> Result<()> {
        if let Some(w) = &mut self.writer {
            w.flush()?;
        }
        Ok(())
    }
}

/// Parse a JSONL training log; malformed lines name their line number.
pub fn parse_log(path: &Path) -> Result<Vec<LogRecord>> {
    let text = fs::read_to_string(path)?;
    let mut records = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let record: LogRecord = serde_json::from_str(line).map_err(|e| IgnnError::Parse {
            file: path.display().to_string(),
            line: idx + 1,
            message: e.to_string(),
        })?;
        records.push(record);
    }
    Ok(records)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_and_line_numbers() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("log.jsonl");
        let mut log = TrainLog::to_file(&path).unwrap();
        let mut rec = LogRecord::new("solver", 3, 0.25);
        rec.loss_total = Some(1.5);
        log.push(rec.clone()).unwrap();
        log.flush().unwrap();
        let parsed = parse_log(&path).unwrap();
        assert_eq!(parsed, vec![rec]);

        fs::write(&path, "{\"phase\": \"model\"\nnot json\n").unwrap();
        match parse_log(&path) {
            Err(IgnnError::Parse { line, .. }) => assert_eq!(line, 1),
            other => panic!("expected parse error, got {other:?}"),
        }
    }
}
