//! Append-only metrics stream: one JSON record per line, parseable
//! independently of process state. No wall-clock fields, so identical
//! runs produce byte-identical streams.

use crate::error::{NewtError, Result};
use serde::{Deserialize, Serialize};
use std::io::{BufRead, Write};
use std::path::Path;

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct MetricRecord {
    /// Cumulative environment steps (or optimizer iterations during
    /// pretraining / behavior cloning).
    pub step: u64,
    /// Record kind: "pretrain", "bc", "train", "eval", "collect".
    pub kind: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub task: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub score: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub model_loss: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub policy_loss: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bc_loss: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub beta: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fallback_count: Option<u64>,
}

impl MetricRecord {
    pub fn new(step: u64, kind: &str) -> Self {
        MetricRecord {
            step,
            kind: kind.to_string(),
            task: None,
            score: None,
            model_loss: None,
            policy_loss: None,
            bc_loss: None,
            beta: None,
            fallback_count: None,
        }
    }
}

/// Writes records to an optional file while keeping them in memory for
/// callers that want to inspect the stream.
#[derive(Debug, Default)]
pub struct MetricsWriter {
    file: Option<std::io::BufWriter<std::fs::File>>,
    pub records: Vec<MetricRecord>,
}

impl MetricsWriter {
    pub fn in_memory() -> Self {
        MetricsWriter::default()
    }

    pub fn to_file(path: &Path) -> Result<Self> {
        let file = std::fs::File::create(path)?;
        Ok(MetricsWriter {
            file: Some(std::io::BufWriter::new(file)),
            records: Vec::new(),
        })
    }

    pub fn emit(&mut self, record: MetricRecord) -> Result<()> {
        if let Some(f) = &mut self.file {
            let line = serde_json::to_string(&record)
                .map_err(|e| NewtError::Format(format!("metrics encode: {e}")))?;
            writeln!(f, "{line}")?;
            f.flush()?;
        }
        self.records.push(record);
        Ok(())
    }
}

/// Reads a line-delimited metrics file back into records.
pub fn read_metrics(path: &Path) -> Result<Vec<MetricRecord>> {
    let file = std::fs::File::open(path)?;
    let reader = std::io::BufReader::new(file);
    let mut out = Vec::new();
    for line in reader.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: MetricRecord = serde_json::from_str(&line)
            .map_err(|e| NewtError::Format(format!("metrics parse: {e}")))?;
        out.push(rec);
    }
    Ok(out)
}
