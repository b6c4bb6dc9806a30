use std::collections::BTreeMap;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One evaluation point of a training run.
///
/// Serialises flat, e.g. `{"step":100,"loss":..,"penalty":..,"val_loss":..,"val_acc_a":..}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub step: usize,
    pub epoch: usize,
    pub loss: f64,
    pub penalty: f64,
    pub val_loss: f64,
    #[serde(flatten)]
    pub metrics: BTreeMap<String, f64>,
}

/// Append-only sequence of evaluation records.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunHistory {
    pub records: Vec<EvalRecord>,
    pub wall_time_s: f64,
}

impl RunHistory {
    pub fn push(&mut self, record: EvalRecord) -> Result<()> {
        if let Some(last) = self.records.last() {
            if record.step <= last.step {
                return Err(Error::Usage(format!(
                    "history steps must increase: {} after {}",
                    record.step, last.step
                )));
            }
        }
        self.records.push(record);
        Ok(())
    }

    pub fn last(&self) -> Option<&EvalRecord> {
        self.records.last()
    }

    /// Record with the lowest validation loss (earliest on ties).
    pub fn best(&self) -> Option<&EvalRecord> {
        self.records
            .iter()
            .fold(None, |best: Option<&EvalRecord>, r| match best {
                Some(b) if b.val_loss <= r.val_loss => Some(b),
                _ => Some(r),
            })
    }

    pub fn write_ndjson(&self, mut w: impl Write) -> Result<()> {
        for r in &self.records {
            serde_json::to_writer(&mut w, r)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn read_ndjson(r: impl BufRead) -> Result<Self> {
        let mut h = RunHistory::default();
        for line in r.lines() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            h.push(serde_json::from_str(&line)?)?;
        }
        Ok(h)
    }
}
