use std::collections::BTreeMap;
use std::fs::File;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::error::{Error, Result};
use crate::train::EpochMetrics;

use super::histogram::csv_error;

/// Measurements taken at one iteration, before that iteration's retraining.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IterationRecord {
    /// 1-based; iteration 1 is plain post-training quantization.
    pub n: usize,
    pub tensor_sse: BTreeMap<String, f64>,
    pub total_sse: f64,
    /// Validation perplexity of the full-precision weights `w_n`.
    pub fp_ppl: f64,
    /// Validation perplexity with the selected tensors quantized.
    pub q_ppl: f64,
    /// Squared distance of the dequantized weights to the previous iteration's.
    pub drift: Option<f64>,
    /// Wall-clock time of quantization, evaluation and retraining.
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpochLog {
    pub phase: String,
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub valid_ppl: f64,
}

impl EpochLog {
    pub fn new(phase: &str, m: EpochMetrics) -> Self {
        Self {
            phase: phase.to_string(),
            epoch: m.epoch,
            lr: m.lr,
            train_loss: m.train_loss,
            valid_ppl: m.valid_ppl,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopDecision {
    Continue,
    Stop,
}

/// Stops once the last `patience` values all failed to improve on the best
/// value seen before them.
pub fn early_stop_check(q_ppl: &[f64], patience: usize) -> StopDecision {
    assert!(patience >= 1, "patience must be at least 1");
    let mut best = f64::INFINITY;
    let mut stale = 0;
    for &v in q_ppl {
        if v < best {
            best = v;
            stale = 0;
        } else {
            stale += 1;
        }
    }
    if stale >= patience {
        StopDecision::Stop
    } else {
        StopDecision::Continue
    }
}

/// Appends to `records.csv` and `epochs.csv`, flushing after every write.
pub struct RecordWriter {
    records: csv::Writer<File>,
    records_path: PathBuf,
    epochs: csv::Writer<File>,
    epochs_path: PathBuf,
    tensors: Vec<String>,
}

impl RecordWriter {
    pub fn create(dir: &Path, tensors: &[String]) -> Result<Self> {
        let records_path = dir.join("records.csv");
        let epochs_path = dir.join("epochs.csv");
        let mut records = csv::Writer::from_path(&records_path).map_err(|e| csv_error(&records_path, e))?;
        let mut header: Vec<String> = ["n", "total_sse", "fp_ppl", "q_ppl", "drift", "seconds"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        header.extend(tensors.iter().map(|t| format!("sse:{t}")));
        records.write_record(&header).map_err(|e| csv_error(&records_path, e))?;
        records.flush().map_err(|e| Error::io(&records_path, e))?;
        let mut epochs = csv::Writer::from_path(&epochs_path).map_err(|e| csv_error(&epochs_path, e))?;
        epochs
            .write_record(["phase", "epoch", "lr", "train_loss", "valid_ppl"])
            .map_err(|e| csv_error(&epochs_path, e))?;
        epochs.flush().map_err(|e| Error::io(&epochs_path, e))?;
        Ok(Self {
            records,
            records_path,
            epochs,
            epochs_path,
            tensors: tensors.to_vec(),
        })
    }

    pub fn write_record(&mut self, r: &IterationRecord) -> Result<()> {
        let mut row = vec![
            r.n.to_string(),
            r.total_sse.to_string(),
            r.fp_ppl.to_string(),
            r.q_ppl.to_string(),
            r.drift.map(|d| d.to_string()).unwrap_or_default(),
            format!("{:.3}", r.seconds),
        ];
        row.extend(self.tensors.iter().map(|t| r.tensor_sse.get(t).map(f64::to_string).unwrap_or_default()));
        self.records.write_record(&row).map_err(|e| csv_error(&self.records_path, e))?;
        self.records.flush().map_err(|e| Error::io(&self.records_path, e))
    }

    pub fn write_epochs(&mut self, rows: &[EpochLog]) -> Result<()> {
        for r in rows {
            self.epochs
                .write_record([
                    r.phase.clone(),
                    r.epoch.to_string(),
                    r.lr.to_string(),
                    r.train_loss.to_string(),
                    r.valid_ppl.to_string(),
                ])
                .map_err(|e| csv_error(&self.epochs_path, e))?;
        }
        self.epochs.flush().map_err(|e| Error::io(&self.epochs_path, e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn improving_never_stops() {
        let v = [10.0, 9.0, 8.0, 7.5, 7.0];
        for i in 1..=v.len() {
            assert_eq!(early_stop_check(&v[..i], 1), StopDecision::Continue);
        }
    }

    #[test]
    fn flat_then_worse_trace() {
        let v = [100.0, 100.0, 101.0, 102.0];
        assert_eq!(early_stop_check(&v[..2], 2), StopDecision::Continue);
        assert_eq!(early_stop_check(&v[..3], 2), StopDecision::Stop);
    }

    #[test]
    fn long_patience_never_stops() {
        assert_eq!(early_stop_check(&[5.0, 6.0, 7.0], 10), StopDecision::Continue);
    }
}
