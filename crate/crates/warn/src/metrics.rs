//! Per-epoch metrics CSV. Wall-clock time goes to a separate file so that
//! the metrics of two identically seeded runs compare equal byte for byte.

use std::fs::File;
use std::path::Path;
use std::time::Duration;

use warn_core::train::EpochMetrics;

use crate::error::{Result, WarnError};

pub const METRICS_FILE: &str = "metrics.csv";
pub const TIMING_FILE: &str = "timing.csv";

/// Header for a model with `modules` attention modules; `None` for a plain
/// base network, which has no gate columns.
pub fn header(modules: Option<usize>) -> Vec<String> {
    let mut h: Vec<String> = ["epoch", "lr", "train_loss", "train_acc", "val_acc", "reg_loss"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    if let Some(n) = modules {
        h.push("gate_net".into());
        h.extend((0..n).map(|i| format!("gate_module{}", i)));
    }
    h
}

pub fn row(m: &EpochMetrics) -> Vec<String> {
    let mut r = vec![
        m.epoch.to_string(),
        format!("{:e}", m.lr),
        format!("{:.9e}", m.train_loss),
        format!("{:.6}", m.train_acc),
        format!("{:.6}", m.val_acc),
        format!("{:.9e}", m.reg_loss),
    ];
    r.extend(m.gates.iter().map(|g| format!("{:.6}", g)));
    r
}

pub struct MetricsWriter {
    metrics: csv::Writer<File>,
    timing: csv::Writer<File>,
}

fn create(path: &Path) -> Result<csv::Writer<File>> {
    let f = File::create(path).map_err(|e| WarnError::io(path, e))?;
    Ok(csv::Writer::from_writer(f))
}

impl MetricsWriter {
    pub fn create(dir: &Path, modules: Option<usize>) -> Result<Self> {
        std::fs::create_dir_all(dir).map_err(|e| WarnError::io(dir, e))?;
        let mut metrics = create(&dir.join(METRICS_FILE))?;
        metrics.write_record(header(modules))?;
        metrics.flush().map_err(|e| WarnError::io(dir.join(METRICS_FILE), e))?;
        let mut timing = create(&dir.join(TIMING_FILE))?;
        timing.write_record(["epoch", "seconds"])?;
        Ok(Self { metrics, timing })
    }

    pub fn append(&mut self, m: &EpochMetrics, elapsed: Duration) -> Result<()> {
        self.metrics.write_record(row(m))?;
        self.metrics.flush().map_err(|e| WarnError::io(METRICS_FILE, e))?;
        self.timing.write_record([m.epoch.to_string(), format!("{:.3}", elapsed.as_secs_f64())])?;
        self.timing.flush().map_err(|e| WarnError::io(TIMING_FILE, e))?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn columns_follow_the_gate_count() {
        assert_eq!(header(None).len(), 6);
        assert_eq!(header(Some(2))[6..], ["gate_net", "gate_module0", "gate_module1"]);
        let m = EpochMetrics {
            epoch: 2,
            lr: 0.01,
            train_loss: 0.5,
            train_acc: 0.75,
            val_acc: 0.5,
            reg_loss: 0.0,
            gates: vec![0.5, 0.25, 0.25],
        };
        assert_eq!(row(&m).len(), header(Some(2)).len());
        assert_eq!(row(&m)[..2], ["2", "1e-2"]);
    }

    #[test]
    fn writer_produces_header_and_rows() {
        let dir = tempfile::tempdir().unwrap();
        let mut w = MetricsWriter::create(dir.path(), None).unwrap();
        let m = EpochMetrics {
            epoch: 0,
            lr: 0.1,
            train_loss: 1.0,
            train_acc: 0.5,
            val_acc: 0.5,
            reg_loss: 0.0,
            gates: vec![],
        };
        w.append(&m, Duration::from_millis(1500)).unwrap();
        drop(w);
        let text = std::fs::read_to_string(dir.path().join(METRICS_FILE)).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "epoch,lr,train_loss,train_acc,val_acc,reg_loss");
        assert_eq!(lines.len(), 2);
        let timing = std::fs::read_to_string(dir.path().join(TIMING_FILE)).unwrap();
        assert_eq!(timing.lines().nth(1), Some("0,1.500"));
    }
}
