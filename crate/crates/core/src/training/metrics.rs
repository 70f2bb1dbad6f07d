use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use serde_json::json;

use super::TrainError;

pub const METRICS_HEADER: &str = "epoch,train_mse,test_mse,penalty,active_gates,seconds";

/// One row of the training log. `penalty` and `active_gates` are absent for
/// models without gates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub train_mse: f64,
    pub test_mse: f64,
    pub penalty: Option<f64>,
    pub active_gates: Option<usize>,
    pub seconds: f64,
}

/// Loss terms of a single optimizer iteration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub mse: f64,
    /// Unweighted expected active-gate count.
    pub penalty: f64,
    /// `lambda * penalty` plus weight decay.
    pub regularization: f64,
    pub loss: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub epochs: Vec<EpochMetrics>,
    pub initial_active_gates: Option<usize>,
    pub total_gates: Option<usize>,
    pub lambda: Option<f64>,
    /// Filled only when iteration tracing is enabled.
    #[serde(skip)]
    pub trace: Vec<IterationRecord>,
}

impl Metrics {
    pub fn last(&self) -> Option<&EpochMetrics> {
        self.epochs.last()
    }

    /// CSV with one row per epoch. Without `timing` the `seconds` column is
    /// left empty so identical runs give identical bytes.
    pub fn to_csv(&self, timing: bool) -> String {
        let mut s = String::from(METRICS_HEADER);
        s.push('\n');
        for e in &self.epochs {
            let _ = write!(s, "{},{},{},", e.epoch, e.train_mse, e.test_mse);
            if let Some(p) = e.penalty {
                let _ = write!(s, "{p}");
            }
            s.push(',');
            if let Some(a) = e.active_gates {
                let _ = write!(s, "{a}");
            }
            s.push(',');
            if timing {
                let _ = write!(s, "{:.3}", e.seconds);
            }
            s.push('\n');
        }
        s
    }

    pub fn summary_json(&self) -> serde_json::Value {
        let last = self.last();
        let best = self
            .epochs
            .iter()
            .map(|e| e.test_mse)
            .fold(None, |b: Option<f64>, v| Some(b.map_or(v, |b| b.min(v))));
        json!({
            "epochs": self.epochs.len(),
            "lambda": self.lambda,
            "final_train_mse": last.map(|e| e.train_mse),
            "final_test_mse": last.map(|e| e.test_mse),
            "best_test_mse": best,
            "final_penalty": last.and_then(|e| e.penalty),
            "initial_active_gates": self.initial_active_gates,
            "final_active_gates": last.and_then(|e| e.active_gates),
            "total_gates": self.total_gates,
        })
    }
}

/// Parses a CSV written by [`Metrics::to_csv`].
pub fn parse_metrics_csv(text: &str) -> Result<Vec<EpochMetrics>, TrainError> {
    let bad = |line: usize, what: &str| TrainError::Format(format!("line {line}: {what}"));
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h.trim() == METRICS_HEADER => {}
        _ => return Err(bad(1, "missing metrics header")),
    }
    let mut out = Vec::new();
    for (i, line) in lines.enumerate() {
        let n = i + 2;
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 6 {
            return Err(bad(n, "expected 6 fields"));
        }
        let num = |s: &str| s.parse::<f64>().map_err(|_| bad(n, "bad number"));
        let opt = |s: &str| {
            if s.is_empty() {
                Ok(None)
            } else {
                num(s).map(Some)
            }
        };
        out.push(EpochMetrics {
            epoch: f[0].parse().map_err(|_| bad(n, "bad epoch"))?,
            train_mse: num(f[1])?,
            test_mse: num(f[2])?,
            penalty: opt(f[3])?,
            active_gates: opt(f[4])?.map(|v| v as usize),
            seconds: opt(f[5])?.unwrap_or(f64::NAN),
        });
    }
    Ok(out)
}
