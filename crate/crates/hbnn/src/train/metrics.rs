//! Per-epoch training metrics and weight-flip statistics.

use crate::error::{Error, Result};

/// One logging-interval row. `per_layer_flip_rate` is cumulative (against
/// the pre-training snapshot); the per-epoch rates are carried alongside for
/// the summary output. Selected indices are reported 1-based.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRecord {
    pub step: u64,
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub test_accuracy: f64,
    pub per_layer_flip_rate: Vec<f64>,
    pub per_layer_epoch_flip_rate: Vec<f64>,
    pub selected_indices: Vec<usize>,
}

impl MetricsRecord {
    /// `step,epoch,lr,loss,acc,flip_l1..flip_lK,sel_l1..sel_lK`
    pub fn csv_header(num_binary_layers: usize) -> String {
        let mut cols = vec![
            "step".to_string(),
            "epoch".to_string(),
            "lr".to_string(),
            "loss".to_string(),
            "acc".to_string(),
        ];
        for i in 1..=num_binary_layers {
            cols.push(format!("flip_l{i}"));
        }
        for i in 1..=num_binary_layers {
            cols.push(format!("sel_l{i}"));
        }
        cols.join(",")
    }

    pub fn csv_row(&self) -> String {
        let mut cols = vec![
            self.step.to_string(),
            self.epoch.to_string(),
            format!("{}", self.lr),
            format!("{}", self.train_loss),
            format!("{}", self.test_accuracy),
        ];
        for f in &self.per_layer_flip_rate {
            cols.push(format!("{f}"));
        }
        for s in &self.selected_indices {
            cols.push(s.to_string());
        }
        cols.join(",")
    }
}

/// Fraction of coordinates whose sign differs, per layer.
pub fn flip_rate(prev: &[Vec<i8>], cur: &[Vec<i8>]) -> Result<Vec<f64>> {
    if prev.len() != cur.len() {
        return Err(Error::DimensionMismatch {
            expected: prev.len(),
            got: cur.len(),
        });
    }
    prev.iter()
        .zip(cur)
        .map(|(p, c)| {
            if p.len() != c.len() {
                return Err(Error::DimensionMismatch {
                    expected: p.len(),
                    got: c.len(),
                });
            }
            let flips = p.iter().zip(c).filter(|(a, b)| a != b).count();
            Ok(flips as f64 / p.len().max(1) as f64)
        })
        .collect()
}
