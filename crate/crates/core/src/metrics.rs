//! Micro (cell-wise) multi-label evaluation.
//!
//! Every `(sample, label)` cell is one binary decision. Accuracy, precision,
//! recall and F1 are computed from the pooled confusion counts and the
//! Hamming loss is the fraction of wrong cells, so `hamming = 1 − accuracy`.

use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::annotate::LabelMatrix;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum MetricsError {
    #[error("shape mismatch: predictions {pred:?} vs gold {gold:?}")]
    Dimension { pred: (usize, usize), gold: (usize, usize) },
    #[error("row ids of predictions and gold differ at row {0}")]
    RowMismatch(usize),
    #[error("{0} is undefined for these counts")]
    Undefined(&'static str),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

impl ConfusionCounts {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.tn + self.fn_
    }

    /// Tallies one cell.
    pub fn record(&mut self, pred: bool, gold: bool) {
        match (pred, gold) {
            (true, true) => self.tp += 1,
            (true, false) => self.fp += 1,
            (false, false) => self.tn += 1,
            (false, true) => self.fn_ += 1,
        }
    }
}

fn check_shapes(pred: &LabelMatrix, gold: &LabelMatrix) -> Result<(), MetricsError> {
    let (ps, gs) = ((pred.n_rows(), pred.n_labels()), (gold.n_rows(), gold.n_labels()));
    if ps != gs {
        return Err(MetricsError::Dimension { pred: ps, gold: gs });
    }
    if let Some(r) = pred.row_ids().iter().zip(gold.row_ids()).position(|(a, b)| a != b) {
        return Err(MetricsError::RowMismatch(r));
    }
    Ok(())
}

pub fn confusion(pred: &LabelMatrix, gold: &LabelMatrix) -> Result<ConfusionCounts, MetricsError> {
    check_shapes(pred, gold)?;
    let total = (pred.n_rows() * pred.n_labels()) as u64;
    let pred_pos = pred.nnz() as u64;
    let gold_pos = gold.nnz() as u64;
    let tp = pred.cells().filter(|&(r, c)| gold.get(r, c)).count() as u64;
    let fp = pred_pos - tp;
    let fn_ = gold_pos - tp;
    Ok(ConfusionCounts {
        tp,
        fp,
        fn_,
        tn: total - tp - fp - fn_,
    })
}

fn ratio(num: u64, den: u64, name: &'static str) -> Result<f64, MetricsError> {
    if den == 0 {
        Err(MetricsError::Undefined(name))
    } else {
        Ok(num as f64 / den as f64)
    }
}

pub fn accuracy(c: &ConfusionCounts) -> Result<f64, MetricsError> {
    ratio(c.tp + c.tn, c.total(), "accuracy")
}

pub fn recall(c: &ConfusionCounts) -> Result<f64, MetricsError> {
    ratio(c.tp, c.tp + c.fn_, "recall")
}

pub fn precision(c: &ConfusionCounts) -> Result<f64, MetricsError> {
    ratio(c.tp, c.tp + c.fp, "precision")
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct F1 {
    pub value: f64,
    /// Set when precision and recall are both zero and F1 is taken as 0.
    pub zero_convention: bool,
}

pub fn f1(c: &ConfusionCounts) -> Result<F1, MetricsError> {
    let p = precision(c).map_err(|_| MetricsError::Undefined("f1"))?;
    let r = recall(c).map_err(|_| MetricsError::Undefined("f1"))?;
    if p + r == 0.0 {
        return Ok(F1 {
            value: 0.0,
            zero_convention: true,
        });
    }
    Ok(F1 {
        value: 2.0 * p * r / (p + r),
        zero_convention: false,
    })
}

pub fn hamming_loss(pred: &LabelMatrix, gold: &LabelMatrix) -> Result<f64, MetricsError> {
    let c = confusion(pred, gold)?;
    hamming_from_counts(&c)
}

pub fn hamming_from_counts(c: &ConfusionCounts) -> Result<f64, MetricsError> {
    ratio(c.fp + c.fn_, c.total(), "hamming_loss")
}

/// The five scores; `None` marks an undefined metric, explained in `flags`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub accuracy: Option<f64>,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub f1: Option<f64>,
    pub hamming_loss: Option<f64>,
    pub counts: ConfusionCounts,
    pub flags: Vec<String>,
}

impl MetricReport {
    pub fn from_counts(c: ConfusionCounts) -> Self {
        let mut flags = Vec::new();
        let keep = |r: Result<f64, MetricsError>, flags: &mut Vec<String>| match r {
            Ok(v) => Some(v),
            Err(e) => {
                flags.push(alloc::format!("{e}"));
                None
            }
        };
        let accuracy = keep(accuracy(&c), &mut flags);
        let precision = keep(precision(&c), &mut flags);
        let recall = keep(recall(&c), &mut flags);
        let f1 = match f1(&c) {
            Ok(f) => {
                if f.zero_convention {
                    flags.push("f1 set to 0 because precision and recall are both 0".into());
                }
                Some(f.value)
            }
            Err(e) => keep(Err(e), &mut flags),
        };
        let hamming_loss = keep(hamming_from_counts(&c), &mut flags);
        MetricReport {
            accuracy,
            precision,
            recall,
            f1,
            hamming_loss,
            counts: c,
            flags,
        }
    }

    pub fn evaluate(pred: &LabelMatrix, gold: &LabelMatrix) -> Result<Self, MetricsError> {
        Ok(Self::from_counts(confusion(pred, gold)?))
    }
}
