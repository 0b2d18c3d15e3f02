//! Confusion-matrix evaluation and mean intersection-over-union.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::synth::NUM_CLASSES;

/// Rows are ground truth, columns are predictions.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct ConfusionMatrix {
    pub counts: [[u64; NUM_CLASSES]; NUM_CLASSES],
}

impl ConfusionMatrix {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn merge(&mut self, other: &ConfusionMatrix) {
        for (a, b) in self.counts.iter_mut().flatten().zip(other.counts.iter().flatten()) {
            *a += b;
        }
    }
}

/// Adds `pred` against `truth`, skipping pixels whose true label is 0.
pub fn confusion_update(cm: &mut ConfusionMatrix, pred: &[u8], truth: &[u8]) -> Result<()> {
    if pred.len() != truth.len() {
        return Err(Error::Shape {
            axis: "label map length",
            expected: truth.len(),
            actual: pred.len(),
        });
    }
    for (i, (&p, &t)) in pred.iter().zip(truth).enumerate() {
        if p as usize >= NUM_CLASSES || t as usize >= NUM_CLASSES {
            return Err(Error::Invalid(format!("class value outside 0..=5 at pixel {i}")));
        }
        if t != 0 {
            cm.counts[t as usize][p as usize] += 1;
        }
    }
    Ok(())
}

/// `TP/(TP+FP+FN)` per class; `None` where the denominator is zero.
/// Class 0 is always `None`.
pub fn iou_per_class(cm: &ConfusionMatrix) -> [Option<f64>; NUM_CLASSES] {
    let mut out = [None; NUM_CLASSES];
    for (c, slot) in out.iter_mut().enumerate().skip(1) {
        let tp = cm.counts[c][c];
        let fn_: u64 = cm.counts[c].iter().sum::<u64>() - tp;
        let fp: u64 = (0..NUM_CLASSES).map(|t| cm.counts[t][c]).sum::<u64>() - tp;
        let denom = tp + fp + fn_;
        if denom > 0 {
            *slot = Some(tp as f64 / denom as f64);
        }
    }
    out
}

/// Mean IoU over the non-exempt classes 1..=5; `None` if all are exempt.
pub fn miou(cm: &ConfusionMatrix) -> Option<f64> {
    let ious: Vec<f64> = iou_per_class(cm).into_iter().flatten().collect();
    (!ious.is_empty()).then(|| ious.iter().sum::<f64>() / ious.len() as f64)
}
