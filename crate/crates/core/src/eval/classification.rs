use serde::{Deserialize, Serialize};

use crate::scalar::Scalar;

/// Confusion counts for the binary pop-up / app-content decision.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassificationCounts {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub tn: u64,
}

impl ClassificationCounts {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.fn_ + self.tn
    }

    pub fn record(&mut self, predicted_popup: bool, actual_popup: bool) {
        match (predicted_popup, actual_popup) {
            (true, true) => self.tp += 1,
            (true, false) => self.fp += 1,
            (false, true) => self.fn_ += 1,
            (false, false) => self.tn += 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrecisionRecall<T> {
    pub precision: T,
    pub recall: T,
    pub f1: T,
}

/// `num / den`, or 0 when `den` is 0.
pub fn safe_ratio<T: Scalar>(num: u64, den: u64) -> T {
    if den == 0 {
        T::zero()
    } else {
        T::ratio(num as usize, den as usize)
    }
}

/// Harmonic mean; 0 when both inputs are 0.
pub fn f1_score<T: Scalar>(precision: T, recall: T) -> T {
    let sum = precision + recall;
    if sum <= T::zero() {
        T::zero()
    } else {
        T::two() * precision * recall / sum
    }
}

pub fn precision_recall<T: Scalar>(correct: u64, flagged: u64, actual: u64) -> PrecisionRecall<T> {
    let precision = safe_ratio(correct, flagged);
    let recall = safe_ratio(correct, actual);
    PrecisionRecall {
        precision,
        recall,
        f1: f1_score(precision, recall),
    }
}

pub fn classification_metrics<T: Scalar>(counts: &ClassificationCounts) -> PrecisionRecall<T> {
    precision_recall(counts.tp, counts.tp + counts.fp, counts.tp + counts.fn_)
}
