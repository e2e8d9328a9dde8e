//! Detection matching, average precision and mAP for the single
//! close-button class.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use super::EvalError;
use crate::detector::Detection;
use crate::geometry::{iou, BoundingBox};
use crate::scalar::Scalar;

/// One ranked prediction after matching.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RankedPrediction<T> {
    pub confidence: T,
    pub true_positive: bool,
}

/// Predictions ranked by descending confidence with their match outcome, and
/// the number of ground-truth boxes they compete for.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionMatchSet<T> {
    ranked: Vec<RankedPrediction<T>>,
    ground_truth: usize,
}

fn by_confidence_desc<T: Scalar>(a: &T, b: &T) -> Ordering {
    b.partial_cmp(a).unwrap_or(Ordering::Equal)
}

impl<T: Scalar> DetectionMatchSet<T> {
    /// Build from match outcomes in any order. The sort is stable, so equal
    /// confidences keep their given order.
    pub fn new(
        mut ranked: Vec<RankedPrediction<T>>,
        ground_truth: usize,
    ) -> Result<Self, EvalError> {
        ranked.sort_by(|a, b| by_confidence_desc(&a.confidence, &b.confidence));
        let set = Self {
            ranked,
            ground_truth,
        };
        if set.true_positives() > ground_truth {
            return Err(EvalError::TooManyTruePositives {
                true_positives: set.true_positives(),
                ground_truth,
            });
        }
        Ok(set)
    }

    pub fn ranked(&self) -> &[RankedPrediction<T>] {
        &self.ranked
    }

    pub fn ground_truth(&self) -> usize {
        self.ground_truth
    }

    pub fn true_positives(&self) -> usize {
        self.ranked.iter().filter(|r| r.true_positive).count()
    }

    pub fn false_positives(&self) -> usize {
        self.ranked.len() - self.true_positives()
    }

    pub fn false_negatives(&self) -> usize {
        self.ground_truth - self.true_positives()
    }

    /// TP / (TP + FP); 0 without predictions.
    pub fn precision(&self) -> T {
        if self.ranked.is_empty() {
            T::zero()
        } else {
            T::ratio(self.true_positives(), self.ranked.len())
        }
    }

    /// TP / (TP + FN); 0 without ground truth.
    pub fn recall(&self) -> T {
        if self.ground_truth == 0 {
            T::zero()
        } else {
            T::ratio(self.true_positives(), self.ground_truth)
        }
    }
}

/// Greedy one-to-one matching per frame. Within a frame, predictions are
/// visited by descending confidence; each claims the unmatched ground-truth
/// box it overlaps most, provided that IoU reaches `iou_threshold`. Anything
/// else is a false positive; unclaimed boxes are false negatives.
pub fn match_detections<T: Scalar>(
    predictions: &[Vec<Detection<T>>],
    ground_truth: &[Vec<BoundingBox<T>>],
    iou_threshold: T,
) -> Result<DetectionMatchSet<T>, EvalError> {
    if predictions.len() != ground_truth.len() {
        return Err(EvalError::FrameCoverageMismatch(format!(
            "{} prediction frames vs {} ground-truth frames",
            predictions.len(),
            ground_truth.len()
        )));
    }
    let mut ranked = Vec::new();
    let mut total_gt = 0;
    for (preds, gts) in predictions.iter().zip(ground_truth) {
        total_gt += gts.len();
        let mut order: Vec<&Detection<T>> = preds.iter().collect();
        order.sort_by(|a, b| by_confidence_desc(&a.confidence, &b.confidence));
        let mut claimed = vec![false; gts.len()];
        for p in order {
            let best = gts
                .iter()
                .enumerate()
                .filter(|(i, _)| !claimed[*i])
                .map(|(i, g)| (i, iou(&p.bbox, g)))
                .filter(|(_, o)| *o >= iou_threshold)
                // first maximum wins on ties
                .fold(None::<(usize, T)>, |acc, cur| match acc {
                    Some(a) if a.1 >= cur.1 => Some(a),
                    _ => Some(cur),
                });
            if let Some((i, _)) = best {
                claimed[i] = true;
            }
            ranked.push(RankedPrediction {
                confidence: p.confidence,
                true_positive: best.is_some(),
            });
        }
    }
    DetectionMatchSet::new(ranked, total_gt)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ApMode {
    /// Sum of precision × change in recall down the ranked list.
    RiemannSum,
    /// Same sum after replacing each precision with the best precision at
    /// any deeper rank.
    MonotoneEnvelope,
}

/// Average precision of a ranked match set.
pub fn average_precision<T: Scalar>(
    matches: &DetectionMatchSet<T>,
    mode: ApMode,
) -> Result<T, EvalError> {
    let g = matches.ground_truth();
    if g == 0 {
        return Err(EvalError::EmptyGroundTruth);
    }
    let mut precision = Vec::with_capacity(matches.ranked().len());
    let mut recall = Vec::with_capacity(matches.ranked().len());
    let mut tp = 0;
    for (k, r) in matches.ranked().iter().enumerate() {
        tp += r.true_positive as usize;
        precision.push(T::ratio(tp, k + 1));
        recall.push(T::ratio(tp, g));
    }
    if mode == ApMode::MonotoneEnvelope {
        for k in (0..precision.len().saturating_sub(1)).rev() {
            precision[k] = precision[k].max_of(precision[k + 1]);
        }
    }
    let mut ap = T::zero();
    let mut prev_recall = T::zero();
    for (p, r) in precision.into_iter().zip(recall) {
        ap = ap + p * (r - prev_recall);
        prev_recall = r;
    }
    Ok(ap)
}

/// IoU thresholds 0.50, 0.55, …, 0.95, built exactly in `T`.
pub fn coco_iou_thresholds<T: Scalar>() -> [T; 10] {
    std::array::from_fn(|k| T::ratio(50 + 5 * k, 100))
}

/// mAP at one IoU threshold. With a single class this is that class's AP
/// (monotone-envelope interpolation).
pub fn map_at<T: Scalar>(
    predictions: &[Vec<Detection<T>>],
    ground_truth: &[Vec<BoundingBox<T>>],
    iou_threshold: T,
) -> Result<T, EvalError> {
    let m = match_detections(predictions, ground_truth, iou_threshold)?;
    average_precision(&m, ApMode::MonotoneEnvelope)
}

/// mAP@50-95: the mean of [`map_at`] over the ten COCO thresholds.
pub fn map_range<T: Scalar>(
    predictions: &[Vec<Detection<T>>],
    ground_truth: &[Vec<BoundingBox<T>>],
) -> Result<T, EvalError> {
    let mut sum = T::zero();
    for t in coco_iou_thresholds::<T>() {
        sum = sum + map_at(predictions, ground_truth, t)?;
    }
    Ok(sum / T::from_count(10))
}

/// Detection metrics of one corpus at IoU 0.5 plus the mAP pair.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectionSummary<T> {
    pub precision: T,
    pub recall: T,
    pub box_ap: T,
    pub map50: T,
    pub map50_95: T,
    pub true_positives: usize,
    pub false_positives: usize,
    pub false_negatives: usize,
}

/// All detection metrics; AP-style values are 0 when there is no ground
/// truth.
pub fn summarize_detections<T: Scalar>(
    predictions: &[Vec<Detection<T>>],
    ground_truth: &[Vec<BoundingBox<T>>],
) -> Result<DetectionSummary<T>, EvalError> {
    let half = T::ratio(1, 2);
    let m = match_detections(predictions, ground_truth, half)?;
    let or_zero = |r: Result<T, EvalError>| match r {
        Err(EvalError::EmptyGroundTruth) => Ok(T::zero()),
        other => other,
    };
    Ok(DetectionSummary {
        precision: m.precision(),
        recall: m.recall(),
        box_ap: or_zero(average_precision(&m, ApMode::RiemannSum))?,
        map50: or_zero(average_precision(&m, ApMode::MonotoneEnvelope))?,
        map50_95: or_zero(map_range(predictions, ground_truth))?,
        true_positives: m.true_positives(),
        false_positives: m.false_positives(),
        false_negatives: m.false_negatives(),
    })
}
