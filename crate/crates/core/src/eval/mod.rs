//! Metrics over annotated corpora and engine event logs.

pub mod annotation;
pub mod classification;
pub mod detection;
pub mod end_to_end;
pub mod report;

use thiserror::Error;

pub use annotation::{load_annotations, parse_annotations, FrameAnnotation, RecordingAnnotation, TruthLabel};
pub use classification::{classification_metrics, f1_score, precision_recall, safe_ratio, ClassificationCounts, PrecisionRecall};
pub use detection::{
    average_precision, coco_iou_thresholds, map_at, map_range, match_detections, summarize_detections, ApMode,
    DetectionMatchSet, DetectionSummary, RankedPrediction,
};
pub use end_to_end::{end_to_end_metrics, EndToEndCounts};
pub use report::{evaluate_log, AppBreakdown, EvaluationReport};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum EvalError {
    #[error("invalid annotation: {0}")]
    InvalidAnnotation(String),
    #[error("log and annotations disagree: {0}")]
    FrameCoverageMismatch(String),
    #[error("average precision needs at least one ground-truth box")]
    EmptyGroundTruth,
    #[error("{true_positives} true positives exceed {ground_truth} ground-truth boxes")]
    TooManyTruePositives {
        true_positives: usize,
        ground_truth: usize,
    },
}
