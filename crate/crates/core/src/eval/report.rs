use serde::{Deserialize, Serialize};

use super::annotation::RecordingAnnotation;
use super::classification::{classification_metrics, ClassificationCounts};
use super::detection::summarize_detections;
use super::end_to_end::{pair_sessions, score_recording, EndToEndCounts};
use super::EvalError;
use crate::classifier::Label;
use crate::detector::Detection;
use crate::engine::{EventNote, LogEvent};
use crate::geometry::BoundingBox;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AppBreakdown {
    pub app_id: String,
    pub classification: ClassificationCounts,
    pub end_to_end: EndToEndCounts,
    pub fully_resolved: bool,
}

/// Every metric computed from one event log. All values lie in [0, 1].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub det_precision: f64,
    pub det_recall: f64,
    pub box_ap: f64,
    pub map50: f64,
    pub map50_95: f64,
    pub e2e_precision: f64,
    pub e2e_recall: f64,
    pub e2e_f1: f64,
    pub apps_fully_resolved_fraction: f64,
    pub classification: ClassificationCounts,
    pub detection_frames: usize,
    pub end_to_end: EndToEndCounts,
    pub per_app: Vec<AppBreakdown>,
}

/// Evaluate an engine event log against ground truth.
///
/// Classification counts cover every frame that received a verdict.
/// Detection metrics cover frames where the detector ran, comparing the
/// selected box (if any) with the annotated close button (if any).
pub fn evaluate_log(
    events: &[LogEvent],
    annotations: &[RecordingAnnotation],
) -> Result<EvaluationReport, EvalError> {
    let mut classification = ClassificationCounts::default();
    let mut e2e = EndToEndCounts::default();
    let mut predictions: Vec<Vec<Detection<f64>>> = Vec::new();
    let mut truth: Vec<Vec<BoundingBox<f64>>> = Vec::new();
    let mut per_app = Vec::new();

    for (rec, evs) in pair_sessions(events, annotations)? {
        let counts = score_recording(rec, &evs)?;
        let frames = rec.by_frame();
        let mut app_cls = ClassificationCounts::default();
        for ev in &evs {
            let Some(verdict) = ev.verdict else { continue };
            // score_recording has already checked coverage
            let ann = frames[&ev.frame_id];
            let predicted = verdict.label == Label::Popup;
            app_cls.record(predicted, ann.is_popup());
            if predicted && ev.note != Some(EventNote::BackendFailure) {
                predictions.push(ev.detection.into_iter().collect());
                truth.push(ann.close_button.into_iter().collect());
            }
        }
        classification.tp += app_cls.tp;
        classification.fp += app_cls.fp;
        classification.fn_ += app_cls.fn_;
        classification.tn += app_cls.tn;
        e2e.add(&counts);
        per_app.push(AppBreakdown {
            app_id: rec.app_id.clone(),
            classification: app_cls,
            end_to_end: counts,
            fully_resolved: counts.apps_fully_resolved == 1,
        });
    }

    let cls = classification_metrics::<f64>(&classification);
    let det = summarize_detections(&predictions, &truth)?;
    let e2e_m = e2e.metrics();
    Ok(EvaluationReport {
        precision: cls.precision,
        recall: cls.recall,
        f1: cls.f1,
        det_precision: det.precision,
        det_recall: det.recall,
        box_ap: det.box_ap,
        map50: det.map50,
        map50_95: det.map50_95,
        e2e_precision: e2e_m.precision,
        e2e_recall: e2e_m.recall,
        e2e_f1: e2e_m.f1,
        apps_fully_resolved_fraction: e2e.apps_fully_resolved_fraction(),
        classification,
        detection_frames: predictions.len(),
        end_to_end: e2e,
        per_app,
    })
}
