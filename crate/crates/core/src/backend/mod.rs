//! Model invocation contract and its implementations.
//!
//! Two backends exist: [`ScriptedOracle`], which answers from a JSON script
//! keyed by frame content hash and needs no model at all, and (with the
//! `onnx` feature) [`OnnxBackend`], which runs exported ONNX graphs.

use std::fmt;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::frame::Frame;
use crate::tensor::Tensor;

mod oracle;
#[cfg(feature = "onnx")]
mod onnx;

#[cfg(feature = "onnx")]
pub use onnx::OnnxBackend;
pub use oracle::{OracleEntry, OracleScript, ScriptedOracle};

/// Side length of the detector's square input.
pub const DETECTOR_INPUT: usize = 640;
/// Side length of the classifiers' square input.
pub const CLASSIFIER_INPUT: usize = 224;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    BinaryClassify,
    Detect,
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Task::BinaryClassify => "binary-classify",
            Task::Detect => "detect",
        })
    }
}

/// The three model slots of the engine.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Primary,
    Secondary,
    Detector,
}

impl Stage {
    pub fn task(self) -> Task {
        match self {
            Stage::Primary | Stage::Secondary => Task::BinaryClassify,
            Stage::Detector => Task::Detect,
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Stage::Primary => "primary",
            Stage::Secondary => "secondary",
            Stage::Detector => "detector",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BackendKind {
    ScriptedOracle,
    PortableModel,
}

#[derive(Debug, Error)]
pub enum BackendError {
    #[error("failed to load {path}: {reason}")]
    ModelLoadFailure { path: PathBuf, reason: String },
    #[error("model for {expected} has incompatible shape: {detail}")]
    TaskShapeMismatch { expected: Task, detail: String },
    #[error("backend serves {actual}, asked to {requested}")]
    WrongTask { actual: Task, requested: Task },
    #[error("inference failed: {0}")]
    Failure(String),
}

/// What a backend sees for one frame: the frame itself (for content-keyed
/// oracles) and the preprocessed model input.
#[derive(Debug, Clone, Copy)]
pub struct BackendInput<'a> {
    pub frame: &'a Frame,
    pub tensor: &'a Tensor,
}

/// One detector output row in model (letterboxed 640×640) coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelDetection {
    pub bbox: [f32; 4],
    pub confidence: f32,
}

/// Model invocation contract. Implementations must tolerate concurrent calls.
pub trait InferenceBackend: Send + Sync + fmt::Debug {
    fn kind(&self) -> BackendKind;

    fn task(&self) -> Task;

    /// Probability in `[0, 1]` that the frame shows an app-blocking pop-up.
    fn infer_classify(&self, input: &BackendInput<'_>) -> Result<f32, BackendError>;

    /// Zero or more boxes in 640-space with confidences in `[0, 1]`.
    fn infer_detect(&self, input: &BackendInput<'_>) -> Result<Vec<ModelDetection>, BackendError>;
}

pub(crate) fn require_task(actual: Task, requested: Task) -> Result<(), BackendError> {
    if actual != requested {
        return Err(BackendError::WrongTask { actual, requested });
    }
    Ok(())
}

pub(crate) fn check_probability(p: f32) -> Result<f32, BackendError> {
    if !(0.0..=1.0).contains(&p) {
        return Err(BackendError::Failure(format!(
            "classifier output {p} is not a probability"
        )));
    }
    Ok(p)
}

/// Validate confidences and clip boxes to the model canvas.
pub(crate) fn sanitize_detections(
    rows: impl IntoIterator<Item = ModelDetection>,
) -> Result<Vec<ModelDetection>, BackendError> {
    let limit = DETECTOR_INPUT as f32;
    rows.into_iter()
        .map(|mut d| {
            check_probability(d.confidence).map_err(|_| {
                BackendError::Failure(format!("detection confidence {} outside [0, 1]", d.confidence))
            })?;
            if d.bbox.iter().any(|v| !v.is_finite()) {
                return Err(BackendError::Failure("non-finite box coordinate".into()));
            }
            for v in &mut d.bbox {
                *v = v.clamp(0.0, limit);
            }
            Ok(d)
        })
        .collect()
}

/// Where a backend comes from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum BackendSource {
    /// An exported ONNX graph.
    Model(PathBuf),
    /// A scripted-oracle JSON file.
    Script(PathBuf),
}

/// Load the backend serving `stage`, checking it against the stage's task.
pub fn load_backend(
    source: &BackendSource,
    stage: Stage,
) -> Result<Arc<dyn InferenceBackend>, BackendError> {
    match source {
        BackendSource::Script(path) => {
            let script = OracleScript::load(path)?;
            Ok(Arc::new(ScriptedOracle::new(Arc::new(script), stage)))
        }
        BackendSource::Model(path) => load_model(path, stage.task()),
    }
}

#[cfg(feature = "onnx")]
fn load_model(path: &Path, task: Task) -> Result<Arc<dyn InferenceBackend>, BackendError> {
    Ok(Arc::new(OnnxBackend::load(path, task)?))
}

#[cfg(not(feature = "onnx"))]
fn load_model(path: &Path, _task: Task) -> Result<Arc<dyn InferenceBackend>, BackendError> {
    Err(BackendError::ModelLoadFailure {
        path: path.to_path_buf(),
        reason: "built without the `onnx` feature".into(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stage_tasks() {
        assert_eq!(Stage::Primary.task(), Task::BinaryClassify);
        assert_eq!(Stage::Secondary.task(), Task::BinaryClassify);
        assert_eq!(Stage::Detector.task(), Task::Detect);
    }

    #[test]
    fn sanitize_clips_and_validates() {
        let rows = sanitize_detections([ModelDetection {
            bbox: [-5.0, 10.0, 700.0, 20.0],
            confidence: 0.5,
        }])
        .unwrap();
        assert_eq!(rows[0].bbox, [0.0, 10.0, 640.0, 20.0]);
        assert!(sanitize_detections([ModelDetection {
            bbox: [0.0; 4],
            confidence: 1.5,
        }])
        .is_err());
        assert!(check_probability(f32::NAN).is_err());
    }
}
