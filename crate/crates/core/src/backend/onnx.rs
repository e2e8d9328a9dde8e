use std::fmt;
use std::path::Path;
use std::sync::Arc;

use tract_onnx::prelude::{
    tvec, DatumType, Framework, InferenceFact, InferenceModelExt, IntoRunnable, TDim,
    Tensor as TractTensor, TypedRunnableModel,
};

use tract_onnx::tract_hir::infer::Factoid;
use tract_onnx::tract_hir::internal::DimLike;

use super::{
    check_probability, require_task, sanitize_detections, BackendError, BackendInput,
    BackendKind, InferenceBackend, ModelDetection, Task, CLASSIFIER_INPUT, DETECTOR_INPUT,
};

/// Runs an exported ONNX graph.
///
/// Classifier graphs take `float32[1,3,224,224]` and emit one post-sigmoid
/// probability (`float32[1,1]`). Detector graphs take `float32[1,3,640,640]`
/// and emit post-NMS rows `(x1, y1, x2, y2, confidence, class)` as
/// `float32[N,6]` (a leading batch axis of 1 is accepted).
pub struct OnnxBackend {
    task: Task,
    side: usize,
    plan: Arc<TypedRunnableModel>,
}

impl fmt::Debug for OnnxBackend {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("OnnxBackend")
            .field("task", &self.task)
            .field("side", &self.side)
            .finish_non_exhaustive()
    }
}

fn dim(d: &TDim) -> Option<usize> {
    d.to_usize().ok()
}

fn check_output_shape(task: Task, shape: &[TDim]) -> Result<(), String> {
    let concrete: Vec<Option<usize>> = shape.iter().map(dim).collect();
    match task {
        Task::BinaryClassify => {
            let ok = !concrete.is_empty() && concrete.iter().all(|d| *d == Some(1));
            if ok {
                Ok(())
            } else {
                Err(format!("classifier output must hold one value, got {shape:?}"))
            }
        }
        Task::Detect => {
            let ok = matches!(concrete.as_slice(), [_, Some(6)] | [Some(1), _, Some(6)]);
            if ok {
                Ok(())
            } else {
                Err(format!("detector output must be [N,6], got {shape:?}"))
            }
        }
    }
}

impl OnnxBackend {
    pub fn load(path: &Path, task: Task) -> Result<Self, BackendError> {
        let load_err = |reason: String| BackendError::ModelLoadFailure {
            path: path.to_path_buf(),
            reason,
        };
        let shape_err = |detail: String| BackendError::TaskShapeMismatch {
            expected: task,
            detail,
        };
        let side = match task {
            Task::BinaryClassify => CLASSIFIER_INPUT,
            Task::Detect => DETECTOR_INPUT,
        };
        let model = tract_onnx::onnx()
            .model_for_path(path)
            .map_err(|e| load_err(format!("{e:#}")))?;
        if model.input_outlets().map(|o| o.len()).unwrap_or(0) != 1 {
            return Err(shape_err("graph must have exactly one input".into()));
        }
        let declared = model
            .input_fact(0)
            .map_err(|e| load_err(format!("{e:#}")))?;
        let dims: Vec<Option<usize>> = declared
            .shape
            .dims()
            .map(|d| d.concretize().and_then(|d| d.to_usize().ok()))
            .collect();
        let want = [1, 3, side, side];
        let conflict = !declared.shape.is_open()
            && !dims.is_empty()
            && (dims.len() != 4 || dims.iter().zip(want).any(|(d, w)| d.is_some_and(|d| d != w)));
        if conflict {
            return Err(shape_err(format!(
                "declared input {dims:?} does not fit float32[1,3,{side},{side}]"
            )));
        }
        let fact = InferenceFact::dt_shape(DatumType::F32, want);
        let typed = model
            .with_input_fact(0, fact)
            .and_then(|m| m.into_typed())
            .map_err(|e| shape_err(format!("input float32[1,3,{side},{side}] rejected: {e:#}")))?;
        let out = typed
            .output_fact(0)
            .map_err(|e| shape_err(format!("no output: {e:#}")))?;
        if out.datum_type != DatumType::F32 {
            return Err(shape_err(format!("output type {:?}, expected f32", out.datum_type)));
        }
        check_output_shape(task, out.shape.dims()).map_err(shape_err)?;
        let plan = typed
            .into_optimized()
            .and_then(|m| m.into_runnable())
            .map_err(|e| load_err(format!("{e:#}")))?;
        Ok(Self { task, side, plan })
    }

    fn run(&self, input: &BackendInput<'_>) -> Result<Vec<f32>, BackendError> {
        let shape = input.tensor.shape();
        if shape != [3, self.side, self.side] {
            return Err(BackendError::Failure(format!(
                "input tensor {shape:?}, model expects [3, {0}, {0}]",
                self.side
            )));
        }
        let tensor =
            TractTensor::from_shape::<f32>(&[1, 3, self.side, self.side], input.tensor.data())
                .map_err(|e| BackendError::Failure(format!("{e:#}")))?;
        let outputs = self
            .plan
            .run(tvec!(tensor.into()))
            .map_err(|e| BackendError::Failure(format!("{e:#}")))?;
        let view = outputs[0]
            .to_plain_array_view::<f32>()
            .map_err(|e| BackendError::Failure(format!("{e:#}")))?;
        Ok(view.iter().copied().collect())
    }
}

impl InferenceBackend for OnnxBackend {
    fn kind(&self) -> BackendKind {
        BackendKind::PortableModel
    }

    fn task(&self) -> Task {
        self.task
    }

    fn infer_classify(&self, input: &BackendInput<'_>) -> Result<f32, BackendError> {
        require_task(self.task, Task::BinaryClassify)?;
        let out = self.run(input)?;
        match out.as_slice() {
            [p] => check_probability(*p),
            other => Err(BackendError::Failure(format!(
                "classifier produced {} values",
                other.len()
            ))),
        }
    }

    fn infer_detect(&self, input: &BackendInput<'_>) -> Result<Vec<ModelDetection>, BackendError> {
        require_task(self.task, Task::Detect)?;
        let out = self.run(input)?;
        if out.len() % 6 != 0 {
            return Err(BackendError::Failure(format!(
                "detector produced {} values, not rows of 6",
                out.len()
            )));
        }
        sanitize_detections(out.chunks_exact(6).map(|r| ModelDetection {
            bbox: [r[0], r[1], r[2], r[3]],
            confidence: r[4],
        }))
    }
}
