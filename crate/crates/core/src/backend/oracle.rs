use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::{
    check_probability, require_task, sanitize_detections, BackendError, BackendInput,
    BackendKind, InferenceBackend, ModelDetection, Stage, Task,
};

/// Scripted outputs for one frame. Missing fields fall back to the script's
/// defaults, then to probability 0 and no detections.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct OracleEntry {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub primary: Option<f32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub secondary: Option<f32>,
    /// Rows of `[x1, y1, x2, y2, confidence]` in 640-space.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub detections: Option<Vec<[f32; 5]>>,
    /// Stages that report a backend failure for this frame.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub fail: Vec<Stage>,
}

/// `{"defaults": {...}, "frames": {"<sha256 of pixels>": {...}}}`
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct OracleScript {
    #[serde(default)]
    pub defaults: OracleEntry,
    #[serde(default)]
    pub frames: BTreeMap<String, OracleEntry>,
}

impl OracleScript {
    pub fn load(path: &Path) -> Result<Self, BackendError> {
        let fail = |reason: String| BackendError::ModelLoadFailure {
            path: path.to_path_buf(),
            reason,
        };
        let text = fs::read_to_string(path).map_err(|e| fail(e.to_string()))?;
        Self::from_json(&text).map_err(|e| match e {
            BackendError::ModelLoadFailure { reason, .. } => fail(reason),
            other => other,
        })
    }

    pub fn from_json(text: &str) -> Result<Self, BackendError> {
        let mut script: Self =
            serde_json::from_str(text).map_err(|e| BackendError::ModelLoadFailure {
                path: "<inline>".into(),
                reason: e.to_string(),
            })?;
        script.frames = std::mem::take(&mut script.frames)
            .into_iter()
            .map(|(k, v)| (k.to_ascii_lowercase(), v))
            .collect();
        script.validate()?;
        Ok(script)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("script serializes")
    }

    fn validate(&self) -> Result<(), BackendError> {
        let bad = |key: &str, why: String| BackendError::ModelLoadFailure {
            path: "<script>".into(),
            reason: format!("entry {key}: {why}"),
        };
        for (key, e) in std::iter::once(("defaults", &self.defaults))
            .chain(self.frames.iter().map(|(k, v)| (k.as_str(), v)))
        {
            for p in [e.primary, e.secondary].into_iter().flatten() {
                if !(0.0..=1.0).contains(&p) {
                    return Err(bad(key, format!("probability {p} outside [0, 1]")));
                }
            }
            for row in e.detections.iter().flatten() {
                if !(0.0..=1.0).contains(&row[4]) || row.iter().any(|v| !v.is_finite()) {
                    return Err(bad(key, format!("invalid detection row {row:?}")));
                }
            }
        }
        Ok(())
    }

    fn entry(&self, key: &str) -> Option<&OracleEntry> {
        self.frames.get(key)
    }
}

/// Deterministic stand-in for a trained model, answering from an
/// [`OracleScript`] by frame content hash.
#[derive(Debug)]
pub struct ScriptedOracle {
    script: Arc<OracleScript>,
    stage: Stage,
    calls: AtomicU64,
}

impl ScriptedOracle {
    pub fn new(script: Arc<OracleScript>, stage: Stage) -> Self {
        Self {
            script,
            stage,
            calls: AtomicU64::new(0),
        }
    }

    pub fn stage(&self) -> Stage {
        self.stage
    }

    /// Number of inference calls served so far.
    pub fn invocations(&self) -> u64 {
        self.calls.load(Ordering::Relaxed)
    }

    fn lookup(&self, input: &BackendInput<'_>) -> Result<Option<&OracleEntry>, BackendError> {
        self.calls.fetch_add(1, Ordering::Relaxed);
        let entry = self.script.entry(&input.frame.content_hash_hex());
        if entry
            .unwrap_or(&self.script.defaults)
            .fail
            .contains(&self.stage)
        {
            return Err(BackendError::Failure(format!(
                "scripted {} failure",
                self.stage
            )));
        }
        Ok(entry)
    }
}

impl InferenceBackend for ScriptedOracle {
    fn kind(&self) -> BackendKind {
        BackendKind::ScriptedOracle
    }

    fn task(&self) -> Task {
        self.stage.task()
    }

    fn infer_classify(&self, input: &BackendInput<'_>) -> Result<f32, BackendError> {
        require_task(self.task(), Task::BinaryClassify)?;
        let entry = self.lookup(input)?;
        let pick = |e: &OracleEntry| match self.stage {
            Stage::Primary => e.primary,
            _ => e.secondary,
        };
        let p = entry
            .and_then(pick)
            .or_else(|| pick(&self.script.defaults))
            .unwrap_or(0.0);
        check_probability(p)
    }

    fn infer_detect(&self, input: &BackendInput<'_>) -> Result<Vec<ModelDetection>, BackendError> {
        require_task(self.task(), Task::Detect)?;
        let entry = self.lookup(input)?;
        let rows = entry
            .and_then(|e| e.detections.as_ref())
            .or(self.script.defaults.detections.as_ref());
        sanitize_detections(rows.into_iter().flatten().map(|r| ModelDetection {
            bbox: [r[0], r[1], r[2], r[3]],
            confidence: r[4],
        }))
    }
}
