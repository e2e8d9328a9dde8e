//! Two-stage pop-up classification.
//!
//! The primary model screens every forwarded frame. Only frames it scores at
//! or above its threshold are shown to the secondary (verification) model,
//! and the fusion policy decides the final label.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::{BackendError, BackendInput, InferenceBackend, Stage, CLASSIFIER_INPUT};
use crate::frame::Frame;
use crate::tensor::{resize_to_tensor, Tensor};

pub const DEFAULT_CLASSIFIER_THRESHOLD: f64 = 0.5;

#[derive(Debug, Error)]
pub enum ClassifyError {
    #[error("{stage} classifier failed: {source}")]
    BackendFailure {
        stage: Stage,
        #[source]
        source: BackendError,
    },
    #[error("threshold {0} must lie strictly between 0 and 1")]
    InvalidThreshold(f64),
    #[error("invalid preprocessing: {0}")]
    InvalidSpec(String),
}

/// Classifier input geometry and ImageNet channel statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreprocessSpec {
    pub target_width: usize,
    pub target_height: usize,
    pub channel_means: [f32; 3],
    pub channel_stds: [f32; 3],
}

impl Default for PreprocessSpec {
    fn default() -> Self {
        Self {
            target_width: CLASSIFIER_INPUT,
            target_height: CLASSIFIER_INPUT,
            channel_means: [0.485, 0.456, 0.406],
            channel_stds: [0.229, 0.224, 0.225],
        }
    }
}

/// Stretch-resize (bilinear, aspect not preserved) to the target size, scale
/// to `[0, 1]`, then standardize each channel.
pub fn preprocess_classify(frame: &Frame, spec: &PreprocessSpec) -> Result<Tensor, ClassifyError> {
    if spec.channel_stds.iter().any(|&s| s.is_nan() || s <= 0.0) {
        return Err(ClassifyError::InvalidSpec("stds must be positive".into()));
    }
    if spec.target_width == 0 || spec.target_height == 0 {
        return Err(ClassifyError::InvalidSpec("empty target size".into()));
    }
    let (means, stds) = (spec.channel_means, spec.channel_stds);
    Ok(resize_to_tensor(
        frame.image(),
        spec.target_width,
        spec.target_height,
        |c, v| (v / 255.0 - means[c]) / stds[c],
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FusionPolicy {
    /// Pop-up only when both stages agree.
    #[default]
    Conjunctive,
    /// The primary decides; the secondary score is kept for telemetry.
    PrimaryDominant,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Label {
    AppContent,
    Popup,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassifierScore {
    pub probability: f64,
    pub stage: Stage,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub label: Label,
    pub primary: ClassifierScore,
    /// Absent exactly when the primary stage short-circuited.
    pub secondary: Option<ClassifierScore>,
    pub policy: FusionPolicy,
}

impl Verdict {
    pub fn is_popup(&self) -> bool {
        self.label == Label::Popup
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CascadeConfig {
    pub primary_threshold: f64,
    pub secondary_threshold: f64,
    pub policy: FusionPolicy,
    pub preprocess: PreprocessSpec,
}

impl Default for CascadeConfig {
    fn default() -> Self {
        Self {
            primary_threshold: DEFAULT_CLASSIFIER_THRESHOLD,
            secondary_threshold: DEFAULT_CLASSIFIER_THRESHOLD,
            policy: FusionPolicy::Conjunctive,
            preprocess: PreprocessSpec::default(),
        }
    }
}

impl CascadeConfig {
    pub fn validate(&self) -> Result<(), ClassifyError> {
        for t in [self.primary_threshold, self.secondary_threshold] {
            if !(t > 0.0 && t < 1.0) {
                return Err(ClassifyError::InvalidThreshold(t));
            }
        }
        Ok(())
    }
}

/// Fuse already-computed scores. `secondary` is consulted only when the
/// primary passes, mirroring [`classify`].
pub fn decide(
    primary: f64,
    secondary: impl FnOnce() -> Option<f64>,
    config: &CascadeConfig,
) -> (Label, Option<f64>) {
    if primary < config.primary_threshold {
        return (Label::AppContent, None);
    }
    let s = secondary();
    let label = match config.policy {
        FusionPolicy::PrimaryDominant => Label::Popup,
        FusionPolicy::Conjunctive => match s {
            Some(s) if s >= config.secondary_threshold => Label::Popup,
            _ => Label::AppContent,
        },
    };
    (label, s)
}

/// Run the cascade on a frame.
pub fn classify(
    frame: &Frame,
    primary: &dyn InferenceBackend,
    secondary: &dyn InferenceBackend,
    config: &CascadeConfig,
) -> Result<Verdict, ClassifyError> {
    config.validate()?;
    let tensor = preprocess_classify(frame, &config.preprocess)?;
    let input = BackendInput {
        frame,
        tensor: &tensor,
    };
    let p = primary
        .infer_classify(&input)
        .map_err(|source| ClassifyError::BackendFailure {
            stage: Stage::Primary,
            source,
        })? as f64;
    let mut failure = None;
    let (label, s) = decide(
        p,
        || match secondary.infer_classify(&input) {
            Ok(s) => Some(s as f64),
            Err(e) => {
                failure = Some(e);
                None
            }
        },
        config,
    );
    if let Some(source) = failure {
        return Err(ClassifyError::BackendFailure {
            stage: Stage::Secondary,
            source,
        });
    }
    Ok(Verdict {
        label,
        primary: ClassifierScore {
            probability: p,
            stage: Stage::Primary,
        },
        secondary: s.map(|probability| ClassifierScore {
            probability,
            stage: Stage::Secondary,
        }),
        policy: config.policy,
    })
}
