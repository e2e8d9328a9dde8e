//! Detect and dismiss app-blocking pop-ups in a stream of screen frames.
//!
//! Frames pass a histogram change sampler, a two-stage pop-up classifier
//! cascade and a close-button detector; the engine answers each frame with
//! either "continue" or a click target. The [`eval`] module scores engine
//! logs against annotated recordings.
//!
//! Numeric code is generic over [`Scalar`]; the aliases at the crate root
//! fix the common choices (`f64` for serving, `Ratio<i128>` for exact
//! reference computations).

pub mod backend;
pub mod classifier;
pub mod corpus;
pub mod detector;
pub mod engine;
pub mod eval;
pub mod frame;
pub mod geometry;
pub mod protocol;
pub mod replay;
pub mod sampler;
pub mod scalar;
pub mod server;
pub mod source;
pub mod tensor;

use thiserror::Error;

pub use backend::{BackendError, BackendSource, InferenceBackend, OracleScript, ScriptedOracle, Stage, Task};
pub use classifier::{CascadeConfig, FusionPolicy, Label, Verdict};
pub use engine::{
    Action, Backends, Engine, EngineConfig, EngineError, EngineResponse, LatencyBreakdown, LogEvent, SessionContext,
};
pub use eval::{EvalError, EvaluationReport, RecordingAnnotation};
pub use frame::{Frame, FrameError, ImageEncoding, RgbImage};
pub use sampler::{SamplerConfig, SamplerState};
pub use scalar::Scalar;
pub use source::{open_replay, SourceError};

pub type Real = f64;
pub type Exact = num_rational::Ratio<i128>;

pub type BoundingBox = geometry::BoundingBox<Real>;
pub type BoundingBoxF32 = geometry::BoundingBox<f32>;
pub type ExactBoundingBox = geometry::BoundingBox<Exact>;
pub type Point = geometry::Point<Real>;
pub type Detection = detector::Detection<Real>;
pub type ClickTarget = detector::ClickTarget<Real>;
pub type LetterboxTransform = detector::LetterboxTransform<Real>;
pub type RgbHistogram = sampler::RgbHistogram<Real>;
pub type DetectionMatchSet = eval::DetectionMatchSet<Real>;
pub type ExactDetectionMatchSet = eval::DetectionMatchSet<Exact>;

/// Any error surfaced by the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Frame(#[from] FrameError),
    #[error(transparent)]
    Source(#[from] SourceError),
    #[error(transparent)]
    Sampler(#[from] sampler::SamplerError),
    #[error(transparent)]
    Classify(#[from] classifier::ClassifyError),
    #[error(transparent)]
    Detect(#[from] detector::DetectError),
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Protocol(#[from] protocol::ProtocolError),
    #[error(transparent)]
    Server(#[from] server::ServerError),
    #[error(transparent)]
    Replay(#[from] replay::ReplayError),
}
