//! Per-frame decision pipeline: sample, classify, localize, respond.

use std::fmt;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::{
    load_backend, BackendError, BackendInput, BackendKind, BackendSource, InferenceBackend,
    ModelDetection, OracleScript, ScriptedOracle, Stage, Task,
};
use crate::classifier::{classify, CascadeConfig, Label, Verdict};
use crate::detector::{detect_close_button, ClickTarget, CloseButton, Detection, DEFAULT_CONF_THRESHOLD};
use crate::frame::Frame;
use crate::geometry::BoundingBox;
use crate::sampler::{SampleDecision, SamplerConfig, SamplerState};

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Backend(#[from] BackendError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EngineConfig {
    pub sampler: SamplerConfig,
    pub cascade: CascadeConfig,
    pub detector_conf_threshold: f64,
    /// Consecutive dismissals allowed before the engine stops clicking on a
    /// pop-up that does not go away. `None` means unlimited.
    pub max_dismiss_attempts: Option<u32>,
}

impl Default for EngineConfig {
    fn default() -> Self {
        Self {
            sampler: SamplerConfig::default(),
            cascade: CascadeConfig::default(),
            detector_conf_threshold: DEFAULT_CONF_THRESHOLD,
            max_dismiss_attempts: None,
        }
    }
}

impl EngineConfig {
    pub fn validate(&self) -> Result<(), EngineError> {
        self.sampler
            .validate()
            .map_err(|e| EngineError::Config(e.to_string()))?;
        self.cascade
            .validate()
            .map_err(|e| EngineError::Config(e.to_string()))?;
        if !(0.0..1.0).contains(&self.detector_conf_threshold) {
            return Err(EngineError::Config(format!(
                "detector confidence threshold {} outside [0, 1)",
                self.detector_conf_threshold
            )));
        }
        Ok(())
    }
}

/// The three models, shared read-only across sessions.
#[derive(Debug, Clone)]
pub struct Backends {
    pub primary: Arc<dyn InferenceBackend>,
    pub secondary: Arc<dyn InferenceBackend>,
    pub detector: Arc<dyn InferenceBackend>,
}

impl Backends {
    pub fn load(
        primary: &BackendSource,
        secondary: &BackendSource,
        detector: &BackendSource,
    ) -> Result<Self, BackendError> {
        Ok(Self {
            primary: load_backend(primary, Stage::Primary)?,
            secondary: load_backend(secondary, Stage::Secondary)?,
            detector: load_backend(detector, Stage::Detector)?,
        })
    }

    /// All three stages answered by one oracle script.
    pub fn scripted(script: Arc<OracleScript>) -> Self {
        Self {
            primary: Arc::new(ScriptedOracle::new(script.clone(), Stage::Primary)),
            secondary: Arc::new(ScriptedOracle::new(script.clone(), Stage::Secondary)),
            detector: Arc::new(ScriptedOracle::new(script, Stage::Detector)),
        }
    }

    fn check(&self) -> Result<(), EngineError> {
        for (stage, b) in [
            (Stage::Primary, &self.primary),
            (Stage::Secondary, &self.secondary),
            (Stage::Detector, &self.detector),
        ] {
            if b.task() != stage.task() {
                return Err(EngineError::Config(format!(
                    "{stage} backend serves {}, expected {}",
                    b.task(),
                    stage.task()
                )));
            }
        }
        Ok(())
    }
}

/// Wall-clock spent per stage of one `handle_frame` call. The three stage
/// fields partition the call; `inference_ms` is the part of classify and
/// detect spent inside model backends.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LatencyBreakdown {
    pub sample_ms: f64,
    pub classify_ms: f64,
    pub detect_ms: f64,
    pub inference_ms: f64,
}

impl LatencyBreakdown {
    pub fn total_ms(&self) -> f64 {
        self.sample_ms + self.classify_ms + self.detect_ms
    }

    /// Engine time excluding model inference.
    pub fn overhead_ms(&self) -> f64 {
        (self.total_ms() - self.inference_ms).max(0.0)
    }
}

fn ms(d: Duration) -> f64 {
    d.as_secs_f64() * 1e3
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Dismissal {
    pub click: ClickTarget<f64>,
    #[serde(rename = "box")]
    pub bbox: BoundingBox<f64>,
    pub confidence: f64,
    pub primary_score: f64,
    pub secondary_score: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Action {
    Continue,
    DismissPopup(Dismissal),
}

/// Why a response degraded to `Continue`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Fault {
    OutOfOrderFrame(String),
    BackendFailure(String),
}

impl fmt::Display for Fault {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Fault::OutOfOrderFrame(m) => write!(f, "out of order frame: {m}"),
            Fault::BackendFailure(m) => write!(f, "backend failure: {m}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EngineResponse {
    pub frame_id: u64,
    pub action: Action,
    pub latency: LatencyBreakdown,
    pub fault: Option<Fault>,
}

impl EngineResponse {
    pub fn dismissal(&self) -> Option<&Dismissal> {
        match &self.action {
            Action::DismissPopup(d) => Some(d),
            Action::Continue => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActionKind {
    Continue,
    Click,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventNote {
    UnresolvedPopup,
    DismissLimitReached,
    BackendFailure,
    OutOfOrderFrame,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LoggedVerdict {
    pub label: Label,
    pub primary: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub secondary: Option<f64>,
}

impl From<&Verdict> for LoggedVerdict {
    fn from(v: &Verdict) -> Self {
        Self {
            label: v.label,
            primary: v.primary.probability,
            secondary: v.secondary.map(|s| s.probability),
        }
    }
}

/// One line of the event log: a considered (or rejected) frame and what the
/// engine did with it. Latencies are left out so logs are reproducible.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogEvent {
    pub session: String,
    pub frame_id: u64,
    pub timestamp_ms: u64,
    /// Similarity to the reference; absent when there was none.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub similarity: Option<f64>,
    pub forwarded: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub verdict: Option<LoggedVerdict>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub detection: Option<Detection<f64>>,
    pub action: ActionKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub click: Option<ClickTarget<f64>>,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub reference_reset: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<EventNote>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl LogEvent {
    fn for_frame(frame: &Frame) -> Self {
        Self {
            session: frame.session_id().to_string(),
            frame_id: frame.frame_id(),
            timestamp_ms: frame.timestamp_ms(),
            similarity: None,
            forwarded: false,
            verdict: None,
            detection: None,
            action: ActionKind::Continue,
            click: None,
            reference_reset: false,
            note: None,
            error: None,
        }
    }

    pub fn is_click(&self) -> bool {
        self.action == ActionKind::Click
    }
}

/// Mutable per-session state. Frames of one session must be handled one at
/// a time, in order.
#[derive(Debug, Clone)]
pub struct SessionContext {
    session_id: String,
    sampler: SamplerState<f64>,
    dismiss_streak: u32,
    events: Vec<LogEvent>,
    frames_seen: u64,
}

impl SessionContext {
    pub fn new(session_id: impl Into<String>) -> Self {
        Self {
            session_id: session_id.into(),
            sampler: SamplerState::new(),
            dismiss_streak: 0,
            events: Vec::new(),
            frames_seen: 0,
        }
    }

    pub fn session_id(&self) -> &str {
        &self.session_id
    }

    pub fn sampler(&self) -> &SamplerState<f64> {
        &self.sampler
    }

    pub fn events(&self) -> &[LogEvent] {
        &self.events
    }

    pub fn take_events(&mut self) -> Vec<LogEvent> {
        std::mem::take(&mut self.events)
    }

    pub fn frames_seen(&self) -> u64 {
        self.frames_seen
    }
}

/// Backend wrapper accumulating time spent in inference.
#[derive(Debug)]
struct Timed<'a> {
    inner: &'a dyn InferenceBackend,
    nanos: AtomicU64,
}

impl<'a> Timed<'a> {
    fn new(inner: &'a dyn InferenceBackend) -> Self {
        Self {
            inner,
            nanos: AtomicU64::new(0),
        }
    }

    fn time<R>(&self, f: impl FnOnce() -> R) -> R {
        let start = Instant::now();
        let r = f();
        self.nanos
            .fetch_add(start.elapsed().as_nanos() as u64, Ordering::Relaxed);
        r
    }

    fn spent(&self) -> Duration {
        Duration::from_nanos(self.nanos.load(Ordering::Relaxed))
    }
}

impl InferenceBackend for Timed<'_> {
    fn kind(&self) -> BackendKind {
        self.inner.kind()
    }

    fn task(&self) -> Task {
        self.inner.task()
    }

    fn infer_classify(&self, input: &BackendInput<'_>) -> Result<f32, BackendError> {
        self.time(|| self.inner.infer_classify(input))
    }

    fn infer_detect(&self, input: &BackendInput<'_>) -> Result<Vec<ModelDetection>, BackendError> {
        self.time(|| self.inner.infer_detect(input))
    }
}

#[derive(Debug)]
pub struct Engine {
    config: EngineConfig,
    backends: Backends,
}

impl Engine {
    pub fn new(config: EngineConfig, backends: Backends) -> Result<Self, EngineError> {
        config.validate()?;
        backends.check()?;
        Ok(Self { config, backends })
    }

    pub fn config(&self) -> &EngineConfig {
        &self.config
    }

    pub fn backends(&self) -> &Backends {
        &self.backends
    }

    pub fn new_session(&self, session_id: impl Into<String>) -> SessionContext {
        SessionContext::new(session_id)
    }

    /// Decide what the harness should do after `frame`. Never fails: faults
    /// degrade to `Continue` and are reported on the response and in the log.
    pub fn handle_frame(&self, ctx: &mut SessionContext, frame: &Frame) -> EngineResponse {
        let start = Instant::now();
        ctx.frames_seen += 1;
        let decision = ctx.sampler.step(frame, &self.config.sampler);
        let sampled = Instant::now();

        let mut event = LogEvent::for_frame(frame);
        let mut response = EngineResponse {
            frame_id: frame.frame_id(),
            action: Action::Continue,
            latency: LatencyBreakdown {
                sample_ms: ms(sampled - start),
                ..LatencyBreakdown::default()
            },
            fault: None,
        };

        let similarity = match decision {
            Err(e) => {
                let fault = Fault::OutOfOrderFrame(e.to_string());
                event.note = Some(EventNote::OutOfOrderFrame);
                event.error = Some(fault.to_string());
                response.fault = Some(fault);
                ctx.events.push(event);
                return response;
            }
            Ok(SampleDecision::BetweenTicks) => return response,
            Ok(SampleDecision::Similar { similarity }) => {
                event.similarity = Some(similarity);
                ctx.events.push(event);
                return response;
            }
            Ok(SampleDecision::Forward { similarity }) => similarity,
        };
        event.similarity = similarity;
        event.forwarded = true;

        let primary = Timed::new(&*self.backends.primary);
        let secondary = Timed::new(&*self.backends.secondary);
        let verdict = classify(frame, &primary, &secondary, &self.config.cascade);
        let classified = Instant::now();
        response.latency.classify_ms = ms(classified - sampled);
        response.latency.inference_ms = ms(primary.spent() + secondary.spent());

        let verdict = match verdict {
            Ok(v) => v,
            Err(e) => {
                let fault = Fault::BackendFailure(e.to_string());
                event.note = Some(EventNote::BackendFailure);
                event.error = Some(fault.to_string());
                response.fault = Some(fault);
                ctx.events.push(event);
                return response;
            }
        };
        event.verdict = Some(LoggedVerdict::from(&verdict));
        if !verdict.is_popup() {
            ctx.dismiss_streak = 0;
            ctx.events.push(event);
            return response;
        }

        let detector = Timed::new(&*self.backends.detector);
        let outcome = detect_close_button(frame, &detector, self.config.detector_conf_threshold);
        response.latency.detect_ms = ms(classified.elapsed());
        response.latency.inference_ms += ms(detector.spent());

        match outcome {
            Err(e) => {
                let fault = Fault::BackendFailure(e.to_string());
                event.note = Some(EventNote::BackendFailure);
                event.error = Some(fault.to_string());
                response.fault = Some(fault);
            }
            Ok(CloseButton::NoCloseButton) => {
                tracing::debug!(
                    session = ctx.session_id,
                    frame = frame.frame_id(),
                    "pop-up without a detectable close button"
                );
                event.note = Some(EventNote::UnresolvedPopup);
            }
            Ok(CloseButton::Found { target, detection }) => {
                event.detection = Some(detection);
                let limit_hit = self
                    .config
                    .max_dismiss_attempts
                    .is_some_and(|max| ctx.dismiss_streak >= max);
                if limit_hit {
                    event.note = Some(EventNote::DismissLimitReached);
                } else {
                    ctx.dismiss_streak += 1;
                    ctx.sampler.reset_reference();
                    event.reference_reset = true;
                    event.action = ActionKind::Click;
                    event.click = Some(target);
                    response.action = Action::DismissPopup(Dismissal {
                        click: target,
                        bbox: detection.bbox,
                        confidence: detection.confidence,
                        primary_score: verdict.primary.probability,
                        secondary_score: verdict.secondary.map(|s| s.probability),
                    });
                }
            }
        }
        ctx.events.push(event);
        response
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::frame::RgbImage;

    fn popup_image() -> RgbImage {
        RgbImage::from_fn(640, 640, |x, y| {
            if (100..540).contains(&x) && (100..540).contains(&y) {
                [250, 250, 250]
            } else {
                [20, 40, 60]
            }
        })
        .unwrap()
    }

    fn engine_for(entries: &[(&RgbImage, &str)], config: EngineConfig) -> Engine {
        let body: Vec<String> = entries
            .iter()
            .map(|(img, e)| format!("\"{}\": {e}", crate::frame::pixel_hash_hex(img.pixels())))
            .collect();
        let json = format!("{{\"frames\": {{{}}}}}", body.join(","));
        let script = Arc::new(OracleScript::from_json(&json).unwrap());
        Engine::new(config, Backends::scripted(script)).unwrap()
    }

    #[test]
    fn static_screen_continues() {
        let img = RgbImage::solid(64, 64, [5, 6, 7]).unwrap();
        let engine = engine_for(&[], EngineConfig::default());
        let mut ctx = engine.new_session("s");
        for i in 0..600u64 {
            let r = engine.handle_frame(&mut ctx, &Frame::new("s", i, i * 1000 / 60, img.clone()));
            assert_eq!(r.action, Action::Continue);
            assert!(r.fault.is_none());
        }
        let ev = ctx.events();
        assert_eq!(ev.len(), 100);
        assert!(ev[0].forwarded && ev[0].similarity.is_none());
        assert_eq!(ev[0].verdict.unwrap().label, Label::AppContent);
        assert!(ev[1..]
            .iter()
            .all(|e| !e.forwarded && e.similarity == Some(1.0)));
    }

    #[test]
    fn popup_with_button_is_dismissed() {
        let img = popup_image();
        let engine = engine_for(
            &[(
                &img,
                r#"{"primary": 0.95, "secondary": 0.9, "detections": [[500, 110, 530, 140, 0.8]]}"#,
            )],
            EngineConfig::default(),
        );
        let mut ctx = engine.new_session("s");
        let r = engine.handle_frame(&mut ctx, &Frame::new("s", 0, 0, img));
        let d = r.dismissal().expect("click");
        assert_eq!(d.click, ClickTarget { x: 515.0, y: 125.0 });
        assert!(ctx.events()[0].reference_reset);
        assert!(ctx.sampler().reference().is_none());
    }

    #[test]
    fn popup_without_button_is_unresolved() {
        let img = popup_image();
        let engine = engine_for(
            &[(&img, r#"{"primary": 0.95, "secondary": 0.9, "detections": []}"#)],
            EngineConfig::default(),
        );
        let mut ctx = engine.new_session("s");
        let r = engine.handle_frame(&mut ctx, &Frame::new("s", 0, 0, img));
        assert_eq!(r.action, Action::Continue);
        assert_eq!(ctx.events()[0].note, Some(EventNote::UnresolvedPopup));
    }

    #[test]
    fn backend_failure_degrades() {
        let img = popup_image();
        let engine = engine_for(
            &[(&img, r#"{"primary": 0.95, "secondary": 0.9, "fail": ["detector"]}"#)],
            EngineConfig::default(),
        );
        let mut ctx = engine.new_session("s");
        let r = engine.handle_frame(&mut ctx, &Frame::new("s", 0, 0, img));
        assert_eq!(r.action, Action::Continue);
        assert!(matches!(r.fault, Some(Fault::BackendFailure(_))));
        assert_eq!(ctx.events()[0].note, Some(EventNote::BackendFailure));
    }

    #[test]
    fn out_of_order_degrades() {
        let img = RgbImage::solid(8, 8, [0; 3]).unwrap();
        let engine = engine_for(&[], EngineConfig::default());
        let mut ctx = engine.new_session("s");
        engine.handle_frame(&mut ctx, &Frame::new("s", 3, 300, img.clone()));
        let r = engine.handle_frame(&mut ctx, &Frame::new("s", 4, 200, img));
        assert_eq!(r.action, Action::Continue);
        assert!(matches!(r.fault, Some(Fault::OutOfOrderFrame(_))));
    }

    #[test]
    fn dismiss_limit() {
        let img = popup_image();
        let cfg = EngineConfig {
            max_dismiss_attempts: Some(2),
            ..EngineConfig::default()
        };
        let engine = engine_for(
            &[(
                &img,
                r#"{"primary": 0.95, "secondary": 0.9, "detections": [[500, 110, 530, 140, 0.8]]}"#,
            )],
            cfg,
        );
        let mut ctx = engine.new_session("s");
        let clicks: Vec<bool> = (0..4u64)
            .map(|i| {
                engine
                    .handle_frame(&mut ctx, &Frame::new("s", i, i * 100, img.clone()))
                    .dismissal()
                    .is_some()
            })
            .collect();
        assert_eq!(clicks, vec![true, true, false, false]);
        assert_eq!(ctx.events()[2].note, Some(EventNote::DismissLimitReached));
        // the persisting pop-up is no longer re-forwarded once the limit holds
        assert!(!ctx.events()[3].forwarded);
    }

    #[test]
    fn rejects_mismatched_backends() {
        let script = Arc::new(OracleScript::default());
        let mut b = Backends::scripted(script.clone());
        b.primary = Arc::new(ScriptedOracle::new(script, Stage::Detector));
        assert!(matches!(
            Engine::new(EngineConfig::default(), b),
            Err(EngineError::Config(_))
        ));
    }

    #[test]
    fn event_log_json_shape() {
        let img = popup_image();
        let engine = engine_for(
            &[(
                &img,
                r#"{"primary": 0.95, "secondary": 0.9, "detections": [[500, 110, 530, 140, 0.75]]}"#,
            )],
            EngineConfig::default(),
        );
        let mut ctx = engine.new_session("s");
        engine.handle_frame(&mut ctx, &Frame::new("s", 0, 0, img));
        let line = serde_json::to_string(&ctx.events()[0]).unwrap();
        assert!(line.starts_with(r#"{"session":"s","frame_id":0,"timestamp_ms":0,"forwarded":true,"verdict":{"label":"popup""#));
        assert!(line.contains(r#""action":"click","click":{"x":515.0,"y":125.0},"reference_reset":true"#));
        let back: LogEvent = serde_json::from_str(&line).unwrap();
        assert_eq!(back, ctx.events()[0]);
    }
}
