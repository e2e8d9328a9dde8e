//! Offline replay of recorded frame directories through the engine.

use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use thiserror::Error;

use crate::engine::{Engine, EngineResponse, LogEvent};
use crate::eval::{evaluate_log, EvalError, EvaluationReport, RecordingAnnotation};
use crate::frame::Frame;
use crate::source::{open_replay, SourceError};

#[derive(Debug, Error)]
pub enum ReplayError {
    #[error(transparent)]
    Source(#[from] SourceError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("i/o: {0}")]
    Io(#[from] io::Error),
    #[error("event log line {line}: {reason}")]
    MalformedLog { line: usize, reason: String },
}

#[derive(Debug, Clone)]
pub struct ReplayRun {
    pub session_id: String,
    pub responses: Vec<EngineResponse>,
    pub events: Vec<LogEvent>,
}

impl ReplayRun {
    pub fn dismissals(&self) -> usize {
        self.responses.iter().filter(|r| r.dismissal().is_some()).count()
    }

    /// The event log as JSON lines.
    pub fn event_log(&self) -> String {
        let mut buf = Vec::new();
        write_event_log(&mut buf, &self.events).expect("in-memory write");
        String::from_utf8(buf).expect("json is utf-8")
    }

    pub fn evaluate(&self, annotations: &[RecordingAnnotation]) -> Result<EvaluationReport, EvalError> {
        evaluate_log(&self.events, annotations)
    }
}

/// Feed frames through a fresh session in order. Stops at the first frame
/// that fails to load.
pub fn replay_frames(
    engine: &Engine,
    session_id: &str,
    frames: impl IntoIterator<Item = Result<Frame, SourceError>>,
) -> Result<ReplayRun, ReplayError> {
    let mut ctx = engine.new_session(session_id);
    let mut responses = Vec::new();
    for frame in frames {
        responses.push(engine.handle_frame(&mut ctx, &frame?));
    }
    Ok(ReplayRun {
        session_id: session_id.to_string(),
        responses,
        events: ctx.take_events(),
    })
}

/// Replay a directory written in the manifest layout. The session id
/// defaults to the directory name.
pub fn replay_directory(
    engine: &Engine,
    dir: &Path,
    session_id: Option<&str>,
) -> Result<ReplayRun, ReplayError> {
    let mut stream = open_replay(dir)?;
    if let Some(id) = session_id {
        stream = stream.with_session_id(id);
    }
    let id = stream.session_id().to_string();
    replay_frames(engine, &id, stream)
}

pub fn write_event_log(w: &mut impl Write, events: &[LogEvent]) -> io::Result<()> {
    for ev in events {
        serde_json::to_writer(&mut *w, ev)?;
        w.write_all(b"\n")?;
    }
    w.flush()
}

pub fn save_event_log(path: &Path, events: &[LogEvent]) -> io::Result<()> {
    write_event_log(&mut BufWriter::new(File::create(path)?), events)
}

/// Parse JSON lines; blank lines are skipped.
pub fn read_event_log(r: impl BufRead) -> Result<Vec<LogEvent>, ReplayError> {
    let mut events = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        events.push(
            serde_json::from_str(&line).map_err(|e| ReplayError::MalformedLog {
                line: i + 1,
                reason: e.to_string(),
            })?,
        );
    }
    Ok(events)
}

pub fn load_event_log(path: &Path) -> Result<Vec<LogEvent>, ReplayError> {
    read_event_log(BufReader::new(File::open(path)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::OracleScript;
    use crate::engine::{Backends, EngineConfig};
    use crate::frame::RgbImage;
    use std::sync::Arc;

    #[test]
    fn log_round_trip() {
        let engine = Engine::new(
            EngineConfig::default(),
            Backends::scripted(Arc::new(OracleScript::default())),
        )
        .unwrap();
        let img = RgbImage::solid(16, 16, [9, 9, 9]).unwrap();
        let frames = (0..30u64).map(|i| Ok(Frame::new("s", i, i * 33, img.clone())));
        let run = replay_frames(&engine, "s", frames).unwrap();
        assert_eq!(run.responses.len(), 30);
        assert_eq!(run.events.len(), 10);
        let text = run.event_log();
        assert_eq!(text.lines().count(), 10);
        let back = read_event_log(text.as_bytes()).unwrap();
        assert_eq!(back, run.events);
    }

    #[test]
    fn malformed_log_line() {
        let err = read_event_log("\n{}\n".as_bytes()).unwrap_err();
        assert!(matches!(err, ReplayError::MalformedLog { line: 2, .. }));
    }
}
