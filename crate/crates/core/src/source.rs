//! Frame sources: replay directories on disk.
//!
//! A replay directory holds a `manifest.json` listing the screenshots in
//! order together with their capture timestamps:
//!
//! ```json
//! [{"file": "f000001.png", "timestamp_ms": 0}, {"file": "f000002.png", "timestamp_ms": 16}]
//! ```
//!
//! Raw RGB8 files (`.rgb`/`.raw`) additionally carry `width` and `height`.
//! Several entries may reference the same file.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::frame::{decode_image, Frame, FrameError, ImageEncoding};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const DEFAULT_FPS: u32 = 60;

#[derive(Debug, Error)]
pub enum SourceError {
    #[error("no {MANIFEST_FILE} in {0}")]
    MissingManifest(PathBuf),
    #[error("malformed manifest: {0}")]
    MalformedManifest(String),
    #[error("manifest timestamps decrease at entry {index} ({previous} ms -> {current} ms)")]
    NonMonotoneTimestamps {
        index: usize,
        previous: u64,
        current: u64,
    },
    #[error("failed to decode {file}: {reason}")]
    DecodeFailure { file: String, reason: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub file: String,
    pub timestamp_ms: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub width: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub height: Option<u32>,
}

impl ManifestEntry {
    pub fn new(file: impl Into<String>, timestamp_ms: u64) -> Self {
        Self {
            file: file.into(),
            timestamp_ms,
            width: None,
            height: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SourceKind {
    ReplayDirectory,
    WireStream,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FrameSource {
    pub kind: SourceKind,
    pub nominal_fps: u32,
}

impl FrameSource {
    pub fn replay() -> Self {
        Self {
            kind: SourceKind::ReplayDirectory,
            nominal_fps: DEFAULT_FPS,
        }
    }

    pub fn wire() -> Self {
        Self {
            kind: SourceKind::WireStream,
            nominal_fps: DEFAULT_FPS,
        }
    }
}

pub fn read_manifest(dir: &Path) -> Result<Vec<ManifestEntry>, SourceError> {
    let path = dir.join(MANIFEST_FILE);
    let text = match fs::read_to_string(&path) {
        Ok(t) => t,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
            return Err(SourceError::MissingManifest(dir.to_path_buf()))
        }
        Err(e) => return Err(SourceError::MalformedManifest(e.to_string())),
    };
    let entries: Vec<ManifestEntry> =
        serde_json::from_str(&text).map_err(|e| SourceError::MalformedManifest(e.to_string()))?;
    for (i, pair) in entries.windows(2).enumerate() {
        if pair[1].timestamp_ms < pair[0].timestamp_ms {
            return Err(SourceError::NonMonotoneTimestamps {
                index: i + 1,
                previous: pair[0].timestamp_ms,
                current: pair[1].timestamp_ms,
            });
        }
    }
    Ok(entries)
}

pub fn write_manifest(dir: &Path, entries: &[ManifestEntry]) -> std::io::Result<()> {
    let json = serde_json::to_string_pretty(entries).map_err(std::io::Error::other)?;
    fs::write(dir.join(MANIFEST_FILE), json)
}

/// Frames of a replay directory, decoded lazily in manifest order. Frame ids
/// are manifest positions.
#[derive(Debug)]
pub struct ReplayStream {
    dir: PathBuf,
    session_id: String,
    entries: Vec<ManifestEntry>,
    next: usize,
}

impl ReplayStream {
    pub fn session_id(&self) -> &str {
        &self.session_id
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[ManifestEntry] {
        &self.entries
    }

    pub fn with_session_id(mut self, session_id: impl Into<String>) -> Self {
        self.session_id = session_id.into();
        self
    }

    fn load(&self, index: usize) -> Result<Frame, SourceError> {
        let entry = &self.entries[index];
        let fail = |reason: String| SourceError::DecodeFailure {
            file: entry.file.clone(),
            reason,
        };
        let path = self.dir.join(&entry.file);
        let encoding = path
            .extension()
            .and_then(|e| e.to_str())
            .and_then(ImageEncoding::from_extension)
            .ok_or_else(|| fail("unrecognized file extension".into()))?;
        let bytes = fs::read(&path).map_err(|e| fail(e.to_string()))?;
        let dims = entry.width.zip(entry.height);
        let image = decode_image(&bytes, encoding, dims).map_err(|e| match e {
            FrameError::DecodeFailure { reason, .. } => fail(reason),
            other => fail(other.to_string()),
        })?;
        Ok(Frame::new(
            self.session_id.clone(),
            index as u64,
            entry.timestamp_ms,
            image,
        ))
    }
}

impl Iterator for ReplayStream {
    type Item = Result<Frame, SourceError>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.next >= self.entries.len() {
            return None;
        }
        let item = self.load(self.next);
        self.next += 1;
        Some(item)
    }

    fn size_hint(&self) -> (usize, Option<usize>) {
        let n = self.entries.len() - self.next;
        (n, Some(n))
    }
}

/// Open a replay directory. The session id defaults to the directory name.
pub fn open_replay(dir: impl AsRef<Path>) -> Result<ReplayStream, SourceError> {
    let dir = dir.as_ref();
    let entries = read_manifest(dir)?;
    let session_id = dir
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| "replay".to_string());
    Ok(ReplayStream {
        dir: dir.to_path_buf(),
        session_id,
        entries,
        next: 0,
    })
}
