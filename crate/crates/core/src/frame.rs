//! Screenshots and image decoding.

use std::fmt;
use std::io::Cursor;
use std::sync::OnceLock;

use image::{DynamicImage, ImageFormat};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum FrameError {
    #[error("frame has no pixels ({width}x{height})")]
    EmptyFrame { width: u32, height: u32 },
    #[error("pixel buffer holds {actual} bytes, expected {expected} for {width}x{height} RGB8")]
    DimensionMismatch {
        width: u32,
        height: u32,
        expected: usize,
        actual: usize,
    },
    #[error("failed to decode {what}: {reason}")]
    DecodeFailure { what: String, reason: String },
    #[error("raw RGB8 payload needs width and height")]
    MissingDimensions,
    #[error("failed to encode image: {0}")]
    EncodeFailure(String),
}

/// Wire/file encodings accepted for screenshots.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ImageEncoding {
    Png,
    Jpeg,
    RawRgb8,
}

impl ImageEncoding {
    /// Guess from a file extension (`png`, `jpg`/`jpeg`, `rgb`/`raw`).
    pub fn from_extension(ext: &str) -> Option<Self> {
        match ext.to_ascii_lowercase().as_str() {
            "png" => Some(Self::Png),
            "jpg" | "jpeg" => Some(Self::Jpeg),
            "rgb" | "raw" => Some(Self::RawRgb8),
            _ => None,
        }
    }
}

/// Owned row-major RGB8 pixels.
#[derive(Clone, PartialEq, Eq)]
pub struct RgbImage {
    width: u32,
    height: u32,
    pixels: Vec<u8>,
}

impl fmt::Debug for RgbImage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("RgbImage")
            .field("width", &self.width)
            .field("height", &self.height)
            .finish_non_exhaustive()
    }
}

impl RgbImage {
    pub fn new(width: u32, height: u32, pixels: Vec<u8>) -> Result<Self, FrameError> {
        if width == 0 || height == 0 {
            return Err(FrameError::EmptyFrame { width, height });
        }
        let expected = width as usize * height as usize * 3;
        if pixels.len() != expected {
            return Err(FrameError::DimensionMismatch {
                width,
                height,
                expected,
                actual: pixels.len(),
            });
        }
        Ok(Self {
            width,
            height,
            pixels,
        })
    }

    pub fn from_fn(
        width: u32,
        height: u32,
        mut f: impl FnMut(u32, u32) -> [u8; 3],
    ) -> Result<Self, FrameError> {
        let mut pixels = Vec::with_capacity(width as usize * height as usize * 3);
        for y in 0..height {
            for x in 0..width {
                pixels.extend_from_slice(&f(x, y));
            }
        }
        Self::new(width, height, pixels)
    }

    pub fn solid(width: u32, height: u32, rgb: [u8; 3]) -> Result<Self, FrameError> {
        Self::from_fn(width, height, |_, _| rgb)
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn into_pixels(self) -> Vec<u8> {
        self.pixels
    }

    pub fn pixel(&self, x: u32, y: u32) -> [u8; 3] {
        let i = (y as usize * self.width as usize + x as usize) * 3;
        [self.pixels[i], self.pixels[i + 1], self.pixels[i + 2]]
    }

    pub fn to_png(&self) -> Result<Vec<u8>, FrameError> {
        self.encode(ImageFormat::Png)
    }

    pub fn to_jpeg(&self) -> Result<Vec<u8>, FrameError> {
        self.encode(ImageFormat::Jpeg)
    }

    fn encode(&self, format: ImageFormat) -> Result<Vec<u8>, FrameError> {
        let buf = image::RgbImage::from_raw(self.width, self.height, self.pixels.clone())
            .expect("dimensions validated at construction");
        let mut out = Cursor::new(Vec::new());
        DynamicImage::ImageRgb8(buf)
            .write_to(&mut out, format)
            .map_err(|e| FrameError::EncodeFailure(e.to_string()))?;
        Ok(out.into_inner())
    }
}

/// Decode screenshot bytes to RGB8. Alpha is dropped, not composited;
/// grayscale is expanded to three channels. `dims` is required for
/// [`ImageEncoding::RawRgb8`] and ignored otherwise.
pub fn decode_image(
    bytes: &[u8],
    encoding: ImageEncoding,
    dims: Option<(u32, u32)>,
) -> Result<RgbImage, FrameError> {
    let format = match encoding {
        ImageEncoding::RawRgb8 => {
            let (w, h) = dims.ok_or(FrameError::MissingDimensions)?;
            return RgbImage::new(w, h, bytes.to_vec());
        }
        ImageEncoding::Png => ImageFormat::Png,
        ImageEncoding::Jpeg => ImageFormat::Jpeg,
    };
    let decoded = image::load_from_memory_with_format(bytes, format).map_err(|e| {
        FrameError::DecodeFailure {
            what: format!("{encoding:?} payload"),
            reason: e.to_string(),
        }
    })?;
    let rgb = decoded.to_rgb8();
    let (w, h) = rgb.dimensions();
    RgbImage::new(w, h, rgb.into_raw())
}

/// A timestamped screenshot belonging to one test session. Immutable once
/// built.
#[derive(Clone)]
pub struct Frame {
    session_id: String,
    frame_id: u64,
    timestamp_ms: u64,
    image: RgbImage,
    content_hash: OnceLock<[u8; 32]>,
}

impl fmt::Debug for Frame {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Frame")
            .field("session_id", &self.session_id)
            .field("frame_id", &self.frame_id)
            .field("timestamp_ms", &self.timestamp_ms)
            .field("width", &self.image.width)
            .field("height", &self.image.height)
            .finish_non_exhaustive()
    }
}

impl PartialEq for Frame {
    fn eq(&self, other: &Self) -> bool {
        self.session_id == other.session_id
            && self.frame_id == other.frame_id
            && self.timestamp_ms == other.timestamp_ms
            && self.image == other.image
    }
}

impl Eq for Frame {}

impl Frame {
    pub fn new(
        session_id: impl Into<String>,
        frame_id: u64,
        timestamp_ms: u64,
        image: RgbImage,
    ) -> Self {
        Self {
            session_id: session_id.into(),
            frame_id,
            timestamp_ms,
            image,
            content_hash: OnceLock::new(),
        }
    }

    pub fn session_id(&self) -> &str {
        &self.session_id
    }

    pub fn frame_id(&self) -> u64 {
        self.frame_id
    }

    pub fn timestamp_ms(&self) -> u64 {
        self.timestamp_ms
    }

    pub fn width(&self) -> u32 {
        self.image.width
    }

    pub fn height(&self) -> u32 {
        self.image.height
    }

    pub fn image(&self) -> &RgbImage {
        &self.image
    }

    pub fn pixels(&self) -> &[u8] {
        &self.image.pixels
    }

    /// SHA-256 of the pixel buffer, computed once.
    pub fn content_hash(&self) -> &[u8; 32] {
        self.content_hash
            .get_or_init(|| Sha256::digest(&self.image.pixels).into())
    }

    pub fn content_hash_hex(&self) -> String {
        hex::encode(self.content_hash())
    }
}

/// Hex SHA-256 over an RGB8 buffer; the key format of oracle scripts.
pub fn pixel_hash_hex(pixels: &[u8]) -> String {
    hex::encode(Sha256::digest(pixels))
}
