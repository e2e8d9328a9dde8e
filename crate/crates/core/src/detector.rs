//! Close-button localization.
//!
//! Frames are letterboxed into the detector's 640×640 canvas (aspect
//! preserved, gray padding), detections are mapped back to frame pixels, and
//! a single dismissal target is chosen.

use std::cmp::Ordering;

use num_traits::Float;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::{BackendError, BackendInput, InferenceBackend, DETECTOR_INPUT};
use crate::frame::Frame;
use crate::geometry::{BoundingBox, GeometryError, Point};
use crate::scalar::Scalar;
use crate::tensor::{resize_padded, Tensor};

pub const LETTERBOX_FILL: u8 = 114;
pub const DEFAULT_CONF_THRESHOLD: f64 = 0.25;

#[derive(Debug, Error)]
pub enum DetectError {
    #[error("box collapses after mapping to the frame")]
    DegenerateBox,
    #[error("detector failed: {0}")]
    BackendFailure(#[from] BackendError),
    #[error("confidence threshold {0} must lie in [0, 1)")]
    InvalidThreshold(f64),
}

impl From<GeometryError> for DetectError {
    fn from(_: GeometryError) -> Self {
        DetectError::DegenerateBox
    }
}

/// The resize-and-pad applied to a frame. Model coordinates relate to frame
/// coordinates by `model = frame * scale + pad`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LetterboxTransform<T> {
    pub scale: T,
    pub pad_x: T,
    pub pad_y: T,
    pub model_size: usize,
    /// Size of the resized image inside the canvas.
    pub scaled_width: usize,
    pub scaled_height: usize,
}

impl<T: Scalar> LetterboxTransform<T> {
    /// Transform for a `width × height` frame into a square canvas of side
    /// `model_size`. Padding is split evenly, with any odd pixel going to the
    /// right/bottom.
    pub fn for_dims(width: u32, height: u32, model_size: usize) -> Self {
        let side = T::from_count(model_size);
        let (w, h) = (T::from_count(width as usize), T::from_count(height as usize));
        let scale = (side / w).min_of(side / h);
        let scaled = |v: T| {
            let n = (v * scale).to_real().round() as usize;
            n.clamp(1, model_size)
        };
        let (sw, sh) = (scaled(w), scaled(h));
        Self {
            scale,
            pad_x: T::from_count((model_size - sw) / 2),
            pad_y: T::from_count((model_size - sh) / 2),
            model_size,
            scaled_width: sw,
            scaled_height: sh,
        }
    }

    pub fn map_point(&self, p: Point<T>) -> Point<T> {
        Point {
            x: p.x * self.scale + self.pad_x,
            y: p.y * self.scale + self.pad_y,
        }
    }

    pub fn unmap_point(&self, p: Point<T>) -> Point<T> {
        Point {
            x: (p.x - self.pad_x) / self.scale,
            y: (p.y - self.pad_y) / self.scale,
        }
    }

    /// Frame box to model space.
    pub fn map_box(&self, b: &BoundingBox<T>) -> Result<BoundingBox<T>, GeometryError> {
        let a = self.map_point(Point { x: b.x1(), y: b.y1() });
        let c = self.map_point(Point { x: b.x2(), y: b.y2() });
        BoundingBox::new(a.x, a.y, c.x, c.y)
    }

    /// Model-space corners back to frame pixels, clamped to the frame.
    pub fn unmap_box(
        &self,
        corners: [T; 4],
        frame_width: u32,
        frame_height: u32,
    ) -> Result<BoundingBox<T>, DetectError> {
        let a = self.unmap_point(Point {
            x: corners[0],
            y: corners[1],
        });
        let c = self.unmap_point(Point {
            x: corners[2],
            y: corners[3],
        });
        let (w, h) = (
            T::from_count(frame_width as usize),
            T::from_count(frame_height as usize),
        );
        Ok(BoundingBox::new(
            a.x.clamp_between(T::zero(), w),
            a.y.clamp_between(T::zero(), h),
            c.x.clamp_between(T::zero(), w),
            c.y.clamp_between(T::zero(), h),
        )?)
    }
}

/// Letterbox a frame into the detector canvas. Values are RGB scaled to
/// `[0, 1]`; padding is gray 114.
pub fn letterbox(frame: &Frame) -> (Tensor, LetterboxTransform<f64>) {
    let t = LetterboxTransform::<f64>::for_dims(frame.width(), frame.height(), DETECTOR_INPUT);
    let canvas = resize_padded(
        frame.image(),
        [DETECTOR_INPUT; 2],
        [t.pad_x as usize, t.pad_y as usize],
        [t.scaled_width, t.scaled_height],
        LETTERBOX_FILL as f32 / 255.0,
        |_, v| v / 255.0,
    );
    (canvas, t)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound(
    serialize = "T: Scalar + Serialize",
    deserialize = "T: Scalar + Deserialize<'de>"
))]
pub struct Detection<T> {
    #[serde(rename = "box")]
    pub bbox: BoundingBox<T>,
    pub confidence: T,
}

/// Click coordinates for the harness: the center of the chosen box.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClickTarget<T> {
    pub x: T,
    pub y: T,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CloseButton<T> {
    Found {
        target: ClickTarget<T>,
        detection: Detection<T>,
    },
    NoCloseButton,
}

impl<T> CloseButton<T> {
    pub fn found(&self) -> Option<(&ClickTarget<T>, &Detection<T>)> {
        match self {
            Self::Found { target, detection } => Some((target, detection)),
            Self::NoCloseButton => None,
        }
    }
}

/// Ranking used for selection: higher confidence, then larger area, then
/// smaller `x1`.
pub fn detection_order<T: Scalar>(a: &Detection<T>, b: &Detection<T>) -> Ordering {
    let cmp = |x: T, y: T| x.partial_cmp(&y).unwrap_or(Ordering::Equal);
    cmp(b.confidence, a.confidence)
        .then_with(|| cmp(b.bbox.area(), a.bbox.area()))
        .then_with(|| cmp(a.bbox.x1(), b.bbox.x1()))
}

/// The best detection at or above `conf_threshold`, if any.
pub fn select_detection<T: Scalar>(
    detections: &[Detection<T>],
    conf_threshold: T,
) -> Option<Detection<T>> {
    detections
        .iter()
        .filter(|d| d.confidence >= conf_threshold)
        .min_by(|a, b| detection_order(a, b))
        .copied()
}

pub fn click_target<T: Scalar>(d: &Detection<T>) -> ClickTarget<T> {
    let c = d.bbox.center();
    ClickTarget { x: c.x, y: c.y }
}

/// Map raw model rows to frame-space detections, dropping boxes that fall
/// entirely in the padding.
pub fn unmap_detections<T: Scalar + Float>(
    rows: &[crate::backend::ModelDetection],
    transform: &LetterboxTransform<T>,
    frame_width: u32,
    frame_height: u32,
) -> Vec<Detection<T>> {
    rows.iter()
        .filter_map(|r| {
            let corners = r.bbox.map(|v| T::from_f32(v).unwrap_or_else(T::nan));
            let bbox = transform
                .unmap_box(corners, frame_width, frame_height)
                .ok()?;
            Some(Detection {
                bbox,
                confidence: T::from_f32(r.confidence)?,
            })
        })
        .collect()
}

/// Run the detector on a frame already classified as a pop-up.
pub fn detect_close_button(
    frame: &Frame,
    backend: &dyn InferenceBackend,
    conf_threshold: f64,
) -> Result<CloseButton<f64>, DetectError> {
    if !(0.0..1.0).contains(&conf_threshold) {
        return Err(DetectError::InvalidThreshold(conf_threshold));
    }
    let (tensor, transform) = letterbox(frame);
    let rows = backend.infer_detect(&BackendInput {
        frame,
        tensor: &tensor,
    })?;
    let survivors: Vec<_> = rows
        .into_iter()
        .filter(|r| r.confidence as f64 >= conf_threshold)
        .collect();
    let detections = unmap_detections(&survivors, &transform, frame.width(), frame.height());
    Ok(match select_detection(&detections, conf_threshold) {
        Some(detection) => CloseButton::Found {
            target: click_target(&detection),
            detection,
        },
        None => CloseButton::NoCloseButton,
    })
}
