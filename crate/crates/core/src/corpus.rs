//! Deterministic synthetic recording with scripted model outputs, used for
//! replay tests and demos.
//!
//! Three app screens alternate with three pop-up episodes. Every distinct
//! screen is stored once as PNG and referenced repeatedly from the manifest.

use std::collections::BTreeMap;
use std::fs;
use std::io;
use std::path::Path;

use crate::backend::{OracleEntry, OracleScript, DETECTOR_INPUT};
use crate::detector::LetterboxTransform;
use crate::eval::{FrameAnnotation, RecordingAnnotation, TruthLabel};
use crate::frame::{pixel_hash_hex, RgbImage};
use crate::geometry::BoundingBox;
use crate::source::{write_manifest, ManifestEntry};

pub const ANNOTATIONS_FILE: &str = "annotations.json";
pub const ORACLE_FILE: &str = "oracle.json";

#[derive(Debug, Clone, PartialEq)]
pub struct CorpusSpec {
    pub app_id: String,
    pub width: u32,
    pub height: u32,
    pub fps: u32,
    pub duration_ms: u64,
}

impl Default for CorpusSpec {
    fn default() -> Self {
        Self {
            app_id: "synthetic".into(),
            width: 360,
            height: 640,
            fps: 30,
            duration_ms: 12_000,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticCorpus {
    pub manifest: Vec<ManifestEntry>,
    pub annotation: RecordingAnnotation,
    pub script: OracleScript,
    /// Distinct screens by file name.
    pub images: BTreeMap<String, RgbImage>,
}

struct Popup {
    dialog: [u32; 4],
    close: [u32; 4],
}

const SCREENS: [[u8; 3]; 3] = [[40, 90, 200], [30, 160, 70], [230, 120, 30]];

const POPUPS: [Popup; 3] = [
    Popup {
        dialog: [40, 160, 320, 480],
        close: [280, 170, 310, 200],
    },
    Popup {
        dialog: [30, 200, 330, 440],
        close: [290, 210, 320, 240],
    },
    Popup {
        dialog: [60, 120, 300, 520],
        close: [262, 130, 290, 158],
    },
];

/// `(start_ms, screen, popup)` segments; each runs until the next start.
const TIMELINE: [(u64, usize, Option<usize>); 9] = [
    (0, 0, None),
    (2000, 0, Some(0)),
    (3000, 0, None),
    (4000, 1, None),
    (6000, 1, Some(1)),
    (7500, 1, None),
    (8500, 2, None),
    (10_000, 2, Some(2)),
    (11_000, 2, None),
];

fn inside(r: [u32; 4], x: u32, y: u32) -> bool {
    x >= r[0] && x < r[2] && y >= r[1] && y < r[3]
}

fn app_screen(w: u32, h: u32, base: [u8; 3]) -> RgbImage {
    RgbImage::from_fn(w, h, |x, y| {
        if y < h / 12 {
            [245, 245, 245]
        } else if (y / 40) % 3 == 0 && x > 16 && x < w - 16 {
            base.map(|c| c / 2 + 100)
        } else {
            base
        }
    })
    .expect("non-empty screen")
}

fn with_popup(screen: &RgbImage, p: &Popup) -> RgbImage {
    let (w, h) = (screen.width(), screen.height());
    RgbImage::from_fn(w, h, |x, y| {
        if inside(p.close, x, y) {
            let (cx, cy) = (x - p.close[0], y - p.close[1]);
            // an X on a dark square
            if cx.abs_diff(cy) <= 1 || cx.abs_diff(p.close[3] - p.close[1] - 1 - cy) <= 1 {
                [255, 255, 255]
            } else {
                [60, 60, 60]
            }
        } else if inside(p.dialog, x, y) {
            [252, 252, 250]
        } else {
            screen.pixel(x, y).map(|c| (c as u32 * 2 / 5) as u8)
        }
    })
    .expect("non-empty screen")
}

fn close_box(p: &Popup) -> BoundingBox<f64> {
    let c = p.close.map(f64::from);
    BoundingBox::new(c[0], c[1], c[2], c[3]).expect("valid close box")
}

/// Build the corpus. Timeline positions scale with `spec.duration_ms`.
pub fn synthetic_corpus(spec: &CorpusSpec) -> SyntheticCorpus {
    let (w, h) = (spec.width, spec.height);
    let lb = LetterboxTransform::<f64>::for_dims(w, h, DETECTOR_INPUT);
    let screens: Vec<RgbImage> = SCREENS.iter().map(|&c| app_screen(w, h, c)).collect();

    let mut images = BTreeMap::new();
    let mut script = OracleScript {
        defaults: OracleEntry {
            primary: Some(0.05),
            secondary: Some(0.05),
            detections: Some(Vec::new()),
            fail: Vec::new(),
        },
        frames: BTreeMap::new(),
    };
    for (i, s) in screens.iter().enumerate() {
        images.insert(format!("screen-{i}.png"), s.clone());
    }
    for (i, p) in POPUPS.iter().enumerate() {
        let img = with_popup(&screens[TIMELINE.iter().find(|t| t.2 == Some(i)).unwrap().1], p);
        let m = lb.map_box(&close_box(p)).expect("box maps");
        let row = [m.x1(), m.y1(), m.x2(), m.y2()].map(|v| v as f32);
        script.frames.insert(
            pixel_hash_hex(img.pixels()),
            OracleEntry {
                primary: Some(0.95),
                secondary: Some(0.9),
                detections: Some(vec![[row[0], row[1], row[2], row[3], 0.9]]),
                fail: Vec::new(),
            },
        );
        images.insert(format!("popup-{i}.png"), img);
    }

    let n = (spec.duration_ms * spec.fps as u64).div_ceil(1000);
    let mut manifest = Vec::new();
    let mut frames = Vec::new();
    for id in 0..n {
        let ts = id * 1000 / spec.fps as u64;
        let pos = ts * 12_000 / spec.duration_ms.max(1);
        let (_, screen, popup) = TIMELINE.iter().rev().find(|t| t.0 <= pos).unwrap();
        let (file, ann) = match popup {
            None => (
                format!("screen-{screen}.png"),
                FrameAnnotation {
                    frame_id: id,
                    label: TruthLabel::AppContent,
                    close_button: None,
                    popup_group_id: None,
                },
            ),
            Some(p) => (
                format!("popup-{p}.png"),
                FrameAnnotation {
                    frame_id: id,
                    label: TruthLabel::Popup,
                    close_button: Some(close_box(&POPUPS[*p])),
                    popup_group_id: Some(format!("popup-{}", p + 1)),
                },
            ),
        };
        manifest.push(ManifestEntry::new(file, ts));
        frames.push(ann);
    }

    SyntheticCorpus {
        manifest,
        annotation: RecordingAnnotation {
            app_id: spec.app_id.clone(),
            frames,
        },
        script,
        images,
    }
}

impl SyntheticCorpus {
    /// Write frames, manifest, annotations and oracle script into `dir`.
    pub fn write(&self, dir: &Path) -> io::Result<()> {
        fs::create_dir_all(dir)?;
        for (name, img) in &self.images {
            let png = img
                .to_png()
                .map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e.to_string()))?;
            fs::write(dir.join(name), png)?;
        }
        write_manifest(dir, &self.manifest)?;
        fs::write(
            dir.join(ANNOTATIONS_FILE),
            serde_json::to_string_pretty(&self.annotation)?,
        )?;
        fs::write(dir.join(ORACLE_FILE), self.script.to_json())?;
        Ok(())
    }

    pub fn popup_groups(&self) -> usize {
        self.annotation.dismissable_groups().len()
    }
}
