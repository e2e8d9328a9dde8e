//! Ground-truth labels for replayed recordings.
//!
//! ```json
//! {"app_id": "com.example", "frames": [
//!   {"frame_id": 0, "label": "app_content"},
//!   {"frame_id": 1, "label": "popup", "close_button": [10, 20, 50, 60], "popup_group_id": "g1"}
//! ]}
//! ```

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::EvalError;
use crate::geometry::BoundingBox;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TruthLabel {
    Popup,
    AppContent,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameAnnotation {
    pub frame_id: u64,
    pub label: TruthLabel,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub close_button: Option<BoundingBox<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub popup_group_id: Option<String>,
}

impl FrameAnnotation {
    pub fn is_popup(&self) -> bool {
        self.label == TruthLabel::Popup
    }

    /// Episode key: the explicit group id, or the frame itself.
    pub fn group_key(&self) -> String {
        match &self.popup_group_id {
            Some(g) => g.clone(),
            None => format!("#frame-{}", self.frame_id),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordingAnnotation {
    pub app_id: String,
    pub frames: Vec<FrameAnnotation>,
}

impl RecordingAnnotation {
    pub fn validate(&self) -> Result<(), EvalError> {
        let bad = |why: String| EvalError::InvalidAnnotation(format!("{}: {why}", self.app_id));
        let mut seen = HashSet::new();
        for f in &self.frames {
            if !seen.insert(f.frame_id) {
                return Err(bad(format!("frame {} annotated twice", f.frame_id)));
            }
            if !f.is_popup() && (f.close_button.is_some() || f.popup_group_id.is_some()) {
                return Err(bad(format!(
                    "frame {} is app content but has pop-up fields",
                    f.frame_id
                )));
            }
        }
        Ok(())
    }

    pub fn frame(&self, frame_id: u64) -> Option<&FrameAnnotation> {
        self.frames.iter().find(|f| f.frame_id == frame_id)
    }

    pub fn by_frame(&self) -> BTreeMap<u64, &FrameAnnotation> {
        self.frames.iter().map(|f| (f.frame_id, f)).collect()
    }

    /// Pop-up episodes that need dismissing: groups where at least one frame
    /// carries a close button.
    pub fn dismissable_groups(&self) -> BTreeMap<String, Vec<&FrameAnnotation>> {
        let mut groups: BTreeMap<String, Vec<&FrameAnnotation>> = BTreeMap::new();
        for f in self.frames.iter().filter(|f| f.is_popup()) {
            groups.entry(f.group_key()).or_default().push(f);
        }
        groups.retain(|_, frames| frames.iter().any(|f| f.close_button.is_some()));
        groups
    }
}

#[derive(Deserialize)]
#[serde(untagged)]
enum OneOrMany {
    One(RecordingAnnotation),
    Many(Vec<RecordingAnnotation>),
}

/// Parse an annotation file holding one recording or an array of them.
pub fn parse_annotations(text: &str) -> Result<Vec<RecordingAnnotation>, EvalError> {
    let parsed: OneOrMany =
        serde_json::from_str(text).map_err(|e| EvalError::InvalidAnnotation(e.to_string()))?;
    let recs = match parsed {
        OneOrMany::One(r) => vec![r],
        OneOrMany::Many(v) => v,
    };
    let mut apps = HashSet::new();
    for r in &recs {
        r.validate()?;
        if !apps.insert(r.app_id.clone()) {
            return Err(EvalError::InvalidAnnotation(format!(
                "app {} listed twice",
                r.app_id
            )));
        }
    }
    Ok(recs)
}

pub fn load_annotations(path: &Path) -> Result<Vec<RecordingAnnotation>, EvalError> {
    let text = fs::read_to_string(path)
        .map_err(|e| EvalError::InvalidAnnotation(format!("{}: {e}", path.display())))?;
    parse_annotations(&text)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_single_and_many() {
        let one = r#"{"app_id": "a", "frames": [
            {"frame_id": 0, "label": "app_content"},
            {"frame_id": 1, "label": "popup", "close_button": [1, 2, 3, 4], "popup_group_id": "g1"}
        ]}"#;
        let recs = parse_annotations(one).unwrap();
        assert_eq!(recs.len(), 1);
        assert_eq!(
            recs[0].frame(1).unwrap().close_button.unwrap().corners(),
            [1.0, 2.0, 3.0, 4.0]
        );
        let many = format!("[{one}, {}]", one.replace("\"a\"", "\"b\""));
        assert_eq!(parse_annotations(&many).unwrap().len(), 2);
        let dup = format!("[{one}, {one}]");
        assert!(parse_annotations(&dup).is_err());
    }

    #[test]
    fn rejects_popup_fields_on_content() {
        let bad = r#"{"app_id": "a", "frames": [
            {"frame_id": 0, "label": "app_content", "close_button": [1, 2, 3, 4]}]}"#;
        assert!(matches!(
            parse_annotations(bad),
            Err(EvalError::InvalidAnnotation(_))
        ));
        let bad = r#"{"app_id": "a", "frames": [
            {"frame_id": 0, "label": "app_content", "popup_group_id": "g"}]}"#;
        assert!(parse_annotations(bad).is_err());
        let dup = r#"{"app_id": "a", "frames": [
            {"frame_id": 0, "label": "app_content"}, {"frame_id": 0, "label": "popup"}]}"#;
        assert!(parse_annotations(dup).is_err());
    }

    #[test]
    fn groups_need_a_button() {
        let text = r#"{"app_id": "a", "frames": [
            {"frame_id": 0, "label": "popup", "popup_group_id": "nobutton"},
            {"frame_id": 1, "label": "popup", "popup_group_id": "g", "close_button": [0, 0, 5, 5]},
            {"frame_id": 2, "label": "popup", "popup_group_id": "g"},
            {"frame_id": 3, "label": "popup", "close_button": [0, 0, 5, 5]}
        ]}"#;
        let rec = &parse_annotations(text).unwrap()[0];
        let groups = rec.dismissable_groups();
        assert_eq!(groups.len(), 2);
        assert_eq!(groups["g"].len(), 2);
        assert!(groups.contains_key("#frame-3"));
    }
}
