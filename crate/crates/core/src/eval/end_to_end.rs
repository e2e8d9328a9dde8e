//! Did the clicks land on close buttons, and did every pop-up get one?

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::annotation::RecordingAnnotation;
use super::classification::{precision_recall, safe_ratio, PrecisionRecall};
use super::EvalError;
use crate::engine::LogEvent;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EndToEndCounts {
    pub dismissals: u64,
    pub correct_dismissals: u64,
    /// Pop-up episodes with an annotated close button.
    pub popup_groups: u64,
    /// Episodes that received at least one correct dismissal.
    pub resolved_groups: u64,
    /// Apps with at least one dismissable episode.
    pub apps: u64,
    pub apps_fully_resolved: u64,
}

impl EndToEndCounts {
    pub fn add(&mut self, other: &EndToEndCounts) {
        self.dismissals += other.dismissals;
        self.correct_dismissals += other.correct_dismissals;
        self.popup_groups += other.popup_groups;
        self.resolved_groups += other.resolved_groups;
        self.apps += other.apps;
        self.apps_fully_resolved += other.apps_fully_resolved;
    }

    /// Precision over dismissals, recall over pop-up episodes.
    pub fn metrics(&self) -> PrecisionRecall<f64> {
        let p: f64 = safe_ratio(self.correct_dismissals, self.dismissals);
        let r: f64 = safe_ratio(self.resolved_groups, self.popup_groups);
        PrecisionRecall {
            precision: p,
            recall: r,
            f1: super::classification::f1_score(p, r),
        }
    }

    pub fn apps_fully_resolved_fraction(&self) -> f64 {
        safe_ratio(self.apps_fully_resolved, self.apps)
    }
}

/// Score one recording against the events logged for it.
pub fn score_recording(
    recording: &RecordingAnnotation,
    events: &[&LogEvent],
) -> Result<EndToEndCounts, EvalError> {
    let frames = recording.by_frame();
    let groups = recording.dismissable_groups();
    let mut resolved = BTreeSet::new();
    let mut counts = EndToEndCounts {
        popup_groups: groups.len() as u64,
        ..EndToEndCounts::default()
    };
    for ev in events {
        let ann = frames.get(&ev.frame_id).ok_or_else(|| {
            EvalError::FrameCoverageMismatch(format!(
                "frame {} of {} has no annotation",
                ev.frame_id, recording.app_id
            ))
        })?;
        let Some(click) = ev.click.filter(|_| ev.is_click()) else {
            continue;
        };
        counts.dismissals += 1;
        let hit = ann.is_popup()
            && ann
                .close_button
                .is_some_and(|b| b.contains(crate::geometry::Point { x: click.x, y: click.y }));
        if hit {
            counts.correct_dismissals += 1;
            resolved.insert(ann.group_key());
        }
    }
    counts.resolved_groups = groups.keys().filter(|g| resolved.contains(*g)).count() as u64;
    if !groups.is_empty() {
        counts.apps = 1;
        counts.apps_fully_resolved = (counts.resolved_groups == counts.popup_groups) as u64;
    }
    Ok(counts)
}

/// Assign logged sessions to annotated recordings. A session pairs with the
/// recording whose `app_id` equals its name; a log holding exactly one
/// session pairs with a lone recording regardless of names.
pub fn pair_sessions<'a>(
    events: &'a [LogEvent],
    annotations: &'a [RecordingAnnotation],
) -> Result<Vec<(&'a RecordingAnnotation, Vec<&'a LogEvent>)>, EvalError> {
    let mut by_session: BTreeMap<&str, Vec<&LogEvent>> = BTreeMap::new();
    for ev in events {
        by_session.entry(ev.session.as_str()).or_default().push(ev);
    }
    if by_session.len() == 1 && annotations.len() == 1 {
        let (_, evs) = by_session.pop_first().expect("one session");
        return Ok(vec![(&annotations[0], evs)]);
    }
    let known: BTreeSet<&str> = annotations.iter().map(|a| a.app_id.as_str()).collect();
    if let Some(stray) = by_session.keys().find(|s| !known.contains(*s)) {
        return Err(EvalError::FrameCoverageMismatch(format!(
            "session {stray} has no annotated recording"
        )));
    }
    Ok(annotations
        .iter()
        .map(|a| (a, by_session.remove(a.app_id.as_str()).unwrap_or_default()))
        .collect())
}

/// End-to-end precision, recall, F1 and the fully-resolved app fraction.
pub fn end_to_end_metrics(
    events: &[LogEvent],
    annotations: &[RecordingAnnotation],
) -> Result<(EndToEndCounts, PrecisionRecall<f64>, f64), EvalError> {
    let mut total = EndToEndCounts::default();
    for (rec, evs) in pair_sessions(events, annotations)? {
        total.add(&score_recording(rec, &evs)?);
    }
    let m = total.metrics();
    Ok((total, m, total.apps_fully_resolved_fraction()))
}

/// Same as [`precision_recall`] but for callers holding raw tallies.
pub fn from_tallies(correct: u64, dismissals: u64, popups: u64) -> PrecisionRecall<f64> {
    precision_recall(correct, dismissals, popups)
}
