//! Browser bindings for the timeline demo page.
//!
//! Every export returns JSON text; the page parses it and draws on a canvas.
//! The [`Demo`] methods are plain Rust underneath, so they are tested natively.

use std::collections::BTreeMap;

use codetrail_core::forge::{forge_session, ForgeConfig};
use codetrail_core::metrics::{compute_metrics, SegmentationRules};
use codetrail_core::provenance::{label_session, similarity, tokenize, LabeledSession, ProvenanceConfig};
use codetrail_core::replay::snapshot_at_labeled;
use codetrail_core::session_log::{parse_session, validate_log, SessionLog};
use codetrail_core::timeline::{PickRadius, TimelineContext, ViewportHints};
use wasm_bindgen::prelude::*;

fn to_json<T: serde::Serialize>(v: &T) -> String {
    serde_json::to_string(v).expect("model types serialise")
}

fn js_err(e: impl std::fmt::Display) -> JsError {
    JsError::new(&e.to_string())
}

/// A loaded session with its labels and one timeline per file.
#[wasm_bindgen]
pub struct Demo {
    log: SessionLog,
    labeled: LabeledSession,
    timelines: BTreeMap<String, TimelineContext>,
}

impl Demo {
    pub fn from_log(log: SessionLog, theta: f64) -> Result<Demo, String> {
        validate_log(&log).map_err(|e| e.to_string())?;
        let cfg = ProvenanceConfig::default().with_threshold(theta);
        cfg.validate().map_err(|e| e.to_string())?;
        let labeled = label_session(&log, &cfg).map_err(|e| e.to_string())?;
        let mut timelines = BTreeMap::new();
        for file in log.file_paths() {
            let ctx = TimelineContext::new(&log, &labeled, &file).map_err(|e| e.to_string())?;
            timelines.insert(file, ctx);
        }
        Ok(Demo { log, labeled, timelines })
    }

    pub fn from_json(text: &str, theta: f64) -> Result<Demo, String> {
        let log = parse_session(text.as_bytes()).map_err(|e| e.to_string())?;
        Demo::from_log(log, theta)
    }

    fn context(&self, file: &str) -> Result<&TimelineContext, String> {
        self.timelines.get(file).ok_or_else(|| format!("unknown file {file:?}"))
    }

    pub fn timeline_json(&self, file: &str, first_line: usize, last_line: usize) -> Result<String, String> {
        let visible_lines = (first_line > 0 && first_line <= last_line).then_some((first_line, last_line));
        let hints = ViewportHints { visible_lines, ..ViewportHints::default() };
        Ok(to_json(&self.context(file)?.model(&hints)))
    }

    pub fn pick_json(&self, file: &str, t: f64, line: usize) -> Result<String, String> {
        let hit = self
            .context(file)?
            .hit_test(t.max(0.0) as u64, line, PickRadius::default())
            .map_err(|e| e.to_string())?;
        Ok(to_json(&hit))
    }

    pub fn snapshot_json(&self, file: &str, t: f64) -> Result<String, String> {
        self.context(file)?;
        let snap = snapshot_at_labeled(&self.log, file, t.max(0.0) as u64, &self.labeled.labels)
            .map_err(|e| e.to_string())?;
        Ok(to_json(&snap))
    }
}

#[wasm_bindgen]
impl Demo {
    /// Parses and labels a session log given as JSON text.
    #[wasm_bindgen(constructor)]
    pub fn new(text: &str, theta: f64) -> Result<Demo, JsError> {
        Demo::from_json(text, theta).map_err(js_err)
    }

    /// A generated session with pasted, completed and retyped assistant code.
    pub fn sample(seed: u32, edits: u32, theta: f64) -> Result<Demo, JsError> {
        let forged = forge_session(&ForgeConfig::new(u64::from(seed), edits as usize));
        Demo::from_log(forged.log, theta).map_err(js_err)
    }

    #[wasm_bindgen(js_name = sessionJson)]
    pub fn session_json(&self) -> String {
        String::from_utf8(codetrail_core::session_log::serialize_session(&self.log)).expect("utf-8 json")
    }

    pub fn files(&self) -> Vec<String> {
        self.timelines.keys().cloned().collect()
    }

    #[wasm_bindgen(js_name = primaryFile)]
    pub fn primary_file(&self) -> Option<String> {
        self.log.primary_file().or_else(|| self.timelines.keys().next().cloned())
    }

    /// Timeline model for one file; `first_line = 0` means no viewport.
    pub fn timeline(&self, file: &str, first_line: usize, last_line: usize) -> Result<String, JsError> {
        self.timeline_json(file, first_line, last_line).map_err(js_err)
    }

    /// What a click at `(t, line)` selects: a marker, an overlay or a position.
    pub fn pick(&self, file: &str, t: f64, line: usize) -> Result<String, JsError> {
        self.pick_json(file, t, line).map_err(js_err)
    }

    /// Text and provenance spans of `file` as of time `t`.
    pub fn snapshot(&self, file: &str, t: f64) -> Result<String, JsError> {
        self.snapshot_json(file, t).map_err(js_err)
    }

    pub fn metrics(&self) -> String {
        to_json(&compute_metrics(&self.log, &self.labeled, &SegmentationRules::default()))
    }
}

/// Token-level LCS similarity of two code fragments, in `[0, 1]`.
#[wasm_bindgen(js_name = codeSimilarity)]
pub fn code_similarity(a: &str, b: &str) -> f64 {
    similarity(&tokenize(a), &tokenize(b))
}

#[cfg(test)]
mod tests {
    use super::*;
    use codetrail_core::timeline::{build_timeline, HitTarget, TimelineModel};

    fn sample() -> Demo {
        let log = forge_session(&ForgeConfig::new(3, 200)).log;
        Demo::from_log(log, 0.8).unwrap()
    }

    #[test]
    fn timeline_matches_core_model() {
        let d = sample();
        let file = d.primary_file().unwrap();
        let got: TimelineModel = serde_json::from_str(&d.timeline_json(&file, 0, 0).unwrap()).unwrap();
        let want = build_timeline(&d.log, &d.labeled, Some(&file), &ViewportHints::default()).unwrap();
        assert_eq!(got, want);
        let v: serde_json::Value = serde_json::from_str(&d.timeline_json(&file, 2, 9).unwrap()).unwrap();
        assert!(v["projection"].is_object());
    }

    #[test]
    fn picking_a_marker_reports_its_seq() {
        let d = sample();
        let file = d.primary_file().unwrap();
        let m: TimelineModel = serde_json::from_str(&d.timeline_json(&file, 0, 0).unwrap()).unwrap();
        let mk = &m.markers[m.markers.len() / 2];
        let hit: HitTarget = serde_json::from_str(&d.pick_json(&file, mk.t as f64, mk.line).unwrap()).unwrap();
        assert!(matches!(hit, HitTarget::Marker { .. }), "{hit:?}");
    }

    #[test]
    fn snapshot_carries_labels() {
        let d = sample();
        let file = d.primary_file().unwrap();
        let v: serde_json::Value = serde_json::from_str(&d.snapshot_json(&file, f64::MAX).unwrap()).unwrap();
        assert_eq!(v["text"], d.labeled.documents[&file].text.as_str());
        assert_eq!(v["spans"], serde_json::to_value(&d.labeled.documents[&file].spans).unwrap());
        assert!(d.snapshot_json("nope.py", 0.0).is_err());
    }

    #[test]
    fn round_trips_through_json_text() {
        let d = sample();
        let again = Demo::from_json(&d.session_json(), 0.8).unwrap();
        assert_eq!(again.metrics(), d.metrics());
        assert!(Demo::from_json("{", 0.8).is_err());
        assert!(Demo::from_json(&d.session_json(), 1.5).is_err());
    }

    #[test]
    fn similarity_bounds() {
        assert_eq!(code_similarity("x = 1", "x = 1"), 1.0);
        assert_eq!(code_similarity("for i in range(10):", "for j in range(10):"), 14.0 / 16.0);
        assert!(code_similarity("a", "b") < 0.5);
    }
}
