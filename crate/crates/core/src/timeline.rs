//! Render-ready timeline geometry for one file of a session.
//!
//! The x-axis is session time in milliseconds, the y-axis is 1-based line
//! number. The model is plain data: the UI draws it without recomputing
//! anything, and tests assert on it directly.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::provenance::LabeledSession;
use crate::replay::{line_of_offset, line_starts, ChatRef, Document, Label, ReplayError, Source};
use crate::session_log::{ChatRole, EditKind, SessionLog};

/// Bumped whenever the exported JSON shape changes.
pub const TIMELINE_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MarkerKind {
    Insert,
    Delete,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Marker {
    pub t: u64,
    pub line: usize,
    pub kind: MarkerKind,
    pub seq: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source: Option<Source>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Overlay {
    pub t_start: u64,
    pub t_end: u64,
    pub line_start: usize,
    pub line_end: usize,
    pub source: Source,
    pub origin_seq: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub chat_ref: Option<ChatRef>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatBar {
    pub t: u64,
    pub role: ChatRole,
    /// Word count of the message.
    pub height: usize,
    pub text: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EnvelopePoint {
    pub t: u64,
    pub line_count: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Projection {
    pub first_visible_line: usize,
    pub last_visible_line: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TimelineModel {
    pub schema_version: u32,
    pub session_id: String,
    pub file_path: String,
    pub t_min: u64,
    pub t_max: u64,
    pub max_line: usize,
    /// Piecewise constant: the value at `t` is that of the last point at or before `t`.
    pub envelope: Vec<EnvelopePoint>,
    pub markers: Vec<Marker>,
    pub overlays: Vec<Overlay>,
    pub chat_bars: Vec<ChatBar>,
    /// Absent when the file never has any lines.
    pub projection: Option<Projection>,
}

impl TimelineModel {
    /// Envelope value at `t`, if `t` is not before the first point.
    pub fn line_count_at(&self, t: u64) -> Option<usize> {
        let i = self.envelope.partition_point(|p| p.t <= t);
        i.checked_sub(1).map(|i| self.envelope[i].line_count)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ViewportHints {
    /// Lines currently visible in the code pane.
    pub visible_lines: Option<(usize, usize)>,
    /// Maximum characters of changed text shown per zoom entry.
    pub excerpt_len: usize,
}

impl Default for ViewportHints {
    fn default() -> Self {
        ViewportHints {
            visible_lines: None,
            excerpt_len: 80,
        }
    }
}

/// Default number of lines the code pane shows.
pub const DEFAULT_VISIBLE_LINES: usize = 40;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ZoomEntry {
    pub seq: u64,
    pub t: u64,
    pub line: usize,
    pub kind: EditKind,
    pub inserted_excerpt: String,
    pub removed_excerpt: String,
    pub truncated: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ZoomDetail {
    pub t0: u64,
    pub t1: u64,
    pub entries: Vec<ZoomEntry>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PickRadius {
    pub time_ms: f64,
    pub lines: f64,
}

impl Default for PickRadius {
    fn default() -> Self {
        PickRadius {
            time_ms: 2000.0,
            lines: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "target", rename_all = "snake_case")]
pub enum HitTarget {
    Marker {
        marker_index: usize,
        seq: u64,
        kind: MarkerKind,
        line: usize,
        offset: usize,
    },
    Overlay {
        overlay_index: usize,
        source: Source,
        line_start: usize,
        line_end: usize,
        offset: usize,
    },
    Position {
        line: usize,
        offset: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TimelineError {
    #[error("({t} ms, line {line}) lies outside the timeline extent")]
    OutOfExtent { t: u64, line: usize },
    #[error(transparent)]
    Replay(#[from] ReplayError),
}

#[derive(Debug, Clone)]
struct EditEntry {
    seq: u64,
    t: u64,
    kind: EditKind,
    offset: usize,
    line: usize,
    inserted: String,
    removed: String,
}

// Document layout after every edit at one timestamp.
#[derive(Debug, Clone)]
struct Layout {
    t: u64,
    line_starts: Vec<usize>,
    len: usize,
}

type OverlayKey = (Source, u64, Option<ChatRef>);

/// Precomputed replay of one file; answers model, zoom and pick queries.
#[derive(Debug, Clone)]
pub struct TimelineContext {
    session_id: String,
    file_path: String,
    t_min: u64,
    t_max: u64,
    entries: Vec<EditEntry>,
    initial: Layout,
    layouts: Vec<Layout>,
    envelope: Vec<EnvelopePoint>,
    markers: Vec<Marker>,
    overlays: Vec<Overlay>,
    chat_bars: Vec<ChatBar>,
}

fn overlay_ranges(doc: &Document, starts: &[usize]) -> BTreeMap<OverlayKey, (usize, usize)> {
    let mut out: BTreeMap<OverlayKey, (usize, usize)> = BTreeMap::new();
    for s in doc.spans().iter().filter(|s| s.source.is_ai()) {
        let lo = line_of_offset(starts, s.start);
        let hi = line_of_offset(starts, s.end - 1);
        out.entry((s.source, s.origin_seq, s.chat_ref))
            .and_modify(|r| {
                r.0 = r.0.min(lo);
                r.1 = r.1.max(hi);
            })
            .or_insert((lo, hi));
    }
    out
}

impl TimelineContext {
    pub fn new(log: &SessionLog, labeled: &LabeledSession, file_path: &str) -> Result<Self, ReplayError> {
        if !log.has_file(file_path) {
            return Err(ReplayError::UnknownFile(file_path.to_string()));
        }
        let t_min = 0;
        let last_ts = log.events.iter().map(|e| e.timestamp_ms()).max().unwrap_or(0);
        let mut t_max = last_ts.max(log.metadata.duration_ms);

        let mut doc = Document::new(file_path, log.starter_text(file_path));
        let initial = Layout {
            t: t_min,
            line_starts: line_starts(doc.chars()),
            len: doc.len(),
        };
        let mut envelope = vec![EnvelopePoint {
            t: t_min,
            line_count: doc.line_count(),
        }];
        let mut entries = Vec::new();
        let mut layouts: Vec<Layout> = Vec::new();
        let mut overlays = Vec::new();
        let mut open: BTreeMap<OverlayKey, (usize, usize, u64)> = BTreeMap::new();

        let edits: Vec<_> = log
            .edits()
            .filter(|e| e.file_path == file_path && e.kind != EditKind::FileAction)
            .collect();
        let mut i = 0;
        let mut starts = initial.line_starts.clone();
        while i < edits.len() {
            let t = edits[i].timestamp_ms;
            while i < edits.len() && edits[i].timestamp_ms == t {
                let e = edits[i];
                entries.push(EditEntry {
                    seq: e.seq,
                    t,
                    kind: e.kind,
                    offset: e.offset,
                    line: line_of_offset(&starts, e.offset),
                    inserted: e.inserted_text.clone(),
                    removed: e.removed_text.clone(),
                });
                let label = labeled.labels.get(&e.seq).copied().unwrap_or_else(|| Label::human(e.seq));
                doc.apply(e, label)?;
                starts = line_starts(doc.chars());
                i += 1;
            }
            let count = doc.line_count();
            let last = envelope.last_mut().expect("envelope starts with the initial point");
            if last.t == t {
                // edits at t_min replace the starter value
                last.line_count = count;
            } else if last.line_count != count {
                envelope.push(EnvelopePoint { t, line_count: count });
            }

            let now = overlay_ranges(&doc, &starts);
            let stale: Vec<OverlayKey> = open
                .iter()
                .filter(|(k, (lo, hi, _))| now.get(*k) != Some(&(*lo, *hi)))
                .map(|(k, _)| *k)
                .collect();
            for k in stale {
                let (lo, hi, since) = open.remove(&k).unwrap();
                overlays.push(Overlay {
                    t_start: since,
                    t_end: t,
                    line_start: lo,
                    line_end: hi,
                    source: k.0,
                    origin_seq: k.1,
                    chat_ref: k.2,
                });
            }
            for (k, (lo, hi)) in now {
                open.entry(k).or_insert((lo, hi, t));
            }
            layouts.push(Layout {
                t,
                line_starts: starts.clone(),
                len: doc.len(),
            });
        }
        if let Some(latest) = open.values().map(|(_, _, since)| *since).max() {
            // a band opened at the very end still needs a nonzero width
            t_max = t_max.max(latest + 1);
        }
        for (k, (lo, hi, since)) in open {
            overlays.push(Overlay {
                t_start: since,
                t_end: t_max,
                line_start: lo,
                line_end: hi,
                source: k.0,
                origin_seq: k.1,
                chat_ref: k.2,
            });
        }
        overlays.sort_by_key(|o| (o.t_start, o.line_start, o.t_end, o.origin_seq));

        let mut ctx = TimelineContext {
            session_id: log.session_id.clone(),
            file_path: file_path.to_string(),
            t_min,
            t_max,
            entries,
            initial,
            layouts,
            envelope,
            markers: Vec::new(),
            overlays,
            chat_bars: log
                .chats()
                .map(|c| ChatBar {
                    t: c.timestamp_ms,
                    role: c.role,
                    height: c.word_count,
                    text: c.text.clone(),
                })
                .collect(),
        };
        ctx.markers = ctx.build_markers(labeled);
        Ok(ctx)
    }

    fn build_markers(&self, labeled: &LabeledSession) -> Vec<Marker> {
        let mut markers = Vec::with_capacity(self.entries.len() * 2);
        for e in &self.entries {
            let ceiling = self.line_count_at(e.t).max(1);
            let line = e.line.clamp(1, ceiling);
            if matches!(e.kind, EditKind::Delete | EditKind::Replace) {
                markers.push(Marker {
                    t: e.t,
                    line,
                    kind: MarkerKind::Delete,
                    seq: e.seq,
                    source: None,
                });
            }
            if matches!(e.kind, EditKind::Insert | EditKind::Replace) {
                markers.push(Marker {
                    t: e.t,
                    line,
                    kind: MarkerKind::Insert,
                    seq: e.seq,
                    source: Some(labeled.source_of(e.seq).unwrap_or(Source::Human)),
                });
            }
        }
        markers
    }

    fn line_count_at(&self, t: u64) -> usize {
        let i = self.envelope.partition_point(|p| p.t <= t);
        i.checked_sub(1).map_or(0, |i| self.envelope[i].line_count)
    }

    fn layout_at(&self, t: u64) -> &Layout {
        let i = self.layouts.partition_point(|l| l.t <= t);
        match i.checked_sub(1) {
            Some(i) => &self.layouts[i],
            None => &self.initial,
        }
    }

    pub fn file_path(&self) -> &str {
        &self.file_path
    }

    pub fn model(&self, viewport: &ViewportHints) -> TimelineModel {
        let max_line = self.envelope.iter().map(|p| p.line_count).max().unwrap_or(0);
        let projection = (max_line > 0).then(|| {
            let (lo, hi) = viewport
                .visible_lines
                .unwrap_or((1, DEFAULT_VISIBLE_LINES.min(max_line)));
            let lo = lo.clamp(1, max_line);
            Projection {
                first_visible_line: lo,
                last_visible_line: hi.clamp(lo, max_line),
            }
        });
        TimelineModel {
            schema_version: TIMELINE_SCHEMA_VERSION,
            session_id: self.session_id.clone(),
            file_path: self.file_path.clone(),
            t_min: self.t_min,
            t_max: self.t_max,
            max_line,
            envelope: self.envelope.clone(),
            markers: self.markers.clone(),
            overlays: self.overlays.clone(),
            chat_bars: self.chat_bars.clone(),
            projection,
        }
    }

    /// Edits with `t0 <= t <= t1`. An empty or inverted window yields no entries.
    pub fn zoom(&self, t0: u64, t1: u64, excerpt_len: usize) -> ZoomDetail {
        let entries = if t0 >= t1 {
            Vec::new()
        } else {
            let lo = self.entries.partition_point(|e| e.t < t0);
            let hi = self.entries.partition_point(|e| e.t <= t1);
            self.entries[lo..hi]
                .iter()
                .map(|e| {
                    let (ins, t_ins) = excerpt(&e.inserted, excerpt_len);
                    let (rem, t_rem) = excerpt(&e.removed, excerpt_len);
                    ZoomEntry {
                        seq: e.seq,
                        t: e.t,
                        line: e.line,
                        kind: e.kind,
                        inserted_excerpt: ins,
                        removed_excerpt: rem,
                        truncated: t_ins || t_rem,
                    }
                })
                .collect()
        };
        ZoomDetail { t0, t1, entries }
    }

    /// Resolves a click on the timeline.
    ///
    /// Order of preference: the nearest marker within `radius` (normalised
    /// Euclidean distance ≤ 1, earliest marker on ties), then an overlay
    /// covering the point, then the plain document position.
    pub fn hit_test(&self, t: u64, line: usize, radius: PickRadius) -> Result<HitTarget, TimelineError> {
        let max_line = self.envelope.iter().map(|p| p.line_count).max().unwrap_or(0).max(1);
        if t < self.t_min || t > self.t_max || line < 1 || line > max_line {
            return Err(TimelineError::OutOfExtent { t, line });
        }
        let reach = radius.time_ms.max(0.0).floor() as u64;
        let lo = self.markers.partition_point(|m| m.t < t.saturating_sub(reach));
        let hi = self.markers.partition_point(|m| m.t <= t.saturating_add(reach));
        let mut best: Option<(f64, usize)> = None;
        for (i, m) in self.markers[lo..hi].iter().enumerate() {
            let d = normalised_distance(m.t, m.line, t, line, radius);
            if d <= 1.0 && best.is_none_or(|(bd, _)| d < bd) {
                best = Some((d, lo + i));
            }
        }
        if let Some((_, i)) = best {
            let m = &self.markers[i];
            let offset = self
                .entries
                .iter()
                .find(|e| e.seq == m.seq)
                .map_or(0, |e| e.offset);
            return Ok(HitTarget::Marker {
                marker_index: i,
                seq: m.seq,
                kind: m.kind,
                line: m.line,
                offset,
            });
        }
        let layout = self.layout_at(t);
        let offset_of = |l: usize| layout.line_starts.get(l - 1).copied().unwrap_or(layout.len);
        if let Some((i, o)) = self
            .overlays
            .iter()
            .enumerate()
            .find(|(_, o)| o.t_start <= t && t < o.t_end && o.line_start <= line && line <= o.line_end)
        {
            return Ok(HitTarget::Overlay {
                overlay_index: i,
                source: o.source,
                line_start: o.line_start,
                line_end: o.line_end,
                offset: offset_of(o.line_start),
            });
        }
        Ok(HitTarget::Position {
            line,
            offset: offset_of(line),
        })
    }
}

/// Distance between a marker and a click, in units of the pick radius.
pub fn normalised_distance(mt: u64, mline: usize, t: u64, line: usize, radius: PickRadius) -> f64 {
    let dt = (mt as f64 - t as f64) / radius.time_ms.max(f64::MIN_POSITIVE);
    let dl = (mline as f64 - line as f64) / radius.lines.max(f64::MIN_POSITIVE);
    (dt * dt + dl * dl).sqrt()
}

fn excerpt(text: &str, max: usize) -> (String, bool) {
    let mut it = text.chars();
    let head: String = it.by_ref().take(max).collect();
    let truncated = it.next().is_some();
    (head, truncated)
}

/// Timeline for `file_path`, or the session's primary file when `None`.
pub fn build_timeline(
    log: &SessionLog,
    labeled: &LabeledSession,
    file_path: Option<&str>,
    viewport: &ViewportHints,
) -> Result<TimelineModel, ReplayError> {
    match file_path.map(str::to_string).or_else(|| log.primary_file()) {
        Some(path) => Ok(TimelineContext::new(log, labeled, &path)?.model(viewport)),
        None => Ok(empty_model(log)),
    }
}

/// Model for a session with no files at all.
pub fn empty_model(log: &SessionLog) -> TimelineModel {
    let t_max = log
        .events
        .iter()
        .map(|e| e.timestamp_ms())
        .max()
        .unwrap_or(0)
        .max(log.metadata.duration_ms);
    TimelineModel {
        schema_version: TIMELINE_SCHEMA_VERSION,
        session_id: log.session_id.clone(),
        file_path: String::new(),
        t_min: 0,
        t_max,
        max_line: 0,
        envelope: vec![EnvelopePoint { t: 0, line_count: 0 }],
        markers: Vec::new(),
        overlays: Vec::new(),
        chat_bars: log
            .chats()
            .map(|c| ChatBar {
                t: c.timestamp_ms,
                role: c.role,
                height: c.word_count,
                text: c.text.clone(),
            })
            .collect(),
        projection: None,
    }
}
