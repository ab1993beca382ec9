//! Deterministic document reconstruction with provenance spans.
//!
//! A [`Document`] holds the text of one file as Unicode scalar values plus a
//! sorted, non-overlapping list of [`ProvenanceSpan`]s whose union is exactly
//! `[0, len)`. Replace events are applied as a delete followed by an insert at
//! the same offset.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::session_log::{EditEvent, EditKind, SessionLog};

/// Origin of a stretch of code.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Source {
    Human,
    AiPaste,
    AiComplete,
    AiSimilar,
    HumanEditOfAi,
}

impl Source {
    pub const ALL: [Source; 5] = [
        Source::Human,
        Source::AiPaste,
        Source::AiComplete,
        Source::AiSimilar,
        Source::HumanEditOfAi,
    ];

    /// Pasted, completed, or retyped from an assistant.
    pub fn is_ai(self) -> bool {
        matches!(self, Source::AiPaste | Source::AiComplete | Source::AiSimilar)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Source::Human => "HUMAN",
            Source::AiPaste => "AI_PASTE",
            Source::AiComplete => "AI_COMPLETE",
            Source::AiSimilar => "AI_SIMILAR",
            Source::HumanEditOfAi => "HUMAN_EDIT_OF_AI",
        }
    }
}

impl fmt::Display for Source {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Points at one fenced code block of an assistant message.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ChatRef {
    pub timestamp_ms: u64,
    pub block_index: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ProvenanceSpan {
    pub start: usize,
    pub end: usize,
    pub source: Source,
    pub origin_seq: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub chat_ref: Option<ChatRef>,
}

impl ProvenanceSpan {
    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.end == self.start
    }

    fn same_class(&self, other: &ProvenanceSpan) -> bool {
        self.source == other.source && self.chat_ref == other.chat_ref
    }
}

/// What an insertion is attributed to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Label {
    pub source: Source,
    pub origin_seq: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub chat_ref: Option<ChatRef>,
}

impl Label {
    pub fn human(origin_seq: u64) -> Self {
        Label {
            source: Source::Human,
            origin_seq,
            chat_ref: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DocumentSnapshot {
    pub file_path: String,
    pub timestamp_ms: u64,
    pub text: String,
    pub line_count: usize,
    pub spans: Vec<ProvenanceSpan>,
}

impl DocumentSnapshot {
    pub fn empty(file_path: &str) -> Self {
        DocumentSnapshot {
            file_path: file_path.to_string(),
            timestamp_ms: 0,
            text: String::new(),
            line_count: 0,
            spans: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ReplayError {
    #[error("offset out of range at seq {seq}: offset {offset} + {removed} removed exceeds length {len}")]
    OffsetOutOfRange {
        seq: u64,
        offset: usize,
        removed: usize,
        len: usize,
    },
    #[error("removed text mismatch at seq {seq}: event says {expected:?}, document has {actual:?}")]
    RemovedTextMismatch {
        seq: u64,
        expected: String,
        actual: String,
    },
    #[error("unknown file `{0}`")]
    UnknownFile(String),
}

/// `1 + newlines`, or 0 for empty text.
pub fn line_count_of<I: IntoIterator<Item = char>>(chars: I) -> usize {
    let mut any = false;
    let mut newlines = 0;
    for c in chars {
        any = true;
        if c == '\n' {
            newlines += 1;
        }
    }
    if any {
        newlines + 1
    } else {
        0
    }
}

/// Char offsets at which each line begins. Always contains at least `0`.
pub fn line_starts(text: &[char]) -> Vec<usize> {
    let mut starts = vec![0];
    starts.extend(
        text.iter()
            .enumerate()
            .filter(|(_, c)| **c == '\n')
            .map(|(i, _)| i + 1),
    );
    starts
}

/// 1-based line holding char `offset`, given [`line_starts`] output.
pub fn line_of_offset(starts: &[usize], offset: usize) -> usize {
    starts.partition_point(|&s| s <= offset).max(1)
}

/// Mutable replay state for one file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Document {
    file_path: String,
    text: Vec<char>,
    spans: Vec<ProvenanceSpan>,
    timestamp_ms: u64,
}

impl Document {
    pub fn new(file_path: &str, starter: &str) -> Self {
        let text: Vec<char> = starter.chars().collect();
        let spans = if text.is_empty() {
            Vec::new()
        } else {
            vec![ProvenanceSpan {
                start: 0,
                end: text.len(),
                source: Source::Human,
                origin_seq: 0,
                chat_ref: None,
            }]
        };
        Document {
            file_path: file_path.to_string(),
            text,
            spans,
            timestamp_ms: 0,
        }
    }

    pub fn from_snapshot(snapshot: &DocumentSnapshot) -> Self {
        Document {
            file_path: snapshot.file_path.clone(),
            text: snapshot.text.chars().collect(),
            spans: snapshot.spans.clone(),
            timestamp_ms: snapshot.timestamp_ms,
        }
    }

    pub fn file_path(&self) -> &str {
        &self.file_path
    }

    pub fn chars(&self) -> &[char] {
        &self.text
    }

    pub fn len(&self) -> usize {
        self.text.len()
    }

    pub fn is_empty(&self) -> bool {
        self.text.is_empty()
    }

    pub fn spans(&self) -> &[ProvenanceSpan] {
        &self.spans
    }

    pub fn text(&self) -> String {
        self.text.iter().collect()
    }

    pub fn line_count(&self) -> usize {
        line_count_of(self.text.iter().copied())
    }

    pub fn set_timestamp(&mut self, t: u64) {
        self.timestamp_ms = t;
    }

    pub fn snapshot(&self) -> DocumentSnapshot {
        DocumentSnapshot {
            file_path: self.file_path.clone(),
            timestamp_ms: self.timestamp_ms,
            text: self.text(),
            line_count: self.line_count(),
            spans: self.spans.clone(),
        }
    }

    /// Span covering char `idx`.
    pub fn span_at(&self, idx: usize) -> Option<&ProvenanceSpan> {
        let i = self.spans.partition_point(|s| s.end <= idx);
        self.spans.get(i).filter(|s| s.start <= idx)
    }

    /// Checks an event against the current text without mutating anything.
    pub fn check(&self, event: &EditEvent) -> Result<(), ReplayError> {
        if event.kind == EditKind::FileAction {
            return Ok(());
        }
        let removed = event.removed_text.chars().count();
        if event.offset > self.text.len() || event.offset + removed > self.text.len() {
            return Err(ReplayError::OffsetOutOfRange {
                seq: event.seq,
                offset: event.offset,
                removed,
                len: self.text.len(),
            });
        }
        if removed > 0 {
            let actual = &self.text[event.offset..event.offset + removed];
            if !actual.iter().copied().eq(event.removed_text.chars()) {
                return Err(ReplayError::RemovedTextMismatch {
                    seq: event.seq,
                    expected: event.removed_text.clone(),
                    actual: actual.iter().collect(),
                });
            }
        }
        Ok(())
    }

    /// Applies one edit. `label` attributes the inserted text, if any.
    pub fn apply(&mut self, event: &EditEvent, label: Label) -> Result<(), ReplayError> {
        self.check(event)?;
        self.timestamp_ms = self.timestamp_ms.max(event.timestamp_ms);
        if event.kind == EditKind::FileAction {
            return Ok(());
        }
        let removed = event.removed_text.chars().count();
        if removed > 0 {
            self.delete_range(event.offset, removed);
        }
        if !event.inserted_text.is_empty() {
            let chars: Vec<char> = event.inserted_text.chars().collect();
            self.insert_chars(event.offset, &chars, label);
        }
        Ok(())
    }

    fn delete_range(&mut self, start: usize, n: usize) {
        let end = start + n;
        self.text.drain(start..end);
        let mut out = Vec::with_capacity(self.spans.len() + 1);
        for s in self.spans.drain(..) {
            if s.end <= start {
                out.push(s);
            } else if s.start >= end {
                out.push(ProvenanceSpan {
                    start: s.start - n,
                    end: s.end - n,
                    ..s
                });
            } else {
                // keep whatever lies outside [start, end)
                let keep_left = start.saturating_sub(s.start);
                let keep_right = s.end.saturating_sub(end);
                let new_start = s.start.min(start);
                let kept = keep_left + keep_right;
                if kept > 0 {
                    out.push(ProvenanceSpan {
                        start: new_start,
                        end: new_start + kept,
                        ..s
                    });
                }
            }
        }
        self.spans = out;
        self.merge_adjacent();
    }

    fn insert_chars(&mut self, offset: usize, chars: &[char], label: Label) {
        let n = chars.len();
        self.text.splice(offset..offset, chars.iter().copied());
        let new_span = ProvenanceSpan {
            start: offset,
            end: offset + n,
            source: label.source,
            origin_seq: label.origin_seq,
            chat_ref: label.chat_ref,
        };
        let mut out = Vec::with_capacity(self.spans.len() + 3);
        let mut placed = false;
        for s in self.spans.drain(..) {
            if s.end <= offset {
                out.push(s);
            } else if s.start >= offset {
                if !placed {
                    out.push(new_span);
                    placed = true;
                }
                out.push(ProvenanceSpan {
                    start: s.start + n,
                    end: s.end + n,
                    ..s
                });
            } else {
                // strictly inside: split in three
                out.push(ProvenanceSpan { end: offset, ..s });
                out.push(new_span);
                out.push(ProvenanceSpan {
                    start: offset + n,
                    end: s.end + n,
                    ..s
                });
                placed = true;
            }
        }
        if !placed {
            out.push(new_span);
        }
        self.spans = out;
        self.merge_adjacent();
    }

    /// Re-attributes `[start, end)`; used when a typed run is recognised
    /// after the fact.
    pub fn relabel_range(&mut self, start: usize, end: usize, label: Label) {
        let end = end.min(self.text.len());
        if start >= end {
            return;
        }
        let mut out = Vec::with_capacity(self.spans.len() + 2);
        let mut placed = false;
        for s in self.spans.drain(..) {
            if s.end <= start || s.start >= end {
                if s.start >= end && !placed {
                    out.push(ProvenanceSpan {
                        start,
                        end,
                        source: label.source,
                        origin_seq: label.origin_seq,
                        chat_ref: label.chat_ref,
                    });
                    placed = true;
                }
                out.push(s);
                continue;
            }
            if s.start < start {
                out.push(ProvenanceSpan { end: start, ..s });
            }
            if !placed {
                out.push(ProvenanceSpan {
                    start,
                    end,
                    source: label.source,
                    origin_seq: label.origin_seq,
                    chat_ref: label.chat_ref,
                });
                placed = true;
            }
            if s.end > end {
                out.push(ProvenanceSpan { start: end, ..s });
            }
        }
        if !placed {
            out.push(ProvenanceSpan {
                start,
                end,
                source: label.source,
                origin_seq: label.origin_seq,
                chat_ref: label.chat_ref,
            });
        }
        self.spans = out;
        self.merge_adjacent();
    }

    fn merge_adjacent(&mut self) {
        let mut merged: Vec<ProvenanceSpan> = Vec::with_capacity(self.spans.len());
        for s in self.spans.drain(..) {
            if s.is_empty() {
                continue;
            }
            match merged.last_mut() {
                Some(prev) if prev.end == s.start && prev.same_class(&s) => {
                    prev.end = s.end;
                    prev.origin_seq = prev.origin_seq.min(s.origin_seq);
                }
                _ => merged.push(s),
            }
        }
        self.spans = merged;
    }

    /// Sorted, non-overlapping, nonempty, and covering `[0, len)` exactly.
    pub fn partition_holds(&self) -> bool {
        spans_partition(&self.spans, self.text.len())
    }
}

pub fn spans_partition(spans: &[ProvenanceSpan], len: usize) -> bool {
    let mut cursor = 0;
    for s in spans {
        if s.start != cursor || s.end <= s.start {
            return false;
        }
        cursor = s.end;
    }
    cursor == len
}

/// Applies `event` to a snapshot, returning the successor snapshot.
pub fn apply_event(
    snapshot: &DocumentSnapshot,
    event: &EditEvent,
    label: Label,
) -> Result<DocumentSnapshot, ReplayError> {
    let mut doc = Document::from_snapshot(snapshot);
    doc.apply(event, label)?;
    Ok(doc.snapshot())
}

/// Supplies the label for each insertion during replay.
pub trait LabelLookup {
    fn label_for(&self, event: &EditEvent) -> Label;
}

/// Labels everything HUMAN.
#[derive(Debug, Clone, Copy, Default)]
pub struct Unlabeled;

impl LabelLookup for Unlabeled {
    fn label_for(&self, event: &EditEvent) -> Label {
        Label::human(event.seq)
    }
}

impl LabelLookup for BTreeMap<u64, Label> {
    fn label_for(&self, event: &EditEvent) -> Label {
        self.get(&event.seq)
            .copied()
            .unwrap_or_else(|| Label::human(event.seq))
    }
}

/// Forward-only replay over one file of a log.
///
/// Each edit is applied at most once regardless of how many times
/// [`Replayer::advance_to`] is called.
pub struct Replayer<'a, L: LabelLookup> {
    edits: Vec<&'a EditEvent>,
    labels: &'a L,
    next: usize,
    applied: usize,
    doc: Document,
}

impl<'a, L: LabelLookup> Replayer<'a, L> {
    pub fn new(log: &'a SessionLog, file_path: &str, labels: &'a L) -> Result<Self, ReplayError> {
        if !log.has_file(file_path) {
            return Err(ReplayError::UnknownFile(file_path.to_string()));
        }
        Ok(Replayer {
            edits: log.edits().filter(|e| e.file_path == file_path).collect(),
            labels,
            next: 0,
            applied: 0,
            doc: Document::new(file_path, log.starter_text(file_path)),
        })
    }

    /// Applies every pending edit with `timestamp_ms <= t`.
    pub fn advance_to(&mut self, t: u64) -> Result<&Document, ReplayError> {
        while let Some(e) = self.edits.get(self.next) {
            if e.timestamp_ms > t {
                break;
            }
            self.doc.apply(e, self.labels.label_for(e))?;
            self.next += 1;
            self.applied += 1;
        }
        self.doc.set_timestamp(t);
        Ok(&self.doc)
    }

    pub fn finish(mut self) -> Result<Document, ReplayError> {
        self.advance_to(u64::MAX)?;
        Ok(self.doc)
    }

    pub fn applied_count(&self) -> usize {
        self.applied
    }

    pub fn document(&self) -> &Document {
        &self.doc
    }
}

/// Snapshot of `file_path` after every edit with `timestamp_ms <= t`,
/// with all insertions labelled HUMAN.
pub fn snapshot_at(log: &SessionLog, file_path: &str, t: u64) -> Result<DocumentSnapshot, ReplayError> {
    snapshot_at_labeled(log, file_path, t, &Unlabeled)
}

pub fn snapshot_at_labeled<L: LabelLookup>(
    log: &SessionLog,
    file_path: &str,
    t: u64,
    labels: &L,
) -> Result<DocumentSnapshot, ReplayError> {
    let mut r = Replayer::new(log, file_path, labels)?;
    r.advance_to(t)?;
    let mut snap = r.document().snapshot();
    snap.timestamp_ms = t;
    Ok(snap)
}

/// Line count at each sample time, in one forward pass.
///
/// `sample_points` must be sorted ascending.
pub fn length_envelope(
    log: &SessionLog,
    file_path: &str,
    sample_points: &[u64],
) -> Result<Vec<(u64, usize)>, ReplayError> {
    debug_assert!(sample_points.windows(2).all(|w| w[0] <= w[1]));
    let mut r = Replayer::new(log, file_path, &Unlabeled)?;
    let mut out = Vec::with_capacity(sample_points.len());
    for &t in sample_points {
        let n = r.advance_to(t)?.line_count();
        out.push((t, n));
    }
    Ok(out)
}

/// Replays every file of a log to the end.
pub fn replay_all<L: LabelLookup>(
    log: &SessionLog,
    labels: &L,
) -> Result<BTreeMap<String, DocumentSnapshot>, ReplayError> {
    let mut out = BTreeMap::new();
    for path in log.file_paths() {
        let doc = Replayer::new(log, &path, labels)?.finish()?;
        out.insert(path, doc.snapshot());
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::session_log::{Event, InputHint};

    fn ins(seq: u64, offset: usize, text: &str) -> EditEvent {
        EditEvent::splice("s", seq, seq * 10, "f", offset, "", text, InputHint::Keystroke)
    }

    fn del(seq: u64, offset: usize, text: &str) -> EditEvent {
        EditEvent::splice("s", seq, seq * 10, "f", offset, text, "", InputHint::Keystroke)
    }

    fn label(source: Source, seq: u64) -> Label {
        Label {
            source,
            origin_seq: seq,
            chat_ref: None,
        }
    }

    #[test]
    fn insert_into_empty() {
        let snap = apply_event(&DocumentSnapshot::empty("f"), &ins(1, 0, "a"), Label::human(1)).unwrap();
        assert_eq!(snap.text, "a");
        assert_eq!(snap.line_count, 1);
        assert_eq!(
            snap.spans,
            vec![ProvenanceSpan {
                start: 0,
                end: 1,
                source: Source::Human,
                origin_seq: 1,
                chat_ref: None
            }]
        );
    }

    #[test]
    fn delete_splices() {
        let mut doc = Document::new("f", "hello");
        doc.apply(&del(1, 1, "el"), Label::human(1)).unwrap();
        assert_eq!(doc.text(), "hlo");
        assert!(doc.partition_holds());
    }

    #[test]
    fn insert_inside_span_splits_in_three() {
        let mut doc = Document::new("f", "");
        doc.apply(&ins(1, 0, "abcd"), label(Source::AiPaste, 1)).unwrap();
        doc.apply(&ins(2, 2, "X"), label(Source::HumanEditOfAi, 2)).unwrap();
        let s = doc.spans();
        assert_eq!(s.len(), 3);
        assert_eq!((s[0].start, s[0].end, s[0].source, s[0].origin_seq), (0, 2, Source::AiPaste, 1));
        assert_eq!((s[1].start, s[1].end, s[1].source), (2, 3, Source::HumanEditOfAi));
        assert_eq!((s[2].start, s[2].end, s[2].source, s[2].origin_seq), (3, 5, Source::AiPaste, 1));
    }

    #[test]
    fn deleting_the_inner_fragment_merges_neighbours() {
        let mut doc = Document::new("f", "");
        doc.apply(&ins(1, 0, "abcd"), label(Source::AiPaste, 1)).unwrap();
        doc.apply(&ins(2, 2, "X"), label(Source::HumanEditOfAi, 2)).unwrap();
        doc.apply(&del(3, 2, "X"), Label::human(3)).unwrap();
        assert_eq!(doc.spans().len(), 1);
        assert_eq!(doc.spans()[0].origin_seq, 1);
    }

    #[test]
    fn errors() {
        let mut doc = Document::new("f", "abc");
        assert!(matches!(
            doc.apply(&ins(1, 4, "x"), Label::human(1)),
            Err(ReplayError::OffsetOutOfRange { seq: 1, .. })
        ));
        assert!(matches!(
            doc.apply(&del(2, 0, "xy"), Label::human(2)),
            Err(ReplayError::RemovedTextMismatch { seq: 2, .. })
        ));
        assert!(matches!(
            doc.apply(&del(3, 2, "cd"), Label::human(3)),
            Err(ReplayError::OffsetOutOfRange { .. })
        ));
        assert_eq!(doc.text(), "abc");
    }

    #[test]
    fn replace_is_delete_then_insert() {
        let mut doc = Document::new("f", "hello world");
        let e = EditEvent::splice("s", 1, 0, "f", 6, "world", "there", InputHint::Paste);
        doc.apply(&e, label(Source::AiPaste, 1)).unwrap();
        assert_eq!(doc.text(), "hello there");
        assert_eq!(doc.spans().len(), 2);
        assert_eq!(doc.spans()[1].source, Source::AiPaste);
    }

    #[test]
    fn empty_document_has_no_spans() {
        let mut doc = Document::new("f", "ab");
        doc.apply(&del(1, 0, "ab"), Label::human(1)).unwrap();
        assert!(doc.spans().is_empty());
        assert_eq!(doc.line_count(), 0);
        assert!(doc.partition_holds());
    }

    #[test]
    fn relabel_carves_out_range() {
        let mut doc = Document::new("f", "0123456789");
        doc.relabel_range(3, 6, label(Source::AiSimilar, 7));
        let s = doc.spans();
        assert_eq!(s.len(), 3);
        assert_eq!((s[1].start, s[1].end, s[1].source), (3, 6, Source::AiSimilar));
        assert!(doc.partition_holds());
    }

    #[test]
    fn line_helpers() {
        assert_eq!(line_count_of("".chars()), 0);
        assert_eq!(line_count_of("x".chars()), 1);
        assert_eq!(line_count_of("x\ny\n".chars()), 3);
        let text: Vec<char> = "ab\ncd\n".chars().collect();
        let starts = line_starts(&text);
        assert_eq!(starts, vec![0, 3, 6]);
        assert_eq!(line_of_offset(&starts, 0), 1);
        assert_eq!(line_of_offset(&starts, 2), 1);
        assert_eq!(line_of_offset(&starts, 3), 2);
        assert_eq!(line_of_offset(&starts, 6), 3);
    }

    fn log_with(starter: &str, edits: Vec<EditEvent>) -> SessionLog {
        let mut log = SessionLog::new("s");
        log.starter.insert("f".into(), starter.into());
        log.events = edits.into_iter().map(Event::Edit).collect();
        log
    }

    #[test]
    fn snapshot_before_first_event_is_starter() {
        let log = log_with("x\ny", vec![ins(1, 0, "a")]);
        let snap = snapshot_at(&log, "f", 0).unwrap();
        assert_eq!(snap.text, "x\ny");
        assert_eq!(snap.spans.len(), 1);
        assert_eq!(snapshot_at(&log, "f", 10).unwrap().text, "ax\ny");
        assert_eq!(snapshot_at(&log, "f", u64::MAX).unwrap().text, "ax\ny");
        assert!(matches!(snapshot_at(&log, "g", 0), Err(ReplayError::UnknownFile(_))));
    }

    #[test]
    fn envelope_newline_step() {
        let log = log_with("x\ny", vec![]);
        let env = length_envelope(&log, "f", &[0, 50, 1000]).unwrap();
        assert!(env.iter().all(|(_, n)| *n == 2));

        let mut e = ins(1, 0, "\n");
        e.timestamp_ms = 100;
        let log = log_with("x\ny", vec![e]);
        let env = length_envelope(&log, "f", &[0, 99, 100, 101]).unwrap();
        assert_eq!(env, vec![(0, 2), (99, 2), (100, 3), (101, 3)]);
    }

    #[test]
    fn replayer_applies_each_event_once() {
        let log = log_with("", (1..=20).map(|i| ins(i, 0, "a")).collect());
        let mut r = Replayer::new(&log, "f", &Unlabeled).unwrap();
        for t in (0..=250).step_by(5) {
            r.advance_to(t).unwrap();
        }
        assert_eq!(r.applied_count(), 20);
    }
}
