#![allow(dead_code)]

use std::path::PathBuf;

use codetrail_core::session_log::{parse_session, SessionLog};

pub fn fixture_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

pub fn fixture(name: &str) -> SessionLog {
    let bytes = std::fs::read(fixture_path(name)).expect("fixture exists");
    parse_session(&bytes).expect("fixture parses")
}

/// Valid session fixtures.
pub fn session_fixtures() -> Vec<SessionLog> {
    ["sample_session.json", "two_files.json"].iter().map(|n| fixture(n)).collect()
}

/// Reference splice over a `String`, converting char offsets to byte
/// offsets the slow way.
pub fn naive_splice(text: &mut String, offset: usize, removed: &str, inserted: &str) {
    let byte_at = |s: &str, n: usize| s.char_indices().nth(n).map_or(s.len(), |(b, _)| b);
    let start = byte_at(text, offset);
    let end = start + removed.len();
    assert_eq!(&text[start..end], removed, "oracle: removed text mismatch");
    text.replace_range(start..end, inserted);
}

/// Text of `file` after all edits with `timestamp_ms <= t`.
pub fn naive_text_at(log: &SessionLog, file: &str, t: u64) -> String {
    let mut text = log.starter.get(file).cloned().unwrap_or_default();
    for e in log.edits().filter(|e| e.file_path == file && e.timestamp_ms <= t) {
        naive_splice(&mut text, e.offset, &e.removed_text, &e.inserted_text);
    }
    text
}

/// One more than the number of newlines; empty text has no lines.
pub fn naive_line_count(text: &str) -> usize {
    if text.is_empty() {
        0
    } else {
        text.matches('\n').count() + 1
    }
}
