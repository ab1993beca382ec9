//! Append-only NDJSON journal, one file per session.
//!
//! The file is a session-log NDJSON stream: a `session` header line followed
//! by one line per accepted event, so any journal can be fed straight back
//! to the offline tools.

use std::fs::{self, File, OpenOptions};
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use codetrail_core::session_log::{from_ndjson, header_record, Event, LogError, NdjsonRecord, SessionLog};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum JournalError {
    #[error("journal I/O on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("corrupt journal {path}: {source}")]
    Corrupt {
        path: PathBuf,
        #[source]
        source: LogError,
    },
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> JournalError + '_ {
    move |source| JournalError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// File name for a session id. Ids made of safe characters are used as is,
/// anything else is hex-encoded behind an `x-` prefix.
pub fn journal_file_name(session_id: &str) -> String {
    let safe = !session_id.is_empty()
        && !session_id.starts_with('.')
        && !session_id.starts_with("x-")
        && session_id
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.'));
    if safe {
        format!("{session_id}.ndjson")
    } else {
        let hex: String = session_id.bytes().map(|b| format!("{b:02x}")).collect();
        format!("x-{hex}.ndjson")
    }
}

#[derive(Debug)]
pub struct Journal {
    path: PathBuf,
    file: File,
}

impl Journal {
    /// Starts a fresh journal for `log`, writing its header.
    pub fn create(dir: &Path, log: &SessionLog) -> Result<Journal, JournalError> {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
        let path = dir.join(journal_file_name(&log.session_id));
        let file = OpenOptions::new()
            .create(true)
            .write(true)
            .truncate(true)
            .open(&path)
            .map_err(io_err(&path))?;
        let mut j = Journal { path, file };
        j.write_record(&header_record(log))?;
        for e in &log.events {
            j.append(e)?;
        }
        Ok(j)
    }

    /// Reopens an existing journal for appending.
    fn reopen(path: PathBuf) -> Result<Journal, JournalError> {
        let file = OpenOptions::new().append(true).open(&path).map_err(io_err(&path))?;
        Ok(Journal { path, file })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn append(&mut self, event: &Event) -> Result<(), JournalError> {
        self.write_record(&NdjsonRecord::from(event.clone()))
    }

    fn write_record(&mut self, record: &NdjsonRecord) -> Result<(), JournalError> {
        let mut line = serde_json::to_string(record).expect("records always serialize");
        line.push('\n');
        self.file.write_all(line.as_bytes()).map_err(io_err(&self.path))
    }
}

/// Reads one journal. A torn final line left by a crash mid-write is cut off.
pub fn load_journal(path: &Path) -> Result<(SessionLog, Journal), JournalError> {
    let mut text = fs::read_to_string(path).map_err(io_err(path))?;
    if !text.is_empty() && !text.ends_with('\n') {
        let keep = text.rfind('\n').map_or(0, |i| i + 1);
        text.truncate(keep);
        fs::write(path, &text).map_err(io_err(path))?;
    }
    let log = from_ndjson(&text).map_err(|source| JournalError::Corrupt {
        path: path.to_path_buf(),
        source,
    })?;
    Ok((log, Journal::reopen(path.to_path_buf())?))
}

/// Every journal in `dir`, sorted by file name. A missing directory is empty.
pub fn load_dir(dir: &Path) -> Result<Vec<(SessionLog, Journal)>, JournalError> {
    let entries = match fs::read_dir(dir) {
        Ok(e) => e,
        Err(e) if e.kind() == io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(e) => return Err(io_err(dir)(e)),
    };
    let mut paths: Vec<PathBuf> = entries
        .filter_map(Result::ok)
        .map(|e| e.path())
        .filter(|p| p.extension().is_some_and(|x| x == "ndjson"))
        .collect();
    paths.sort();
    paths.iter().map(|p| load_journal(p)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use codetrail_core::session_log::{EditEvent, InputHint};

    fn log_with(n: u64) -> SessionLog {
        let mut log = SessionLog::new("s-1");
        log.starter.insert("main.py".into(), "x\n".into());
        for i in 1..=n {
            log.events.push(Event::Edit(EditEvent::splice(
                "s-1",
                i,
                i * 100,
                "main.py",
                0,
                "",
                "a",
                InputHint::Keystroke,
            )));
        }
        log
    }

    #[test]
    fn names_are_filesystem_safe() {
        assert_eq!(journal_file_name("s-1"), "s-1.ndjson");
        assert_eq!(journal_file_name("../etc"), "x-2e2e2f657463.ndjson");
        assert_eq!(journal_file_name("x-41"), "x-782d3431.ndjson");
        assert_ne!(journal_file_name("a/b"), journal_file_name("a_b"));
    }

    #[test]
    fn append_then_load_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let full = log_with(3);
        let mut j = Journal::create(dir.path(), &log_with(0)).unwrap();
        for e in &full.events {
            j.append(e).unwrap();
        }
        drop(j);
        let loaded = load_dir(dir.path()).unwrap();
        assert_eq!(loaded.len(), 1);
        assert_eq!(loaded[0].0, full);
    }

    #[test]
    fn torn_tail_is_dropped() {
        let dir = tempfile::tempdir().unwrap();
        let j = Journal::create(dir.path(), &log_with(2)).unwrap();
        let path = j.path().to_path_buf();
        drop(j);
        let mut f = OpenOptions::new().append(true).open(&path).unwrap();
        f.write_all(br#"{"type":"edit","session_id":"s-1","se"#).unwrap();
        drop(f);
        let (log, mut j) = load_journal(&path).unwrap();
        assert_eq!(log, log_with(2));
        j.append(&log_with(3).events[2]).unwrap();
        assert_eq!(load_journal(&path).unwrap().0, log_with(3));
    }

    #[test]
    fn missing_dir_is_empty() {
        let dir = tempfile::tempdir().unwrap();
        assert!(load_dir(&dir.path().join("nope")).unwrap().is_empty());
    }
}
