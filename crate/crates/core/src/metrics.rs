//! Per-session statistics, function-level attribution and classifier scoring.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::provenance::LabeledSession;
use crate::replay::{line_starts, DocumentSnapshot, Source};
use crate::session_log::{EditKind, SessionLog};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MetricsError {
    #[error("session has no classified insertions")]
    EmptySession,
    #[error("label sequences differ in length: {predicted} predicted vs {gold} gold")]
    LengthMismatch { predicted: usize, gold: usize },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, Default)]
pub struct Totals {
    pub final_loc: usize,
    /// Classified (text-inserting) edit events.
    pub edit_count: usize,
    pub delete_count: usize,
    pub file_action_count: usize,
    pub chat_count: usize,
    pub test_run_count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FunctionAttribution {
    pub file_path: String,
    pub name: String,
    pub start_line: usize,
    pub end_line: usize,
    pub ai_fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionMetrics {
    pub session_id: String,
    pub task_id: String,
    pub condition: String,
    pub counts: BTreeMap<Source, usize>,
    /// Each classified insertion counts once. Absent for empty sessions.
    pub event_proportions: Option<BTreeMap<Source, f64>>,
    /// Weighted by inserted characters. Absent for empty sessions.
    pub char_proportions: Option<BTreeMap<Source, f64>>,
    pub totals: Totals,
    pub ai_reliance: Option<f64>,
    pub per_function: Vec<FunctionAttribution>,
}

/// How function definitions are recognised.
#[derive(Debug, Clone)]
pub struct SegmentationRules {
    pattern: Regex,
    max_indent: usize,
}

pub const DEFAULT_DEFINITION_PATTERN: &str = r"^\s*(?:async\s+)?def\s+(?P<name>[A-Za-z_][A-Za-z0-9_]*)\s*\(";

impl SegmentationRules {
    /// `pattern` must have a capture group named `name` or at least one
    /// positional group; `max_indent` is the deepest leading-whitespace
    /// width (in characters) a definition line may have.
    pub fn new(pattern: &str, max_indent: usize) -> Result<Self, regex::Error> {
        Ok(SegmentationRules {
            pattern: Regex::new(pattern)?,
            max_indent,
        })
    }
}

impl Default for SegmentationRules {
    fn default() -> Self {
        SegmentationRules::new(DEFAULT_DEFINITION_PATTERN, 0).expect("default pattern compiles")
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FunctionRegion {
    pub name: String,
    /// 1-based, inclusive.
    pub start_line: usize,
    pub end_line: usize,
}

pub fn segment_functions(snapshot: &DocumentSnapshot, rules: &SegmentationRules) -> Vec<FunctionRegion> {
    let lines: Vec<&str> = if snapshot.text.is_empty() {
        Vec::new()
    } else {
        snapshot.text.split('\n').collect()
    };
    let mut starts: Vec<(usize, String)> = Vec::new();
    for (i, line) in lines.iter().enumerate() {
        let indent = line.chars().take_while(|c| c.is_whitespace()).count();
        if indent > rules.max_indent {
            continue;
        }
        if let Some(caps) = rules.pattern.captures(line) {
            let name = caps
                .name("name")
                .or_else(|| caps.get(1))
                .map(|m| m.as_str().to_string())
                .unwrap_or_default();
            starts.push((i + 1, name));
        }
    }
    let last = lines.len();
    starts
        .iter()
        .enumerate()
        .map(|(k, (line, name))| FunctionRegion {
            name: name.clone(),
            start_line: *line,
            end_line: starts.get(k + 1).map_or(last, |(next, _)| next - 1),
        })
        .collect()
}

fn function_attribution(snapshot: &DocumentSnapshot, rules: &SegmentationRules) -> Vec<FunctionAttribution> {
    let chars: Vec<char> = snapshot.text.chars().collect();
    let starts = line_starts(&chars);
    segment_functions(snapshot, rules)
        .into_iter()
        .map(|r| {
            let lo = starts[r.start_line - 1];
            let hi = starts.get(r.end_line).copied().unwrap_or(chars.len());
            let ai: usize = snapshot
                .spans
                .iter()
                .filter(|s| s.source.is_ai())
                .map(|s| s.end.min(hi).saturating_sub(s.start.max(lo)))
                .sum();
            let total = hi - lo;
            FunctionAttribution {
                file_path: snapshot.file_path.clone(),
                name: r.name,
                start_line: r.start_line,
                end_line: r.end_line,
                ai_fraction: if total == 0 { 0.0 } else { ai as f64 / total as f64 },
            }
        })
        .collect()
}

fn proportions(weights: &BTreeMap<Source, usize>) -> Option<BTreeMap<Source, f64>> {
    let total: usize = weights.values().sum();
    if total == 0 {
        return None;
    }
    Some(
        weights
            .iter()
            .map(|(s, w)| (*s, *w as f64 / total as f64))
            .collect(),
    )
}

fn zeroed() -> BTreeMap<Source, usize> {
    Source::ALL.iter().map(|s| (*s, 0)).collect()
}

pub fn compute_metrics(log: &SessionLog, labeled: &LabeledSession, rules: &SegmentationRules) -> SessionMetrics {
    let mut counts = zeroed();
    let mut chars = zeroed();
    let mut totals = Totals::default();
    for e in log.edits() {
        match e.kind {
            EditKind::FileAction => totals.file_action_count += 1,
            EditKind::Delete => totals.delete_count += 1,
            EditKind::Insert | EditKind::Replace => {
                let source = labeled.source_of(e.seq).unwrap_or(Source::Human);
                *counts.entry(source).or_default() += 1;
                *chars.entry(source).or_default() += e.inserted_text.chars().count();
                totals.edit_count += 1;
            }
        }
    }
    totals.chat_count = log.chats().count();
    totals.test_run_count = log.test_runs().count();
    totals.final_loc = labeled.documents.values().map(|d| d.line_count).sum();

    let event_proportions = proportions(&counts);
    let ai_reliance = event_proportions
        .as_ref()
        .map(|p| p.iter().filter(|(s, _)| s.is_ai()).map(|(_, v)| v).sum());
    SessionMetrics {
        session_id: log.session_id.clone(),
        task_id: log.metadata.task_id.clone(),
        condition: log.metadata.condition.clone(),
        counts,
        event_proportions,
        char_proportions: proportions(&chars),
        totals,
        ai_reliance,
        per_function: labeled
            .documents
            .values()
            .flat_map(|d| function_attribution(d, rules))
            .collect(),
    }
}

/// Share of classified insertions attributed to an assistant source.
pub fn ai_reliance(metrics: &SessionMetrics) -> Result<f64, MetricsError> {
    metrics.ai_reliance.ok_or(MetricsError::EmptySession)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SourceScore {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    /// Absent when the source never occurs in either sequence.
    pub f: Option<f64>,
}

/// `2·TP / (2·TP + FP + FN)`, absent when all three are zero.
pub fn f_from_counts(tp: usize, fp: usize, fn_: usize) -> Option<f64> {
    let denom = 2 * tp + fp + fn_;
    (denom > 0).then(|| 2.0 * tp as f64 / denom as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FScoreReport {
    pub per_source: BTreeMap<Source, SourceScore>,
    pub macro_f: Option<f64>,
}

impl FScoreReport {
    pub fn f(&self, source: Source) -> Option<f64> {
        self.per_source.get(&source).and_then(|s| s.f)
    }
}

/// One-vs-rest scoring of aligned label sequences.
pub fn f_score(predicted: &[Source], gold: &[Source]) -> Result<FScoreReport, MetricsError> {
    if predicted.len() != gold.len() {
        return Err(MetricsError::LengthMismatch {
            predicted: predicted.len(),
            gold: gold.len(),
        });
    }
    let mut tp = [0usize; 5];
    let mut fp = [0usize; 5];
    let mut fn_ = [0usize; 5];
    let idx = |s: Source| Source::ALL.iter().position(|x| *x == s).unwrap();
    for (p, g) in predicted.iter().zip(gold) {
        if p == g {
            tp[idx(*p)] += 1;
        } else {
            fp[idx(*p)] += 1;
            fn_[idx(*g)] += 1;
        }
    }
    let per_source: BTreeMap<Source, SourceScore> = Source::ALL
        .iter()
        .enumerate()
        .map(|(i, s)| {
            (
                *s,
                SourceScore {
                    tp: tp[i],
                    fp: fp[i],
                    fn_: fn_[i],
                    f: f_from_counts(tp[i], fp[i], fn_[i]),
                },
            )
        })
        .collect();
    let defined: Vec<f64> = per_source.values().filter_map(|s| s.f).collect();
    let macro_f = (!defined.is_empty()).then(|| defined.iter().sum::<f64>() / defined.len() as f64);
    Ok(FScoreReport { per_source, macro_f })
}

/// Frozen CSV header. Downstream scripts rely on this order.
pub const CSV_COLUMNS: [&str; 25] = [
    "session_id",
    "task_id",
    "condition",
    "edit_count",
    "delete_count",
    "file_action_count",
    "chat_count",
    "test_run_count",
    "final_loc",
    "n_human",
    "n_ai_paste",
    "n_ai_complete",
    "n_ai_similar",
    "n_human_edit_of_ai",
    "p_human",
    "p_ai_paste",
    "p_ai_complete",
    "p_ai_similar",
    "p_human_edit_of_ai",
    "c_human",
    "c_ai_paste",
    "c_ai_complete",
    "c_ai_similar",
    "c_human_edit_of_ai",
    "ai_reliance",
];

/// Id used for the aggregate CSV row.
pub const AGGREGATE_ROW_ID: &str = "AGGREGATE";

impl SessionMetrics {
    /// Numeric CSV cells (everything after the three text columns); `None`
    /// renders as an empty cell.
    pub fn numeric_cells(&self) -> Vec<Option<f64>> {
        let t = &self.totals;
        let mut cells: Vec<Option<f64>> = [
            t.edit_count,
            t.delete_count,
            t.file_action_count,
            t.chat_count,
            t.test_run_count,
            t.final_loc,
        ]
        .iter()
        .map(|v| Some(*v as f64))
        .collect();
        cells.extend(Source::ALL.iter().map(|s| Some(self.counts[s] as f64)));
        for props in [&self.event_proportions, &self.char_proportions] {
            cells.extend(Source::ALL.iter().map(|s| props.as_ref().map(|p| p[s])));
        }
        cells.push(self.ai_reliance);
        cells
    }
}

fn fmt_cell(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Column-wise mean of the numeric cells, skipping empty cells.
pub fn mean_row(metrics: &[SessionMetrics]) -> Vec<Option<f64>> {
    let rows: Vec<Vec<Option<f64>>> = metrics.iter().map(|m| m.numeric_cells()).collect();
    let width = CSV_COLUMNS.len() - 3;
    (0..width)
        .map(|c| {
            let vals: Vec<f64> = rows.iter().filter_map(|r| r[c]).collect();
            (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
        })
        .collect()
}

pub fn to_csv(metrics: &[SessionMetrics], aggregate: bool) -> String {
    let mut w = csv::WriterBuilder::new().from_writer(Vec::new());
    w.write_record(CSV_COLUMNS).expect("in-memory write");
    for m in metrics {
        let mut row = vec![m.session_id.clone(), m.task_id.clone(), m.condition.clone()];
        row.extend(m.numeric_cells().into_iter().map(fmt_cell));
        w.write_record(&row).expect("in-memory write");
    }
    if aggregate {
        let mut row = vec![AGGREGATE_ROW_ID.to_string(), String::new(), String::new()];
        row.extend(mean_row(metrics).into_iter().map(fmt_cell));
        w.write_record(&row).expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("flush")).expect("csv is utf-8")
}

/// Corpus-level summary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateMetrics {
    pub sessions: usize,
    /// Insertion counts pooled over all sessions.
    pub pooled_counts: BTreeMap<Source, usize>,
    pub pooled_event_proportions: Option<BTreeMap<Source, f64>>,
    pub ai_reliance_mean: Option<f64>,
    pub ai_reliance_sd: Option<f64>,
    pub ai_reliance_min: Option<f64>,
    pub ai_reliance_max: Option<f64>,
    /// Column means in [`CSV_COLUMNS`] order (numeric columns only).
    pub column_means: Vec<Option<f64>>,
}

pub fn aggregate(metrics: &[SessionMetrics]) -> AggregateMetrics {
    let mut pooled = zeroed();
    for m in metrics {
        for (s, n) in &m.counts {
            *pooled.entry(*s).or_default() += n;
        }
    }
    let rel: Vec<f64> = metrics.iter().filter_map(|m| m.ai_reliance).collect();
    let mean = (!rel.is_empty()).then(|| rel.iter().sum::<f64>() / rel.len() as f64);
    let sd = mean.filter(|_| rel.len() > 1).map(|mu| {
        (rel.iter().map(|x| (x - mu).powi(2)).sum::<f64>() / (rel.len() - 1) as f64).sqrt()
    });
    AggregateMetrics {
        sessions: metrics.len(),
        pooled_event_proportions: proportions(&pooled),
        pooled_counts: pooled,
        ai_reliance_mean: mean,
        ai_reliance_sd: sd,
        ai_reliance_min: rel.iter().copied().reduce(f64::min),
        ai_reliance_max: rel.iter().copied().reduce(f64::max),
        column_means: mean_row(metrics),
    }
}

/// Short human-readable summary, used by the CLI's text output.
pub fn summary_line(m: &SessionMetrics) -> String {
    let mut s = format!("{}: {} insertions", m.session_id, m.totals.edit_count);
    if let Some(p) = &m.event_proportions {
        for src in Source::ALL {
            let _ = write!(s, ", {} {:.2}%", src, 100.0 * p[&src]);
        }
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::provenance::{label_session, ProvenanceConfig};
    use crate::session_log::{EditEvent, Event, InputHint};

    fn snap(text: &str) -> DocumentSnapshot {
        DocumentSnapshot {
            file_path: "f.py".into(),
            timestamp_ms: 0,
            text: text.into(),
            line_count: crate::replay::line_count_of(text.chars()),
            spans: Vec::new(),
        }
    }

    #[test]
    fn f_score_arithmetic() {
        assert!((f_from_counts(2, 1, 1).unwrap() - 4.0 / 6.0).abs() < 1e-12);
        assert_eq!(f_from_counts(0, 0, 0), None);
        let gold = [Source::Human, Source::AiPaste, Source::AiComplete];
        let r = f_score(&gold, &gold).unwrap();
        assert!(r.per_source.values().filter_map(|s| s.f).all(|f| f == 1.0));
        assert_eq!(r.f(Source::AiSimilar), None);
        assert!(matches!(
            f_score(&gold[..2], &gold),
            Err(MetricsError::LengthMismatch { predicted: 2, gold: 3 })
        ));
    }

    #[test]
    fn two_functions() {
        let s = snap("import os\ndef a():\n    pass\n\ndef b(x):\n    return x\n");
        let regions = segment_functions(&s, &SegmentationRules::default());
        assert_eq!(
            regions,
            vec![
                FunctionRegion { name: "a".into(), start_line: 2, end_line: 4 },
                FunctionRegion { name: "b".into(), start_line: 5, end_line: 7 },
            ]
        );
        assert!(segment_functions(&snap("x = 1\n"), &SegmentationRules::default()).is_empty());
        assert!(segment_functions(&snap(""), &SegmentationRules::default()).is_empty());
    }

    #[test]
    fn indentation_ceiling() {
        let s = snap("class A:\n    def m(self):\n        pass\n");
        assert!(segment_functions(&s, &SegmentationRules::default()).is_empty());
        let rules = SegmentationRules::new(DEFAULT_DEFINITION_PATTERN, 4).unwrap();
        assert_eq!(segment_functions(&s, &rules)[0].name, "m");
    }

    fn one_per_source() -> SessionLog {
        let mut log = SessionLog::new("s");
        log.starter.insert("f.py".into(), String::new());
        let code = "total = sum(values)\n";
        log.events.push(Event::Chat(crate::session_log::ChatEvent::new(
            "s",
            0,
            crate::session_log::ChatRole::Assistant,
            &format!("```\n{code}```"),
        )));
        let mut push = |seq: u64, t: u64, offset: usize, text: &str, hint: InputHint| {
            log.events.push(Event::Edit(EditEvent::splice("s", seq, t, "f.py", offset, "", text, hint)));
        };
        push(1, 10, 0, "x", InputHint::Keystroke);
        push(2, 5000, 1, code, InputHint::Paste);
        push(3, 10000, 0, "y = 1\n", InputHint::CompletionAccept);
        let offset = 6 + 1 + code.chars().count();
        // verbatim retype, one keystroke event carrying the whole line
        push(4, 15000, offset, "total = sum(values) + 0\n", InputHint::Keystroke);
        log
    }

    #[test]
    fn quarter_each() {
        let log = one_per_source();
        let cfg = ProvenanceConfig {
            min_run_tokens: 5,
            similarity_threshold: 0.7,
            ..Default::default()
        };
        let labeled = label_session(&log, &cfg).unwrap();
        let m = compute_metrics(&log, &labeled, &SegmentationRules::default());
        let p = m.event_proportions.as_ref().unwrap();
        for s in [Source::Human, Source::AiPaste, Source::AiComplete, Source::AiSimilar] {
            assert_eq!(p[&s], 0.25, "{s}");
        }
        assert_eq!(m.counts.values().sum::<usize>(), m.totals.edit_count);
        assert!((ai_reliance(&m).unwrap() - 0.75).abs() < 1e-12);
        let c = m.char_proportions.as_ref().unwrap();
        assert!((c.values().sum::<f64>() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn empty_session() {
        let log = SessionLog::new("e");
        let labeled = label_session(&log, &ProvenanceConfig::default()).unwrap();
        let m = compute_metrics(&log, &labeled, &SegmentationRules::default());
        assert_eq!(m.totals.edit_count, 0);
        assert!(m.event_proportions.is_none());
        assert!(m.char_proportions.is_none());
        assert_eq!(ai_reliance(&m), Err(MetricsError::EmptySession));
    }

    #[test]
    fn csv_has_frozen_header_and_aggregate() {
        let log = one_per_source();
        let labeled = label_session(&log, &ProvenanceConfig::default()).unwrap();
        let m = compute_metrics(&log, &labeled, &SegmentationRules::default());
        let text = to_csv(&[m.clone(), m], true);
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), CSV_COLUMNS.join(","));
        assert_eq!(text.lines().count(), 4);
        assert!(text.lines().last().unwrap().starts_with("AGGREGATE,"));
    }
}
