//! Attribution of insertions to human or assistant origin.
//!
//! Every insertion is classified by a fixed decision ladder (first match
//! wins):
//!
//! 1. accepted completion → `AI_COMPLETE`
//! 2. paste matching an assistant code block (similarity ≥ θ) → `AI_PASTE`
//! 3. any other paste → `HUMAN` (or `AI_PASTE` when `paste_requires_match` is off)
//! 4. typed run of at least `min_run_tokens` tokens matching a block → `AI_SIMILAR`
//! 5. insertion landing inside assistant-origin code → `HUMAN_EDIT_OF_AI`
//! 6. otherwise → `HUMAN`
//!
//! Rule 4 is applied when a typed run closes, so members of a run are first
//! labelled provisionally and then relabelled in one step.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::replay::{ChatRef, Document, DocumentSnapshot, Label, ProvenanceSpan, ReplayError, Source};
use crate::session_log::{ChatEvent, ChatRole, EditEvent, EditKind, Event, InputHint, SessionLog};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProvenanceConfig {
    pub similarity_threshold: f64,
    pub min_run_tokens: usize,
    pub run_gap_ms: u64,
    /// `None` means unlimited lookback.
    pub lookback_ms: Option<u64>,
    pub paste_requires_match: bool,
}

impl Default for ProvenanceConfig {
    fn default() -> Self {
        ProvenanceConfig {
            similarity_threshold: 0.8,
            min_run_tokens: 10,
            run_gap_ms: 2000,
            lookback_ms: None,
            paste_requires_match: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ConfigError {
    #[error("similarity_threshold must lie in (0, 1], got {0}")]
    Threshold(String),
    #[error("min_run_tokens must be at least 1")]
    MinRunTokens,
    #[error("cannot parse provenance config: {0}")]
    Parse(String),
}

impl ProvenanceConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        let t = self.similarity_threshold;
        if !(t > 0.0 && t <= 1.0) {
            return Err(ConfigError::Threshold(t.to_string()));
        }
        if self.min_run_tokens == 0 {
            return Err(ConfigError::MinRunTokens);
        }
        Ok(())
    }

    pub fn with_threshold(mut self, theta: f64) -> Self {
        self.similarity_threshold = theta;
        self
    }

    pub fn from_toml_str(s: &str) -> Result<Self, ConfigError> {
        let cfg: ProvenanceConfig = toml::from_str(s).map_err(|e| ConfigError::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_json_str(s: &str) -> Result<Self, ConfigError> {
        let cfg: ProvenanceConfig =
            serde_json::from_str(s).map_err(|e| ConfigError::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }
}

fn is_ident_char(c: char) -> bool {
    c.is_alphanumeric() || c == '_'
}

/// Identifier runs are single tokens, every other non-whitespace character
/// is a token of its own, whitespace is dropped.
pub fn tokenize(text: &str) -> Vec<String> {
    let mut tokens = Vec::new();
    let mut current = String::new();
    for c in text.chars() {
        if is_ident_char(c) {
            current.push(c);
            continue;
        }
        if !current.is_empty() {
            tokens.push(std::mem::take(&mut current));
        }
        if !c.is_whitespace() {
            tokens.push(c.to_string());
        }
    }
    if !current.is_empty() {
        tokens.push(current);
    }
    tokens
}

/// Length of the longest common subsequence, two-row dynamic programme.
pub fn lcs_len<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    let (long, short) = if a.len() >= b.len() { (a, b) } else { (b, a) };
    if short.is_empty() {
        return 0;
    }
    let mut prev = vec![0u32; short.len() + 1];
    let mut cur = vec![0u32; short.len() + 1];
    for x in long {
        for (j, y) in short.iter().enumerate() {
            cur[j + 1] = if x == y {
                prev[j] + 1
            } else {
                cur[j].max(prev[j + 1])
            };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[short.len()] as usize
}

/// `2·LCS(a, b) / (|a| + |b|)`, and 1.0 for two empty sequences.
pub fn similarity<T: PartialEq>(a: &[T], b: &[T]) -> f64 {
    let total = a.len() + b.len();
    if total == 0 {
        return 1.0;
    }
    2.0 * lcs_len(a, b) as f64 / total as f64
}

/// Token-sequence similarity used by the classifier.
pub trait SimilarityMetric: Send + Sync {
    fn score(&self, a: &[String], b: &[String]) -> f64;

    /// Cheap upper bound on `score`; lets the classifier skip hopeless pairs.
    fn upper_bound(&self, _a: &[String], _b: &[String]) -> f64 {
        1.0
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct LcsRatio;

impl SimilarityMetric for LcsRatio {
    fn score(&self, a: &[String], b: &[String]) -> f64 {
        similarity(a, b)
    }

    fn upper_bound(&self, a: &[String], b: &[String]) -> f64 {
        let total = a.len() + b.len();
        if total == 0 {
            1.0
        } else {
            2.0 * a.len().min(b.len()) as f64 / total as f64
        }
    }
}

/// A burst of contiguous keystroke insertions.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TypedRun {
    pub session_id: String,
    pub file_path: String,
    pub start_seq: u64,
    pub end_seq: u64,
    pub t_start: u64,
    pub t_end: u64,
    pub text: String,
    pub anchor_offset: usize,
}

impl TypedRun {
    fn start(e: &EditEvent) -> Self {
        TypedRun {
            session_id: e.session_id.clone(),
            file_path: e.file_path.clone(),
            start_seq: e.seq,
            end_seq: e.seq,
            t_start: e.timestamp_ms,
            t_end: e.timestamp_ms,
            text: e.inserted_text.clone(),
            anchor_offset: e.offset,
        }
    }

    pub fn char_len(&self) -> usize {
        self.text.chars().count()
    }

    fn continues_with(&self, e: &EditEvent, run_len: usize, cfg: &ProvenanceConfig) -> bool {
        starts_run(e)
            && e.file_path == self.file_path
            && e.timestamp_ms.saturating_sub(self.t_end) <= cfg.run_gap_ms
            && e.offset == self.anchor_offset + run_len
    }
}

fn starts_run(e: &EditEvent) -> bool {
    e.kind == EditKind::Insert && e.input_hint == InputHint::Keystroke
}

/// What is being classified.
#[derive(Debug, Clone, Copy)]
pub enum Insertion<'a> {
    Event(&'a EditEvent),
    Run(&'a TypedRun),
}

/// An assistant code block, pre-tokenized.
#[derive(Debug, Clone, PartialEq)]
pub struct ChatBlock {
    pub chat_ref: ChatRef,
    pub tokens: Vec<String>,
}

/// Code blocks of assistant messages, in chat order.
pub fn assistant_blocks(chats: &[ChatEvent]) -> Vec<ChatBlock> {
    chats
        .iter()
        .filter(|c| c.role == ChatRole::Assistant)
        .flat_map(|c| {
            c.code_blocks.iter().enumerate().map(move |(i, b)| ChatBlock {
                chat_ref: ChatRef {
                    timestamp_ms: c.timestamp_ms,
                    block_index: i,
                },
                tokens: tokenize(b),
            })
        })
        .collect()
}

fn eligible(block: &ChatBlock, at: u64, cfg: &ProvenanceConfig) -> bool {
    let t = block.chat_ref.timestamp_ms;
    t <= at && cfg.lookback_ms.is_none_or(|w| at.saturating_sub(w) <= t)
}

/// Best-scoring eligible block; later blocks win ties.
fn best_match(
    tokens: &[String],
    blocks: &[ChatBlock],
    at: u64,
    cfg: &ProvenanceConfig,
    metric: &dyn SimilarityMetric,
) -> Option<(f64, ChatRef)> {
    if tokens.is_empty() {
        return None;
    }
    let mut best: Option<(f64, ChatRef)> = None;
    for b in blocks.iter().filter(|b| eligible(b, at, cfg) && !b.tokens.is_empty()) {
        let floor = best.map_or(cfg.similarity_threshold, |(s, _)| s.max(cfg.similarity_threshold));
        if metric.upper_bound(tokens, &b.tokens) < floor {
            continue;
        }
        let s = metric.score(tokens, &b.tokens);
        if best.is_none_or(|(bs, _)| s >= bs) {
            best = Some((s, b.chat_ref));
        }
    }
    best
}

fn ai_context(source: Source) -> bool {
    source.is_ai() || source == Source::HumanEditOfAi
}

fn span_at(spans: &[ProvenanceSpan], idx: usize) -> Option<&ProvenanceSpan> {
    let i = spans.partition_point(|s| s.end <= idx);
    spans.get(i).filter(|s| s.start <= idx)
}

/// Whether an edit at `offset` removing `removed` chars lands inside
/// assistant-origin code.
///
/// A removal counts when it overlaps such code. A bare insertion point
/// counts when the characters on both sides are assistant-origin (or
/// already human edits of it), which covers "strictly inside an AI span".
pub fn lands_in_ai_code(spans: &[ProvenanceSpan], offset: usize, removed: usize) -> bool {
    if removed > 0 {
        let end = offset + removed;
        let first = spans.partition_point(|s| s.end <= offset);
        return spans[first..]
            .iter()
            .take_while(|s| s.start < end)
            .any(|s| ai_context(s.source));
    }
    if offset == 0 {
        return false;
    }
    match (span_at(spans, offset - 1), span_at(spans, offset)) {
        (Some(l), Some(r)) => ai_context(l.source) && ai_context(r.source),
        _ => false,
    }
}

/// Applies the decision ladder to one insertion or one closed run.
///
/// For a run, only the `AI_SIMILAR` outcome is acted upon by
/// [`label_session`]; otherwise rules 5 and 6 are evaluated at the run's
/// anchor.
pub fn classify_insertion(
    insertion: Insertion<'_>,
    chats: &[ChatEvent],
    current_spans: &[ProvenanceSpan],
    cfg: &ProvenanceConfig,
) -> (Source, Option<ChatRef>) {
    let blocks = assistant_blocks(chats);
    classify_with(insertion, &blocks, current_spans, cfg, &LcsRatio)
}

fn classify_with(
    insertion: Insertion<'_>,
    blocks: &[ChatBlock],
    spans: &[ProvenanceSpan],
    cfg: &ProvenanceConfig,
    metric: &dyn SimilarityMetric,
) -> (Source, Option<ChatRef>) {
    match insertion {
        Insertion::Event(e) => {
            match e.input_hint {
                InputHint::CompletionAccept => return (Source::AiComplete, None),
                InputHint::Paste => {
                    let tokens = tokenize(&e.inserted_text);
                    if let Some((s, r)) = best_match(&tokens, blocks, e.timestamp_ms, cfg, metric) {
                        if s >= cfg.similarity_threshold {
                            return (Source::AiPaste, Some(r));
                        }
                    }
                    return if cfg.paste_requires_match {
                        (Source::Human, None)
                    } else {
                        (Source::AiPaste, None)
                    };
                }
                _ => {}
            }
            let removed = if e.kind == EditKind::Replace {
                e.removed_text.chars().count()
            } else {
                0
            };
            if lands_in_ai_code(spans, e.offset, removed) {
                (Source::HumanEditOfAi, None)
            } else {
                (Source::Human, None)
            }
        }
        Insertion::Run(run) => {
            let tokens = tokenize(&run.text);
            if tokens.len() >= cfg.min_run_tokens {
                if let Some((s, r)) = best_match(&tokens, blocks, run.t_start, cfg, metric) {
                    if s >= cfg.similarity_threshold {
                        return (Source::AiSimilar, Some(r));
                    }
                }
            }
            if lands_in_ai_code(spans, run.anchor_offset, 0) {
                (Source::HumanEditOfAi, None)
            } else {
                (Source::Human, None)
            }
        }
    }
}

/// Notification that a closed run was recognised as `AI_SIMILAR`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Relabel {
    pub file_path: String,
    pub start_seq: u64,
    pub end_seq: u64,
    pub source: Source,
    pub chat_ref: Option<ChatRef>,
}

/// Result of feeding one edit to a [`Labeler`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EditOutcome {
    /// `None` for deletions and file actions.
    pub label: Option<Label>,
    /// The label may still change when the enclosing typed run closes.
    pub provisional: bool,
    /// Emitted when this edit closed a run that became `AI_SIMILAR`.
    pub relabel: Option<Relabel>,
}

#[derive(Debug, Clone)]
struct OpenRun {
    run: TypedRun,
    len: usize,
    members: Vec<u64>,
}

/// Incremental labelling state for one session.
#[derive(Clone)]
pub struct Labeler {
    cfg: ProvenanceConfig,
    metric: Arc<dyn SimilarityMetric>,
    docs: BTreeMap<String, Document>,
    blocks: Vec<ChatBlock>,
    run: Option<OpenRun>,
    labels: BTreeMap<u64, Label>,
    relabels: Vec<Relabel>,
}

impl fmt::Debug for Labeler {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Labeler")
            .field("cfg", &self.cfg)
            .field("docs", &self.docs.keys().collect::<Vec<_>>())
            .field("labels", &self.labels.len())
            .field("open_run", &self.run.as_ref().map(|r| (r.run.start_seq, r.run.end_seq)))
            .finish()
    }
}

impl Labeler {
    pub fn new(starter: &BTreeMap<String, String>, cfg: ProvenanceConfig) -> Self {
        Self::with_metric(starter, cfg, Arc::new(LcsRatio))
    }

    pub fn with_metric(
        starter: &BTreeMap<String, String>,
        cfg: ProvenanceConfig,
        metric: Arc<dyn SimilarityMetric>,
    ) -> Self {
        Labeler {
            cfg,
            metric,
            docs: starter
                .iter()
                .map(|(p, t)| (p.clone(), Document::new(p, t)))
                .collect(),
            blocks: Vec::new(),
            run: None,
            labels: BTreeMap::new(),
            relabels: Vec::new(),
        }
    }

    pub fn config(&self) -> &ProvenanceConfig {
        &self.cfg
    }

    pub fn push_chat(&mut self, chat: &ChatEvent) {
        self.blocks.extend(assistant_blocks(std::slice::from_ref(chat)));
    }

    /// Validates the edit against the current document without changing
    /// any state.
    pub fn check(&self, e: &EditEvent) -> Result<(), ReplayError> {
        match self.docs.get(&e.file_path) {
            Some(doc) => doc.check(e),
            None => Document::new(&e.file_path, "").check(e),
        }
    }

    pub fn push_edit(&mut self, e: &EditEvent) -> Result<EditOutcome, ReplayError> {
        self.check(e)?;
        let continues = self
            .run
            .as_ref()
            .is_some_and(|r| r.run.continues_with(e, r.len, &self.cfg));
        let relabel = if continues { None } else { self.close_run() };

        let doc = self
            .docs
            .entry(e.file_path.clone())
            .or_insert_with(|| Document::new(&e.file_path, ""));
        let label = if e.inserts_text() {
            let (source, chat_ref) = classify_with(
                Insertion::Event(e),
                &self.blocks,
                doc.spans(),
                &self.cfg,
                self.metric.as_ref(),
            );
            Some(Label {
                source,
                origin_seq: e.seq,
                chat_ref,
            })
        } else {
            None
        };
        doc.apply(e, label.unwrap_or_else(|| Label::human(e.seq)))?;
        if let Some(l) = label {
            self.labels.insert(e.seq, l);
        }

        let mut provisional = false;
        if starts_run(e) {
            let n = e.inserted_text.chars().count();
            match self.run.as_mut() {
                Some(open) if continues => {
                    open.run.end_seq = e.seq;
                    open.run.t_end = e.timestamp_ms;
                    open.run.text.push_str(&e.inserted_text);
                    open.len += n;
                    open.members.push(e.seq);
                }
                _ => {
                    self.run = Some(OpenRun {
                        run: TypedRun::start(e),
                        len: n,
                        members: vec![e.seq],
                    })
                }
            }
            provisional = true;
        }
        Ok(EditOutcome {
            label,
            provisional,
            relabel,
        })
    }

    /// Closes the open run, if any.
    pub fn finish(&mut self) -> Option<Relabel> {
        self.close_run()
    }

    fn close_run(&mut self) -> Option<Relabel> {
        let open = self.run.take()?;
        let doc = self.docs.get_mut(&open.run.file_path)?;
        let (source, chat_ref) = classify_with(
            Insertion::Run(&open.run),
            &self.blocks,
            doc.spans(),
            &self.cfg,
            self.metric.as_ref(),
        );
        if source != Source::AiSimilar {
            return None;
        }
        let label = Label {
            source,
            origin_seq: open.run.start_seq,
            chat_ref,
        };
        doc.relabel_range(open.run.anchor_offset, open.run.anchor_offset + open.len, label);
        for seq in &open.members {
            self.labels.insert(
                *seq,
                Label {
                    source,
                    origin_seq: *seq,
                    chat_ref,
                },
            );
        }
        let r = Relabel {
            file_path: open.run.file_path.clone(),
            start_seq: open.run.start_seq,
            end_seq: open.run.end_seq,
            source,
            chat_ref,
        };
        self.relabels.push(r.clone());
        Some(r)
    }

    pub fn has_open_run(&self) -> bool {
        self.run.is_some()
    }

    pub fn labels(&self) -> &BTreeMap<u64, Label> {
        &self.labels
    }

    pub fn document(&self, file_path: &str) -> Option<&Document> {
        self.docs.get(file_path)
    }

    /// Final result, closing any open run first.
    pub fn into_labeled(mut self, session_id: &str) -> LabeledSession {
        self.finish();
        LabeledSession {
            session_id: session_id.to_string(),
            labels: self.labels,
            documents: self
                .docs
                .iter()
                .map(|(p, d)| (p.clone(), d.snapshot()))
                .collect(),
            relabels: self.relabels,
        }
    }
}

/// Output of [`label_session`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledSession {
    pub session_id: String,
    /// Final label of every text-inserting edit, keyed by seq.
    pub labels: BTreeMap<u64, Label>,
    /// Final snapshot per file.
    pub documents: BTreeMap<String, DocumentSnapshot>,
    pub relabels: Vec<Relabel>,
}

impl LabeledSession {
    pub fn source_of(&self, seq: u64) -> Option<Source> {
        self.labels.get(&seq).map(|l| l.source)
    }
}

/// Labels a whole session in one forward pass.
pub fn label_session(log: &SessionLog, cfg: &ProvenanceConfig) -> Result<LabeledSession, ReplayError> {
    let mut labeler = Labeler::new(&log.starter, cfg.clone());
    for ev in &log.events {
        match ev {
            Event::Edit(e) => {
                labeler.push_edit(e)?;
            }
            Event::Chat(c) => labeler.push_chat(c),
            Event::TestRun(_) => {}
        }
    }
    Ok(labeler.into_labeled(&log.session_id))
}
