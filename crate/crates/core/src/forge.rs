//! Seeded synthetic sessions with known ground-truth sources.
//!
//! Behaviours are planted one at a time, separated by pauses longer than
//! the default run gap, and the expected source of every text-inserting
//! edit is tracked with a character-level model that does not depend on
//! the replay or provenance code.
//!
//! Assistant code and student code draw identifiers from disjoint
//! vocabularies and every line template is at least 3/8 identifiers, so
//! unrelated text scores at most 0.625 against any assistant block.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::replay::Source;
use crate::session_log::{
    ChatEvent, ChatRole, EditEvent, Event, FileAction, InputHint, SessionLog, SessionMetadata, TestRunEvent,
};

const AI_WORDS: [&str; 24] = [
    "records", "payload", "entry", "result_map", "accumulator", "parsed_rows", "key_fn", "buffer",
    "index_lookup", "normalized", "aggregate", "cursor", "handler", "config_data", "mapping",
    "sorted_items", "batch", "chunk", "response", "metadata", "serializer", "registry", "pipeline",
    "transform",
];

const HUMAN_WORDS: [&str; 24] = [
    "grades", "stud", "tot", "avg", "names", "x", "tmp", "count", "score", "best", "lst", "nums",
    "val", "ans", "my_list", "k", "v", "row", "data1", "s", "marks", "top", "n", "out",
];

// `{}` slots take identifiers.
const TEMPLATES: [&str; 11] = [
    "{} = {}",
    "{} = {}({})",
    "{} = {}[{}]",
    "for {} in {}:",
    "if {} > {}:",
    "return {}",
    "{}.{}({})",
    "{} += {}",
    "def {}({}, {}):",
    "{} = {} + {}",
    "while {} < {}:",
];

const STARTER: &str = "import json\n\n\ndef load_data(path):\n    # TODO\n    pass\n\n\ndef summarize(data):\n    # TODO\n    pass\n";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Behaviour {
    Chat,
    VerbatimPaste,
    HumanPaste,
    CompletionAccept,
    VerbatimRetype,
    NearRetype,
    ParaphrasedRetype,
    OrganicTyping,
    EditInsideAi,
    ReplaceWord,
    Deletion,
    TestRun,
    Save,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ForgeConfig {
    pub seed: u64,
    /// Exact number of edit events to emit.
    pub target_edits: usize,
    pub file_path: String,
}

impl ForgeConfig {
    pub fn new(seed: u64, target_edits: usize) -> Self {
        ForgeConfig {
            seed,
            target_edits,
            file_path: "main.py".to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForgedSession {
    pub log: SessionLog,
    /// Expected source of every text-inserting edit, by seq.
    pub gold: BTreeMap<u64, Source>,
    pub behaviours: BTreeMap<Behaviour, usize>,
}

#[derive(Debug, Clone)]
struct Line {
    template: &'static str,
    names: Vec<String>,
    indent: usize,
}

impl Line {
    fn render(&self, rename: &dyn Fn(&str) -> String) -> String {
        let mut out = " ".repeat(self.indent);
        let mut names = self.names.iter();
        let mut parts = self.template.split("{}");
        out.push_str(parts.next().unwrap_or(""));
        for p in parts {
            out.push_str(&rename(names.next().map(String::as_str).unwrap_or("")));
            out.push_str(p);
        }
        out.push('\n');
        out
    }
}

fn render_lines(lines: &[Line], rename: &dyn Fn(&str) -> String) -> String {
    lines.iter().map(|l| l.render(rename)).collect()
}

fn slot_count(template: &str) -> usize {
    template.matches("{}").count()
}

fn gen_lines(rng: &mut ChaCha8Rng, vocab: &[&str], min_tokens: usize, min_lines: usize) -> Vec<Line> {
    let mut lines = Vec::new();
    let mut tokens = 0;
    let mut indent = 0;
    while tokens < min_tokens || lines.len() < min_lines {
        let template = *TEMPLATES.choose(rng).expect("templates");
        let names = (0..slot_count(template))
            .map(|_| vocab.choose(rng).expect("vocab").to_string())
            .collect();
        let line = Line { template, names, indent };
        tokens += crate::provenance::tokenize(&line.render(&|s| s.to_string())).len();
        indent = if template.ends_with(':') { indent + 4 } else { indent.saturating_sub(rng.gen_range(0..2) * 4) };
        lines.push(line);
    }
    lines
}

/// Character model of the document: text plus an "assistant-origin"
/// flag per character (AI sources and human edits inside them).
#[derive(Debug, Clone)]
struct GoldDoc {
    chars: Vec<char>,
    ai: Vec<bool>,
}

impl GoldDoc {
    fn new(text: &str) -> Self {
        let chars: Vec<char> = text.chars().collect();
        let ai = vec![false; chars.len()];
        GoldDoc { chars, ai }
    }

    fn len(&self) -> usize {
        self.chars.len()
    }

    fn inside_ai(&self, offset: usize) -> bool {
        offset > 0 && offset < self.len() && self.ai[offset - 1] && self.ai[offset]
    }

    fn insert(&mut self, offset: usize, text: &str, ai: bool) {
        let new: Vec<char> = text.chars().collect();
        let n = new.len();
        self.chars.splice(offset..offset, new);
        self.ai.splice(offset..offset, std::iter::repeat_n(ai, n));
    }

    fn remove(&mut self, start: usize, end: usize) -> String {
        self.ai.drain(start..end);
        self.chars.drain(start..end).collect()
    }

    fn line_starts(&self) -> Vec<usize> {
        let mut v = vec![0];
        v.extend(
            self.chars
                .iter()
                .enumerate()
                .filter(|(i, c)| **c == '\n' && i + 1 < self.chars.len())
                .map(|(i, _)| i + 1),
        );
        v
    }

    /// Maximal identifier runs `[start, end)` whose characters all share
    /// the given origin flag.
    fn words(&self, ai: bool) -> Vec<(usize, usize)> {
        let ident = |c: char| c.is_alphanumeric() || c == '_';
        let mut out = Vec::new();
        let mut i = 0;
        while i < self.len() {
            if ident(self.chars[i]) {
                let s = i;
                while i < self.len() && ident(self.chars[i]) {
                    i += 1;
                }
                if self.ai[s..i].iter().all(|f| *f == ai) {
                    out.push((s, i));
                }
            } else {
                i += 1;
            }
        }
        out
    }
}

struct Forge {
    rng: ChaCha8Rng,
    session_id: String,
    file: String,
    doc: GoldDoc,
    t: u64,
    seq: u64,
    events: Vec<Event>,
    gold: BTreeMap<u64, Source>,
    blocks: Vec<Vec<Line>>,
    counts: BTreeMap<Behaviour, usize>,
}

impl Forge {
    fn pause(&mut self) {
        self.t += self.rng.gen_range(2_500..9_000);
    }

    fn keystroke_delay(&mut self) {
        self.t += self.rng.gen_range(40..400);
    }

    fn emit(&mut self, offset: usize, removed: &str, inserted: &str, hint: InputHint, gold: Option<Source>) {
        self.seq += 1;
        let e = EditEvent::splice(&self.session_id, self.seq, self.t, &self.file, offset, removed, inserted, hint);
        if let Some(g) = gold {
            self.gold.insert(self.seq, g);
        }
        self.events.push(Event::Edit(e));
    }

    fn end_offset(&self) -> usize {
        self.doc.len()
    }

    fn line_start(&mut self) -> usize {
        let starts = self.doc.line_starts();
        if self.rng.gen_bool(0.5) {
            self.end_offset()
        } else {
            *starts.choose(&mut self.rng).expect("line starts")
        }
    }

    /// Types `text` one character per event at `offset`; returns the
    /// number of events.
    fn type_text(&mut self, offset: usize, text: &str, retype: Option<Source>) -> usize {
        let mut n = 0;
        for (i, c) in text.chars().enumerate() {
            if n > 0 {
                self.keystroke_delay();
            }
            let at = offset + i;
            let s = c.to_string();
            let gold = retype.unwrap_or(if self.doc.inside_ai(at) { Source::HumanEditOfAi } else { Source::Human });
            let ai = gold != Source::Human;
            self.emit(at, "", &s, InputHint::Keystroke, Some(gold));
            self.doc.insert(at, &s, ai);
            n += 1;
        }
        n
    }

    fn paste(&mut self, offset: usize, text: &str, gold: Source, hint: InputHint) {
        self.emit(offset, "", text, hint, Some(gold));
        self.doc.insert(offset, text, gold != Source::Human);
    }

    fn chat(&mut self) {
        let ask = format!(
            "How should I {} the {} list before computing {}?",
            ["update", "sort", "filter", "group"].choose(&mut self.rng).expect("verbs"),
            HUMAN_WORDS.choose(&mut self.rng).expect("words"),
            HUMAN_WORDS.choose(&mut self.rng).expect("words"),
        );
        self.events.push(Event::Chat(ChatEvent::new(&self.session_id, self.t, ChatRole::Student, &ask)));
        self.t += self.rng.gen_range(1_000..4_000);
        let n_blocks = self.rng.gen_range(1..=2);
        let mut reply = String::from("Here is one way to do it:\n");
        for _ in 0..n_blocks {
            let lines = gen_lines(&mut self.rng, &AI_WORDS, 14, 2);
            reply.push_str("```python\n");
            reply.push_str(&render_lines(&lines, &|s| s.to_string()));
            reply.push_str("```\n");
            self.blocks.push(lines);
        }
        reply.push_str("This keeps the logic in one place.");
        self.events.push(Event::Chat(ChatEvent::new(&self.session_id, self.t, ChatRole::Assistant, &reply)));
    }

    fn human_text(&mut self, max_lines: usize) -> String {
        let n = self.rng.gen_range(1..=max_lines);
        let lines = gen_lines(&mut self.rng, &HUMAN_WORDS, 1, n);
        render_lines(&lines, &|s| s.to_string())
    }

    fn pick_block(&mut self) -> Vec<Line> {
        self.blocks.choose(&mut self.rng).expect("blocks").clone()
    }

    /// Plants one behaviour; returns the number of edit events it used.
    fn plant(&mut self, b: Behaviour) -> usize {
        match b {
            Behaviour::Chat => {
                self.chat();
                0
            }
            Behaviour::TestRun => {
                let failed = self.rng.gen_range(0..4);
                self.events.push(Event::TestRun(TestRunEvent {
                    session_id: self.session_id.clone(),
                    timestamp_ms: self.t,
                    passed: 4 - failed,
                    failed,
                    raw_output: format!("{} passed, {} failed", 4 - failed, failed),
                }));
                0
            }
            Behaviour::Save => {
                self.seq += 1;
                self.events.push(Event::Edit(EditEvent::file_action(
                    &self.session_id,
                    self.seq,
                    self.t,
                    &self.file,
                    FileAction::Save,
                )));
                1
            }
            Behaviour::VerbatimPaste => {
                let text = render_lines(&self.pick_block(), &|s| s.to_string());
                let at = self.line_start();
                self.paste(at, &text, Source::AiPaste, InputHint::Paste);
                1
            }
            Behaviour::HumanPaste => {
                let text = self.human_text(2);
                let at = self.line_start();
                self.paste(at, &text, Source::Human, InputHint::Paste);
                1
            }
            Behaviour::CompletionAccept => {
                let line = gen_lines(&mut self.rng, &AI_WORDS, 1, 1);
                let text = render_lines(&line, &|s| s.to_string());
                let at = self.line_start();
                self.paste(at, &text, Source::AiComplete, InputHint::CompletionAccept);
                1
            }
            Behaviour::VerbatimRetype | Behaviour::NearRetype => {
                let block = self.pick_block();
                let text = if b == Behaviour::NearRetype {
                    let mut changed = block.clone();
                    let li = self.rng.gen_range(0..changed.len());
                    let si = self.rng.gen_range(0..changed[li].names.len());
                    changed[li].names[si] = HUMAN_WORDS.choose(&mut self.rng).expect("words").to_string();
                    render_lines(&changed, &|s| s.to_string())
                } else {
                    render_lines(&block, &|s| s.to_string())
                };
                let at = self.end_offset();
                self.type_text(at, &text, Some(Source::AiSimilar))
            }
            Behaviour::ParaphrasedRetype => {
                let block = self.pick_block();
                let mut map: BTreeMap<String, String> = BTreeMap::new();
                let mut pool: Vec<&str> = HUMAN_WORDS.to_vec();
                pool.shuffle(&mut self.rng);
                for name in block.iter().flat_map(|l| l.names.iter()) {
                    let next = pool.get(map.len() % pool.len()).copied().unwrap_or("x");
                    map.entry(name.clone()).or_insert_with(|| next.to_string());
                }
                let text = render_lines(&block, &|s| map.get(s).cloned().unwrap_or_else(|| s.to_string()));
                let at = self.end_offset();
                self.type_text(at, &text, None)
            }
            Behaviour::OrganicTyping => {
                let text = self.human_text(3);
                let at = self.line_start();
                self.type_text(at, &text, None)
            }
            Behaviour::EditInsideAi => {
                let inside: Vec<usize> = (1..self.doc.len()).filter(|p| self.doc.inside_ai(*p)).collect();
                if inside.is_empty() {
                    return self.plant(Behaviour::OrganicTyping);
                }
                let word = HUMAN_WORDS.choose(&mut self.rng).expect("words").to_string();
                let words = self.doc.words(true);
                if self.rng.gen_bool(0.5) && !words.is_empty() {
                    let (s, e) = *words.choose(&mut self.rng).expect("words");
                    self.replace(s, e, &word);
                    1
                } else {
                    let at = *inside.choose(&mut self.rng).expect("positions");
                    self.type_text(at, &word, None)
                }
            }
            Behaviour::ReplaceWord => {
                let words = self.doc.words(false);
                match words.choose(&mut self.rng).copied() {
                    Some((s, e)) => {
                        let word = HUMAN_WORDS.choose(&mut self.rng).expect("words").to_string();
                        self.replace(s, e, &word);
                        1
                    }
                    None => self.plant(Behaviour::OrganicTyping),
                }
            }
            Behaviour::Deletion => {
                // keep the final newline so appended text starts a fresh line
                let limit = self.doc.len().saturating_sub(1);
                if limit < 2 {
                    return self.plant(Behaviour::OrganicTyping);
                }
                let len = self.rng.gen_range(1..=12.min(limit));
                let start = self.rng.gen_range(0..=limit - len);
                if self.rng.gen_bool(0.5) {
                    let removed = self.doc.remove(start, start + len);
                    self.emit(start, &removed, "", InputHint::Keystroke, None);
                    1
                } else {
                    for (k, at) in (start..start + len).rev().enumerate() {
                        if k > 0 {
                            self.keystroke_delay();
                        }
                        let removed = self.doc.remove(at, at + 1);
                        self.emit(at, &removed, "", InputHint::Keystroke, None);
                    }
                    len
                }
            }
        }
    }

    fn replace(&mut self, start: usize, end: usize, word: &str) {
        let touches_ai = self.doc.ai[start..end].iter().any(|f| *f);
        let gold = if touches_ai { Source::HumanEditOfAi } else { Source::Human };
        let removed: String = self.doc.chars[start..end].iter().collect();
        self.emit(start, &removed, word, InputHint::Keystroke, Some(gold));
        self.doc.remove(start, end);
        self.doc.insert(start, word, touches_ai);
    }

    fn needs_blocks(b: Behaviour) -> bool {
        matches!(
            b,
            Behaviour::VerbatimPaste | Behaviour::VerbatimRetype | Behaviour::NearRetype | Behaviour::ParaphrasedRetype
        )
    }

    fn estimated_edits(&self, b: Behaviour) -> usize {
        let longest_block = self
            .blocks
            .iter()
            .map(|l| render_lines(l, &|s| s.to_string()).chars().count() + 24)
            .max()
            .unwrap_or(0);
        match b {
            Behaviour::VerbatimRetype | Behaviour::NearRetype | Behaviour::ParaphrasedRetype => longest_block,
            Behaviour::OrganicTyping | Behaviour::EditInsideAi => 3 * 40,
            Behaviour::Deletion => 12,
            Behaviour::Chat | Behaviour::TestRun => 0,
            _ => 1,
        }
    }
}

const WEIGHTS: [(Behaviour, u32); 13] = [
    (Behaviour::Chat, 6),
    (Behaviour::VerbatimPaste, 6),
    (Behaviour::HumanPaste, 2),
    (Behaviour::CompletionAccept, 10),
    (Behaviour::VerbatimRetype, 3),
    (Behaviour::NearRetype, 2),
    (Behaviour::ParaphrasedRetype, 3),
    (Behaviour::OrganicTyping, 20),
    (Behaviour::EditInsideAi, 8),
    (Behaviour::ReplaceWord, 4),
    (Behaviour::Deletion, 8),
    (Behaviour::TestRun, 2),
    (Behaviour::Save, 3),
];

/// Generates one session with exactly `cfg.target_edits` edit events.
pub fn forge_session(cfg: &ForgeConfig) -> ForgedSession {
    let session_id = format!("forge-{}", cfg.seed);
    let mut f = Forge {
        rng: ChaCha8Rng::seed_from_u64(cfg.seed),
        session_id: session_id.clone(),
        file: cfg.file_path.clone(),
        doc: GoldDoc::new(STARTER),
        t: 0,
        seq: 0,
        events: Vec::new(),
        gold: BTreeMap::new(),
        blocks: Vec::new(),
        counts: BTreeMap::new(),
    };
    let total: u32 = WEIGHTS.iter().map(|(_, w)| w).sum();
    let mut used = 0usize;
    f.t = f.rng.gen_range(1_000..5_000);
    while used < cfg.target_edits {
        let remaining = cfg.target_edits - used;
        let mut roll = f.rng.gen_range(0..total);
        let mut pick = Behaviour::OrganicTyping;
        for (b, w) in WEIGHTS {
            if roll < w {
                pick = b;
                break;
            }
            roll -= w;
        }
        if Forge::needs_blocks(pick) && f.blocks.is_empty() {
            pick = Behaviour::Chat;
        }
        if f.estimated_edits(pick) > remaining {
            // top up with plain typing at the end of the file
            let mut text = String::new();
            while text.chars().count() < remaining {
                text.push_str(&f.human_text(3));
            }
            let text: String = text.chars().take(remaining).collect();
            let at = f.end_offset();
            f.type_text(at, &text, None);
            *f.counts.entry(Behaviour::OrganicTyping).or_default() += 1;
            break;
        }
        used += f.plant(pick);
        *f.counts.entry(pick).or_default() += 1;
        f.pause();
    }
    let duration_ms = f.t + 1_000;
    let log = SessionLog {
        session_id,
        metadata: SessionMetadata {
            task_id: "forge".into(),
            condition: "synthetic".into(),
            duration_ms,
        },
        starter: BTreeMap::from([(cfg.file_path.clone(), STARTER.to_string())]),
        events: f.events,
    };
    ForgedSession {
        log,
        gold: f.gold,
        behaviours: f.counts,
    }
}

/// `n` sessions with seeds `base_seed..base_seed + n` and edit counts
/// drawn from `edits`.
pub fn forge_corpus(base_seed: u64, n: usize, edits: std::ops::RangeInclusive<usize>) -> Vec<ForgedSession> {
    let mut sizes = ChaCha8Rng::seed_from_u64(base_seed ^ 0x5eed);
    (0..n as u64)
        .map(|i| {
            let target = sizes.gen_range(edits.clone());
            forge_session(&ForgeConfig::new(base_seed + i, target))
        })
        .collect()
}

const SPLICE_ALPHABET: [char; 16] = ['a', 'b', 'x', 'y', ' ', '\n', '(', ')', '=', '_', '0', '9', 'é', 'λ', '中', '😀'];

/// Random insert/delete/replace session over a small alphabet that
/// includes multi-byte characters. No chats, no hints.
pub fn random_splice_session(seed: u64, n_events: usize) -> SessionLog {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let session_id = format!("splice-{seed}");
    let file = "main.py";
    let starter: String = (0..rng.gen_range(0..40))
        .map(|_| *SPLICE_ALPHABET.choose(&mut rng).expect("alphabet"))
        .collect();
    let mut doc: Vec<char> = starter.chars().collect();
    let mut events = Vec::with_capacity(n_events);
    let mut t = 0u64;
    for seq in 1..=n_events as u64 {
        t += rng.gen_range(0..500);
        let word = |rng: &mut ChaCha8Rng| -> String {
            (0..rng.gen_range(1..8))
                .map(|_| *SPLICE_ALPHABET.choose(rng).expect("alphabet"))
                .collect()
        };
        let roll = rng.gen_range(0..10);
        let (offset, removed, inserted) = if doc.is_empty() || roll < 5 {
            (rng.gen_range(0..=doc.len()), String::new(), word(&mut rng))
        } else {
            let start = rng.gen_range(0..doc.len());
            let end = rng.gen_range(start + 1..=doc.len().min(start + 10));
            let removed: String = doc[start..end].iter().collect();
            let inserted = if roll < 8 { String::new() } else { word(&mut rng) };
            (start, removed, inserted)
        };
        let rlen = removed.chars().count();
        doc.splice(offset..offset + rlen, inserted.chars());
        events.push(Event::Edit(EditEvent::splice(
            &session_id,
            seq,
            t,
            file,
            offset,
            &removed,
            &inserted,
            InputHint::Unknown,
        )));
    }
    SessionLog {
        session_id,
        metadata: SessionMetadata {
            task_id: "splice".into(),
            condition: "random".into(),
            duration_ms: t,
        },
        starter: BTreeMap::from([(file.to_string(), starter)]),
        events,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::provenance::{similarity, tokenize};
    use crate::session_log::validate_log;

    #[test]
    fn exact_edit_count_and_valid() {
        for seed in 0..20 {
            let s = forge_session(&ForgeConfig::new(seed, 300));
            assert_eq!(s.log.edit_count(), 300);
            validate_log(&s.log).unwrap();
        }
    }

    #[test]
    fn deterministic() {
        let a = forge_session(&ForgeConfig::new(9, 200));
        let b = forge_session(&ForgeConfig::new(9, 200));
        assert_eq!(a, b);
    }

    #[test]
    fn vocabularies_are_disjoint() {
        assert!(AI_WORDS.iter().all(|w| !HUMAN_WORDS.contains(w)));
    }

    #[test]
    fn templates_are_identifier_dense() {
        for t in TEMPLATES {
            let line = Line { template: t, names: vec!["v".into(); 3], indent: 0 };
            let toks = tokenize(&line.render(&|s| s.to_string()));
            assert!(8 * slot_count(t) >= 3 * toks.len(), "{t}");
        }
    }

    #[test]
    fn human_text_stays_far_from_assistant_blocks() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..200 {
            let ai = render_lines(&gen_lines(&mut rng, &AI_WORDS, 14, 2), &|s| s.to_string());
            let human = render_lines(&gen_lines(&mut rng, &HUMAN_WORDS, 1, 3), &|s| s.to_string());
            assert!(similarity(&tokenize(&ai), &tokenize(&human)) <= 0.625);
        }
    }

    #[test]
    fn splice_sessions_replay() {
        for seed in 0..10 {
            let log = random_splice_session(seed, 200);
            validate_log(&log).unwrap();
            crate::replay::replay_all(&log, &crate::replay::Unlabeled).unwrap();
        }
    }
}
