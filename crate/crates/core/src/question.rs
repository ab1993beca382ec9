//! Question drafting: prompt assembly, pluggable generation and the
//! draft → sent → answered lifecycle.

use std::fmt;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::replay::{line_of_offset, line_starts, DocumentSnapshot};

const PROMPT_TEMPLATE: &str = include_str!("../templates/question_prompt_v1.txt");
const MULTIPLE_CHOICE_DIRECTIVE: &str = include_str!("../templates/mode_multiple_choice_v1.txt");
const OPEN_ENDED_DIRECTIVE: &str = include_str!("../templates/mode_open_ended_v1.txt");
const REPAIR_REMINDER: &str = include_str!("../templates/repair_reminder_v1.txt");

/// Version of the prompt assets above.
pub const PROMPT_TEMPLATE_VERSION: u32 = 1;

pub const AI_OPEN_SENTINEL: &str = "[[AI_CODE source=";
pub const AI_CLOSE_SENTINEL: &str = "[[/AI_CODE]]";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QuestionMode {
    MultipleChoice,
    OpenEnded,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QuestionStatus {
    Draft,
    Sent,
    Answered,
}

impl fmt::Display for QuestionStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            QuestionStatus::Draft => "draft",
            QuestionStatus::Sent => "sent",
            QuestionStatus::Answered => "answered",
        })
    }
}

/// Region of code a question is about.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AnchorRegion {
    /// 1-based inclusive line range.
    Lines { start: usize, end: usize },
    /// Char offsets `[start, end)` in the snapshot.
    Span { start: usize, end: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Anchor {
    pub timestamp_ms: u64,
    pub region: AnchorRegion,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum QuestionError {
    #[error("anchor does not resolve within the snapshot ({line_count} lines, {len} chars)")]
    AnchorOutOfRange { line_count: usize, len: usize },
    #[error("illegal transition {from} -> {to}")]
    IllegalTransition { from: QuestionStatus, to: QuestionStatus },
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum GenerationError {
    #[error("generation provider unavailable: {0}")]
    ProviderUnavailable(String),
    #[error("malformed generation: {0}")]
    MalformedGeneration(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Generation {
    pub question: String,
    pub expected_answer: String,
}

pub trait GenerationProvider: Send + Sync {
    fn name(&self) -> &str;
    fn generate(&self, prompt: &str, seed: u64) -> Result<Generation, GenerationError>;
}

/// Resolves an anchor to a 1-based inclusive line range.
fn anchor_lines(chars: &[char], starts: &[usize], region: AnchorRegion) -> Result<(usize, usize), QuestionError> {
    let line_count = crate::replay::line_count_of(chars.iter().copied());
    let err = || QuestionError::AnchorOutOfRange {
        line_count,
        len: chars.len(),
    };
    match region {
        AnchorRegion::Lines { start, end } => {
            if start == 0 || start > end || end > line_count {
                return Err(err());
            }
            Ok((start, end))
        }
        AnchorRegion::Span { start, end } => {
            if start >= end || end > chars.len() {
                return Err(err());
            }
            Ok((line_of_offset(starts, start), line_of_offset(starts, end - 1)))
        }
    }
}

/// Code for the anchored lines with assistant-origin regions wrapped in
/// sentinel markers.
pub fn marked_excerpt(snapshot: &DocumentSnapshot, region: AnchorRegion) -> Result<(usize, usize, String), QuestionError> {
    let chars: Vec<char> = snapshot.text.chars().collect();
    let starts = line_starts(&chars);
    let (first, last) = anchor_lines(&chars, &starts, region)?;
    let lo = starts[first - 1];
    let hi = starts.get(last).copied().unwrap_or(chars.len());
    let mut out = String::new();
    let mut cursor = lo;
    for s in snapshot.spans.iter().filter(|s| s.source.is_ai() && s.end > lo && s.start < hi) {
        let a = s.start.max(lo);
        let b = s.end.min(hi);
        out.extend(&chars[cursor..a]);
        out.push_str(AI_OPEN_SENTINEL);
        out.push_str(s.source.as_str());
        out.push_str("]]");
        out.extend(&chars[a..b]);
        out.push_str(AI_CLOSE_SENTINEL);
        cursor = b;
    }
    out.extend(&chars[cursor..hi]);
    Ok((first, last, out))
}

/// Builds the generation prompt. Identical inputs give identical bytes.
pub fn assemble_prompt(
    snapshot: &DocumentSnapshot,
    anchor: &Anchor,
    mode: QuestionMode,
    constraints: &str,
) -> Result<String, QuestionError> {
    let (first, last, code) = marked_excerpt(snapshot, anchor.region)?;
    let mode_block = match mode {
        QuestionMode::MultipleChoice => MULTIPLE_CHOICE_DIRECTIVE,
        QuestionMode::OpenEnded => OPEN_ENDED_DIRECTIVE,
    };
    let constraints_block = if constraints.trim().is_empty() {
        String::new()
    } else {
        format!("Instructor constraints:\n{constraints}\n\n")
    };
    let code = code.strip_suffix('\n').unwrap_or(&code);
    Ok(PROMPT_TEMPLATE
        .replace("{{FILE}}", &snapshot.file_path)
        .replace("{{TIMESTAMP}}", &anchor.timestamp_ms.to_string())
        .replace("{{LINE_START}}", &first.to_string())
        .replace("{{LINE_END}}", &last.to_string())
        .replace("{{MODE_BLOCK}}", mode_block)
        .replace("{{CONSTRAINTS_BLOCK}}", &constraints_block)
        // code last so that template-like text inside it is left alone
        .replace("{{CODE}}", code))
}

pub fn prompt_mode(prompt: &str) -> QuestionMode {
    if prompt.contains("Format: multiple_choice") {
        QuestionMode::MultipleChoice
    } else {
        QuestionMode::OpenEnded
    }
}

/// Exactly one each of `A) `..`D) ` option lines and an expected answer
/// naming one of them.
pub fn is_valid_multiple_choice(g: &Generation) -> bool {
    let mut seen = [0usize; 26];
    for line in g.question.lines() {
        let line = line.trim_start();
        let mut it = line.chars();
        if let (Some(c @ 'A'..='Z'), Some(')')) = (it.next(), it.next()) {
            seen[(c as u8 - b'A') as usize] += 1;
        }
    }
    let four = seen[..4].iter().all(|n| *n == 1) && seen[4..].iter().all(|n| *n == 0);
    let answer = g.expected_answer.trim();
    let mut it = answer.chars();
    let names_option = matches!(it.next(), Some('A'..='D')) && it.next().is_none_or(|c| !c.is_alphanumeric());
    four && names_option
}

/// Runs the provider; multiple-choice output gets one repair retry.
pub fn generate_question(
    prompt: &str,
    provider: &dyn GenerationProvider,
    seed: u64,
) -> Result<Generation, GenerationError> {
    let first = provider.generate(prompt, seed)?;
    if prompt_mode(prompt) == QuestionMode::OpenEnded || is_valid_multiple_choice(&first) {
        return Ok(first);
    }
    let repaired = provider.generate(&format!("{prompt}{REPAIR_REMINDER}"), seed)?;
    if is_valid_multiple_choice(&repaired) {
        Ok(repaired)
    } else {
        Err(GenerationError::MalformedGeneration(format!(
            "{} did not produce four labeled options after one retry",
            provider.name()
        )))
    }
}

const STEMS: [&str; 6] = [
    "What does the marked code compute when it runs?",
    "Which input would make the marked code behave differently?",
    "Why is the marked code structured this way?",
    "What would break if the marked lines were removed?",
    "Which statement about the marked code's return value is true?",
    "What is the role of the marked loop or condition?",
];

const DISTRACTORS: [&str; 8] = [
    "It returns the input unchanged",
    "It raises an exception for empty input",
    "It filters entries by the given key",
    "It accumulates a running total",
    "It writes the result back to the JSON file",
    "It validates the arguments before use",
    "It sorts the records in place",
    "It formats each entry as a string",
];

/// Deterministic provider: output is a pure function of `(prompt, seed)`.
/// The prompt digest selects every slot, so prompts that differ anywhere
/// (including the anchored code) yield different text.
#[derive(Debug, Clone, Copy, Default)]
pub struct StubProvider;

impl GenerationProvider for StubProvider {
    fn name(&self) -> &str {
        "stub"
    }

    fn generate(&self, prompt: &str, seed: u64) -> Result<Generation, GenerationError> {
        let mut h = Sha256::new();
        h.update(prompt.as_bytes());
        h.update(seed.to_le_bytes());
        let digest = h.finalize();
        let d: &[u8] = digest.as_ref();
        let tag: String = d[..4].iter().map(|b| format!("{b:02x}")).collect();
        let stem = STEMS[d[4] as usize % STEMS.len()];
        match prompt_mode(prompt) {
            QuestionMode::MultipleChoice => {
                let mut options: Vec<&str> = Vec::with_capacity(4);
                let mut k = 5;
                while options.len() < 4 {
                    let cand = DISTRACTORS[d[k % d.len()] as usize % DISTRACTORS.len()];
                    if !options.contains(&cand) {
                        options.push(cand);
                    }
                    k += 1;
                    if k > 5 + 64 {
                        // digest exhausted without four distinct picks; fill in order
                        for c in DISTRACTORS {
                            if options.len() < 4 && !options.contains(&c) {
                                options.push(c);
                            }
                        }
                    }
                }
                let correct = (d[9] % 4) as usize;
                let labels = ['A', 'B', 'C', 'D'];
                let mut q = format!("[stub {tag}] {stem}\n");
                for (i, o) in options.iter().enumerate() {
                    q.push_str(&format!("{}) {}\n", labels[i], o));
                }
                Ok(Generation {
                    question: q,
                    expected_answer: labels[correct].to_string(),
                })
            }
            QuestionMode::OpenEnded => Ok(Generation {
                question: format!("[stub {tag}] {stem} Explain in your own words."),
                expected_answer: format!(
                    "A complete answer mentions that {}.",
                    DISTRACTORS[d[5] as usize % DISTRACTORS.len()].to_lowercase()
                ),
            }),
        }
    }
}

/// Instructor changes applied before sending.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct QuestionEdits {
    pub generated_text: Option<String>,
    pub expected_answer: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Question {
    pub id: String,
    pub session_id: String,
    pub anchor: Anchor,
    pub mode: QuestionMode,
    pub constraints: String,
    pub code_context: String,
    pub generated_text: String,
    pub expected_answer: String,
    pub status: QuestionStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub student_answer: Option<String>,
}

impl Question {
    /// Assembles the prompt, runs the provider, and returns a draft.
    #[allow(clippy::too_many_arguments)]
    pub fn create(
        id: &str,
        session_id: &str,
        snapshot: &DocumentSnapshot,
        anchor: Anchor,
        mode: QuestionMode,
        constraints: &str,
        provider: &dyn GenerationProvider,
        seed: u64,
    ) -> Result<Question, QuestionCreateError> {
        let (_, _, code_context) = marked_excerpt(snapshot, anchor.region)?;
        let prompt = assemble_prompt(snapshot, &anchor, mode, constraints)?;
        let g = generate_question(&prompt, provider, seed)?;
        Ok(Question {
            id: id.to_string(),
            session_id: session_id.to_string(),
            anchor,
            mode,
            constraints: constraints.to_string(),
            code_context,
            generated_text: g.question,
            expected_answer: g.expected_answer,
            status: QuestionStatus::Draft,
            student_answer: None,
        })
    }

    /// Applies instructor edits and marks the question sent.
    pub fn edit_and_send(mut self, edits: QuestionEdits) -> Result<Question, QuestionError> {
        if self.status != QuestionStatus::Draft {
            return Err(QuestionError::IllegalTransition {
                from: self.status,
                to: QuestionStatus::Sent,
            });
        }
        if let Some(t) = edits.generated_text {
            self.generated_text = t;
        }
        if let Some(a) = edits.expected_answer {
            self.expected_answer = a;
        }
        self.status = QuestionStatus::Sent;
        Ok(self)
    }

    pub fn record_answer(&mut self, answer: &str) -> Result<(), QuestionError> {
        if self.status != QuestionStatus::Sent {
            return Err(QuestionError::IllegalTransition {
                from: self.status,
                to: QuestionStatus::Answered,
            });
        }
        self.student_answer = Some(answer.to_string());
        self.status = QuestionStatus::Answered;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum QuestionCreateError {
    #[error(transparent)]
    Question(#[from] QuestionError),
    #[error(transparent)]
    Generation(#[from] GenerationError),
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::replay::{ProvenanceSpan, Source};
    use std::sync::atomic::{AtomicUsize, Ordering};

    fn snapshot() -> DocumentSnapshot {
        let text = "def load(path):\n    with open(path) as f:\n        return json.load(f)\n\ndef main():\n    pass\n";
        let ai_start = text.find("    with").unwrap();
        let ai_end = text.find("\n\ndef main").unwrap() + 1;
        let len = text.chars().count();
        DocumentSnapshot {
            file_path: "gradebook.py".into(),
            timestamp_ms: 60_000,
            text: text.into(),
            line_count: 7,
            spans: vec![
                ProvenanceSpan { start: 0, end: ai_start, source: Source::Human, origin_seq: 0, chat_ref: None },
                ProvenanceSpan { start: ai_start, end: ai_end, source: Source::AiPaste, origin_seq: 3, chat_ref: None },
                ProvenanceSpan { start: ai_end, end: len, source: Source::Human, origin_seq: 0, chat_ref: None },
            ],
        }
    }

    fn anchor(start: usize, end: usize) -> Anchor {
        Anchor {
            timestamp_ms: 60_000,
            region: AnchorRegion::Lines { start, end },
        }
    }

    #[test]
    fn ai_span_is_wrapped_verbatim() {
        let p = assemble_prompt(&snapshot(), &anchor(1, 3), QuestionMode::OpenEnded, "").unwrap();
        let wrapped = "[[AI_CODE source=AI_PASTE]]    with open(path) as f:\n        return json.load(f)\n[[/AI_CODE]]";
        assert!(p.contains(wrapped), "{p}");
    }

    #[test]
    fn mode_directive_and_constraints() {
        let s = snapshot();
        let mc = assemble_prompt(&s, &anchor(1, 6), QuestionMode::MultipleChoice, "").unwrap();
        assert!(mc.contains(MULTIPLE_CHOICE_DIRECTIVE));
        assert!(!mc.contains("Instructor constraints"));
        let with = assemble_prompt(&s, &anchor(1, 6), QuestionMode::MultipleChoice, "Ask about file handling.").unwrap();
        assert!(with.contains("Instructor constraints:\nAsk about file handling.\n"));
        assert_eq!(mc, assemble_prompt(&s, &anchor(1, 6), QuestionMode::MultipleChoice, "").unwrap());
    }

    #[test]
    fn golden_prompt_without_constraints() {
        let p = assemble_prompt(&snapshot(), &anchor(5, 6), QuestionMode::OpenEnded, "").unwrap();
        let golden = include_str!("../tests/fixtures/golden_prompt_open_ended.txt");
        assert_eq!(p, golden);
    }

    #[test]
    fn anchor_out_of_range() {
        let s = snapshot();
        assert!(matches!(
            assemble_prompt(&s, &anchor(3, 99), QuestionMode::OpenEnded, ""),
            Err(QuestionError::AnchorOutOfRange { .. })
        ));
        assert!(assemble_prompt(&s, &anchor(0, 1), QuestionMode::OpenEnded, "").is_err());
        let span = Anchor { timestamp_ms: 0, region: AnchorRegion::Span { start: 5, end: 500 } };
        assert!(assemble_prompt(&s, &span, QuestionMode::OpenEnded, "").is_err());
        let span = Anchor { timestamp_ms: 0, region: AnchorRegion::Span { start: 20, end: 30 } };
        assert!(assemble_prompt(&s, &span, QuestionMode::OpenEnded, "").unwrap().contains("Lines 2-2:"));
    }

    #[test]
    fn stub_is_deterministic_and_valid() {
        let p = assemble_prompt(&snapshot(), &anchor(1, 6), QuestionMode::MultipleChoice, "").unwrap();
        let a = StubProvider.generate(&p, 7).unwrap();
        assert_eq!(a, StubProvider.generate(&p, 7).unwrap());
        assert!(is_valid_multiple_choice(&a), "{a:?}");
        let open = assemble_prompt(&snapshot(), &anchor(1, 6), QuestionMode::OpenEnded, "").unwrap();
        assert!(!generate_question(&open, &StubProvider, 1).unwrap().question.contains("A) "));
    }

    #[test]
    fn stub_is_prompt_sensitive() {
        let s = snapshot();
        let mut other = s.clone();
        other.text = other.text.replace("json.load(f)", "json.loads(f)");
        let a = assemble_prompt(&s, &anchor(1, 3), QuestionMode::MultipleChoice, "").unwrap();
        let b = assemble_prompt(&other, &anchor(1, 3), QuestionMode::MultipleChoice, "").unwrap();
        assert_ne!(StubProvider.generate(&a, 1).unwrap(), StubProvider.generate(&b, 1).unwrap());
    }

    #[test]
    fn mc_validation() {
        let ok = Generation { question: "Q\nA) a\nB) b\nC) c\nD) d\n".into(), expected_answer: "C".into() };
        assert!(is_valid_multiple_choice(&ok));
        let five = Generation { question: "Q\nA) a\nB) b\nC) c\nD) d\nE) e\n".into(), expected_answer: "C".into() };
        assert!(!is_valid_multiple_choice(&five));
        let bad_answer = Generation { expected_answer: "E".into(), ..ok.clone() };
        assert!(!is_valid_multiple_choice(&bad_answer));
        let labelled = Generation { expected_answer: "B) b".into(), ..ok };
        assert!(is_valid_multiple_choice(&labelled));
    }

    struct Flaky {
        calls: AtomicUsize,
        good_after: usize,
    }

    impl GenerationProvider for Flaky {
        fn name(&self) -> &str {
            "flaky"
        }
        fn generate(&self, _prompt: &str, _seed: u64) -> Result<Generation, GenerationError> {
            let n = self.calls.fetch_add(1, Ordering::SeqCst);
            if n >= self.good_after {
                Ok(Generation { question: "A) 1\nB) 2\nC) 3\nD) 4".into(), expected_answer: "A".into() })
            } else {
                Ok(Generation { question: "no options".into(), expected_answer: "?".into() })
            }
        }
    }

    #[test]
    fn one_repair_retry() {
        let p = assemble_prompt(&snapshot(), &anchor(1, 6), QuestionMode::MultipleChoice, "").unwrap();
        let once = Flaky { calls: AtomicUsize::new(0), good_after: 1 };
        assert!(generate_question(&p, &once, 0).is_ok());
        assert_eq!(once.calls.load(Ordering::SeqCst), 2);
        let never = Flaky { calls: AtomicUsize::new(0), good_after: 5 };
        assert!(matches!(generate_question(&p, &never, 0), Err(GenerationError::MalformedGeneration(_))));
        assert_eq!(never.calls.load(Ordering::SeqCst), 2);
    }

    #[test]
    fn lifecycle() {
        let q = Question::create("q1", "s", &snapshot(), anchor(1, 3), QuestionMode::MultipleChoice, "", &StubProvider, 3).unwrap();
        assert_eq!(q.status, QuestionStatus::Draft);
        let edits = QuestionEdits { expected_answer: Some("B".into()), ..Default::default() };
        let mut sent = q.edit_and_send(edits).unwrap();
        assert_eq!(sent.status, QuestionStatus::Sent);
        assert_eq!(sent.expected_answer, "B");
        assert!(matches!(
            sent.clone().edit_and_send(QuestionEdits::default()),
            Err(QuestionError::IllegalTransition { from: QuestionStatus::Sent, to: QuestionStatus::Sent })
        ));
        sent.record_answer("B").unwrap();
        assert_eq!(sent.status, QuestionStatus::Answered);
        assert!(sent.record_answer("C").is_err());
    }
}
