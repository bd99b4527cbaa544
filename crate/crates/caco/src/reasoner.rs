//! The reasoner agent: procedural prompt construction, transcript parsing,
//! and answer extraction.
//!
//! Answer extraction is a total function — any transcript maps to a label or
//! to `ABSTAIN` — and is shared by every strategy in the crate, so accuracy
//! differences between strategies can never come from different parsing.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::backend::{
    BackendError, CompletionBackend, CompletionRequest, Message, PromptMessages, SampleSpec,
    SamplingParams,
};
use crate::core::{AnswerLabel, Question, Solution, TaskKind};
use crate::templates::{self, sections, Demo};

/// How many worked examples precede the real question.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShotConfig {
    #[default]
    Zero,
    One,
}

impl fmt::Display for ShotConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ShotConfig::Zero => f.write_str("zero"),
            ShotConfig::One => f.write_str("one"),
        }
    }
}

impl std::str::FromStr for ShotConfig {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "zero" | "0" => Ok(ShotConfig::Zero),
            "one" | "1" => Ok(ShotConfig::One),
            other => Err(format!("unknown shot setting {other:?}: expected zero or one")),
        }
    }
}

/// Which procedural sections the reasoner is asked for. Sections renumber
/// when one is disabled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReasonerFlags {
    /// Ask for the explanation-of-terms section.
    pub term_explanation: bool,
}

impl Default for ReasonerFlags {
    fn default() -> Self {
        ReasonerFlags { term_explanation: true }
    }
}

/// Build the reasoner prompt: a system message holding the numbered
/// procedure and answer syntax, an optional one-shot exemplar, and the
/// question. Identical for every reasoner in a round; diversity comes from
/// sampling alone.
pub fn build_reasoner_prompt(
    q: &Question,
    shot: ShotConfig,
    flags: ReasonerFlags,
    demo: Option<&Demo>,
) -> PromptMessages {
    let section_entries: Vec<(&str, &str)> = templates::REASONER_SECTIONS
        .iter()
        .filter(|(header, _)| flags.term_explanation || *header != sections::TERM_EXPLANATION)
        .copied()
        .collect();
    let system = templates::render(
        &templates::REASONER_SYSTEM,
        &[
            ("sections", &templates::numbered_sections(&section_entries)),
            ("answer_format", templates::answer_format(q.kind)),
        ],
    );
    let mut messages = vec![Message::system(system)];
    if shot == ShotConfig::One {
        if let Some(demo) = demo {
            if let Some(answer) = demo.answer("reasoner") {
                messages.push(Message::user(templates::question_block(&demo.question)));
                messages.push(Message::assistant(answer));
            }
        }
    }
    messages.push(Message::user(templates::question_block(q)));
    PromptMessages::new(messages).expect("reasoner prompt is well-formed")
}

// ---------------------------------------------------------------------------
// Answer extraction
// ---------------------------------------------------------------------------

/// A candidate label found in text: where, what, how.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Candidate {
    /// Byte position in the (lowercased) scan text.
    pos: usize,
    /// Matched length, used to prefer longer matches at equal positions.
    len: usize,
    /// Finder precedence at equal position and length (lower wins).
    rank: u8,
    label: AnswerLabel,
}

/// Extract the concluded answer from a transcript.
///
/// Rules, in order; the first rule that applies decides:
///
/// 1. The last `Answer:` line. Its content is scanned for the earliest
///    valid label (parenthesized or guarded bare letter, boolean token,
///    option text). An `Answer:` line that names no valid label is an
///    explicit non-answer: extraction stops with `ABSTAIN` rather than
///    falling through, so "Answer: E" against options A–D and
///    "Answer: Neither" both abstain.
/// 2. The last parenthesized option letter like `(B)`, or a bare valid
///    letter guarded by following punctuation (`B.`/`B)`/`B,`), anywhere.
/// 3. The last whole-phrase option-text match, longer options claiming
///    overlapping shorter ones (so option "room" never fires inside the
///    word "bedroom").
/// 4. For boolean kinds, the last whole-word boolean token.
///
/// Within rules 2–4 the last match wins — agents conclude at the end.
pub fn extract_answer(raw: &str, q: &Question) -> AnswerLabel {
    if let Some(content) = last_answer_line(raw) {
        return resolve_content(&content, q).unwrap_or(AnswerLabel::Abstain);
    }
    if let Some(c) = letter_candidates(raw, q).into_iter().max_by_key(|c| (c.pos, c.len)) {
        return c.label;
    }
    if let Some(c) = option_text_candidates(raw, q).into_iter().max_by_key(|c| (c.pos, c.len)) {
        return c.label;
    }
    if q.kind.is_boolean() {
        if let Some(c) = boolean_candidates(raw, q.kind).into_iter().max_by_key(|c| c.pos) {
            return c.label;
        }
    }
    AnswerLabel::Abstain
}

/// Content of the last `answer:`-style marker (case-insensitive, optional
/// space before the colon). When the marker ends its line, the next
/// non-empty line is the content.
fn last_answer_line(raw: &str) -> Option<String> {
    let lower = raw.to_lowercase();
    let mut last: Option<usize> = None;
    let mut search_from = 0;
    while let Some(found) = lower[search_from..].find("answer") {
        let at = search_from + found;
        let after = &lower[at + "answer".len()..];
        let non_space = after.find(|c: char| !matches!(c, ' ' | '\t')).unwrap_or(after.len());
        if after[non_space..].starts_with(':') {
            last = Some(at + "answer".len() + non_space + 1);
        }
        search_from = at + "answer".len();
    }
    let content_start = last?;
    let rest = &raw[content_start..];
    let mut lines = rest.lines();
    let same_line = lines.next().unwrap_or("").trim();
    if !same_line.is_empty() {
        return Some(same_line.to_string());
    }
    lines.map(str::trim).find(|l| !l.is_empty()).map(str::to_string)
}

/// Scan answer-line content for the earliest valid label.
fn resolve_content(content: &str, q: &Question) -> Option<AnswerLabel> {
    let mut candidates = letter_candidates(content, q);
    candidates.extend(option_text_candidates(content, q));
    if q.kind.is_boolean() {
        candidates.extend(boolean_candidates(content, q.kind));
    }
    candidates.into_iter().min_by_key(|c| (c.pos, c.rank, usize::MAX - c.len)).map(|c| c.label)
}

/// Parenthesized letters `(B)` (rank 0) and bare letters guarded by
/// following punctuation (rank 1). Only letters that are labels of `q`
/// count.
fn letter_candidates(text: &str, q: &Question) -> Vec<Candidate> {
    let bytes = text.as_bytes();
    let mut found = Vec::new();
    for (i, &b) in bytes.iter().enumerate() {
        if b == b'(' && i + 2 < bytes.len() && bytes[i + 2] == b')' {
            let c = bytes[i + 1] as char;
            if c.is_ascii_alphabetic() {
                if let Some(label) = valid_letter(c, q) {
                    found.push(Candidate { pos: i, len: 3, rank: 0, label });
                }
            }
        }
        if (b as char).is_ascii_uppercase() {
            let prev_ok = i == 0
                || !bytes[i - 1].is_ascii_alphanumeric() && bytes[i - 1] != b'(';
            let next_ok = matches!(bytes.get(i + 1), None | Some(b'.' | b')' | b':' | b',' | b'!' | b'?'));
            if prev_ok && next_ok {
                if let Some(label) = valid_letter(b as char, q) {
                    found.push(Candidate { pos: i, len: 1, rank: 1, label });
                }
            }
        }
    }
    found
}

fn valid_letter(c: char, q: &Question) -> Option<AnswerLabel> {
    let label = AnswerLabel::from_letter(c)?;
    q.has_label(label).then_some(label)
}

/// Whole-phrase option-text matches (rank 3), case-insensitive, with longer
/// options claiming overlapping shorter matches.
fn option_text_candidates(text: &str, q: &Question) -> Vec<Candidate> {
    let haystack = text.to_lowercase();
    // Longest option first so it can claim its range.
    let mut needles: Vec<(AnswerLabel, String)> = q
        .options
        .iter()
        .map(|(label, text)| (*label, normalize_option(text)))
        .filter(|(_, n)| !n.is_empty())
        .collect();
    needles.sort_by_key(|(_, n)| std::cmp::Reverse(n.len()));

    let mut claimed: Vec<(usize, usize)> = Vec::new();
    let mut found = Vec::new();
    for (label, needle) in &needles {
        for pos in find_whole(&haystack, needle) {
            let range = (pos, pos + needle.len());
            let overlaps = claimed.iter().any(|&(s, e)| range.0 < e && s < range.1);
            if !overlaps {
                claimed.push(range);
                found.push(Candidate { pos, len: needle.len(), rank: 3, label: *label });
            }
        }
    }
    found
}

fn normalize_option(text: &str) -> String {
    text.trim().trim_end_matches('.').to_lowercase()
}

/// Whole-word boolean tokens for the kind (rank 2).
fn boolean_candidates(text: &str, kind: TaskKind) -> Vec<Candidate> {
    let tokens: &[(&str, AnswerLabel)] = match kind {
        TaskKind::BooleanYesNo => &[("yes", AnswerLabel::Yes), ("no", AnswerLabel::No)],
        TaskKind::BooleanTrueFalse => {
            &[("true", AnswerLabel::True), ("false", AnswerLabel::False)]
        }
        TaskKind::MultipleChoice { .. } => return Vec::new(),
    };
    let haystack = text.to_lowercase();
    let mut found = Vec::new();
    for (token, label) in tokens {
        for pos in find_whole(&haystack, token) {
            found.push(Candidate { pos, len: token.len(), rank: 2, label: *label });
        }
    }
    found
}

/// All occurrences of `needle` in `haystack` bounded by non-alphanumerics.
fn find_whole(haystack: &str, needle: &str) -> Vec<usize> {
    let mut positions = Vec::new();
    let mut from = 0;
    while let Some(found) = haystack[from..].find(needle) {
        let pos = from + found;
        let end = pos + needle.len();
        let prev_ok = pos == 0
            || haystack[..pos].chars().next_back().is_some_and(|c| !c.is_alphanumeric());
        let next_ok =
            end == haystack.len() || haystack[end..].chars().next().is_some_and(|c| !c.is_alphanumeric());
        if prev_ok && next_ok {
            positions.push(pos);
        }
        from = pos + needle.len().max(1);
    }
    positions
}

// ---------------------------------------------------------------------------
// Transcript parsing
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum SectionKind {
    Term,
    Subquestions,
    Rationale,
    Answer,
}

/// Split a line of the form `1. Header: remainder` into the lowercased
/// header text and the remainder. Accepts `2)` numbering, `-` separators,
/// markdown decoration, and bare short header lines with content below.
pub(crate) fn numbered_header(line: &str) -> Option<(String, &str)> {
    let trimmed = line.trim_start().trim_start_matches(['#', '*', ' ']);
    let digits = trimmed.chars().take_while(|c| c.is_ascii_digit()).count();
    if digits == 0 {
        return None;
    }
    let after_number = trimmed[digits..].strip_prefix(['.', ')'])?;
    let (header, remainder) = match after_number.find([':', '-']) {
        Some(sep) => (&after_number[..sep], after_number[sep + 1..].trim_start()),
        None if after_number.trim().len() <= 60 => (after_number, ""),
        None => return None,
    };
    let header = header.replace(['*', '#'], "").to_lowercase();
    if header.len() > 80 {
        return None;
    }
    Some((header, remainder))
}

/// Classify a line as a numbered reasoner section header.
///
/// Renamed headers are tolerated as long as a recognizable stem survives
/// ("concepts", "subquesiton", "reasoning").
fn header_kind(line: &str) -> Option<(SectionKind, &str)> {
    let (header, remainder) = numbered_header(line)?;
    // Stems are checked most-specific first; "Answering" appears inside the
    // subquestion header, so that header must win before the answer stem.
    let kind = if header.contains("subques") || header.contains("decomposition") {
        SectionKind::Subquestions
    } else if header.contains("term") || header.contains("concept") {
        SectionKind::Term
    } else if header.contains("rational") || header.contains("reasoning") {
        SectionKind::Rationale
    } else if header.contains("answer") {
        SectionKind::Answer
    } else {
        return None;
    };
    Some((kind, remainder))
}

/// Parse a reasoner transcript into a [`Solution`].
///
/// Total: missing sections become `None`/empty and the answer falls back to
/// [`extract_answer`] over the raw text, so a free-form transcript still
/// yields a usable solution.
pub fn parse_solution(agent_id: &str, raw: &str, q: &Question) -> Solution {
    let mut term: Vec<&str> = Vec::new();
    let mut subq: Vec<&str> = Vec::new();
    let mut rationale: Vec<&str> = Vec::new();
    let mut current: Option<SectionKind> = None;
    for line in raw.lines() {
        if let Some((kind, remainder)) = header_kind(line) {
            current = Some(kind);
            if !remainder.is_empty() {
                match kind {
                    SectionKind::Term => term.push(remainder),
                    SectionKind::Subquestions => subq.push(remainder),
                    SectionKind::Rationale => rationale.push(remainder),
                    SectionKind::Answer => {}
                }
            }
            continue;
        }
        match current {
            Some(SectionKind::Term) => term.push(line),
            Some(SectionKind::Subquestions) => subq.push(line),
            Some(SectionKind::Rationale) => rationale.push(line),
            _ => {}
        }
    }
    let join = |lines: Vec<&str>| {
        let joined = lines.join("\n").trim().to_string();
        (!joined.is_empty()).then_some(joined)
    };
    Solution {
        agent_id: agent_id.to_string(),
        raw_text: raw.to_string(),
        term_explanation: join(term),
        subquestions: parse_subquestions(&subq.join("\n")),
        rationale: join(rationale),
        answer: extract_answer(raw, q),
        error: None,
    }
}

/// Split a subquestion section into `(question, answer)` pairs.
///
/// Pairs look like `Subquestion 1: ... Answer: ...`, inline or across
/// lines. The stem `subques` also covers the occasional "subquesiton"
/// misspelling.
pub fn parse_subquestions(section: &str) -> Vec<(String, String)> {
    let lower = section.to_lowercase();
    // Start positions of each subquestion marker.
    let mut starts = Vec::new();
    let mut from = 0;
    while let Some(found) = lower[from..].find("subques") {
        starts.push(from + found);
        from = from + found + "subques".len();
    }
    let mut pairs = Vec::new();
    for (i, &start) in starts.iter().enumerate() {
        let end = starts.get(i + 1).copied().unwrap_or(section.len());
        let chunk = &section[start..end];
        let Some(colon) = chunk.find(':') else { continue };
        let body = &chunk[colon + 1..];
        let lower_body = body.to_lowercase();
        let (question, answer) = match lower_body.find("answer") {
            Some(a) if lower_body[a + "answer".len()..].trim_start().starts_with(':') => {
                let answer_colon =
                    a + "answer".len() + lower_body[a + "answer".len()..].find(':').unwrap() + 1;
                (&body[..a], body[answer_colon..].trim())
            }
            _ => (body, ""),
        };
        let question = question.trim().to_string();
        if !question.is_empty() {
            pairs.push((question, answer.to_string()));
        }
    }
    pairs
}

// ---------------------------------------------------------------------------
// Fan-out
// ---------------------------------------------------------------------------

#[derive(Debug, thiserror::Error)]
pub enum AgentError {
    /// Every call in a fan-out failed; there is nothing to tally.
    #[error("all {n} agent calls failed; last error: {last}")]
    AllCallsFailed { n: usize, last: String },
    #[error(transparent)]
    Backend(#[from] BackendError),
}

/// Everything fixed about reasoner calls for one run.
#[derive(Debug, Clone)]
pub struct ReasonerConfig {
    pub n_reasoners: usize,
    pub shot: ShotConfig,
    pub flags: ReasonerFlags,
    pub params: SamplingParams,
    pub demo: Option<Demo>,
}

impl Default for ReasonerConfig {
    fn default() -> Self {
        ReasonerConfig {
            n_reasoners: 2,
            shot: ShotConfig::Zero,
            flags: ReasonerFlags::default(),
            params: SamplingParams::default(),
            demo: None,
        }
    }
}

/// Run the configured reasoners against one question, in parallel.
///
/// Agent `i` (0-based) is drawn with sample index `sample_base + i`, so a
/// caching layer maps agents to cache entries deterministically. Solutions
/// come back in agent order. A failed call degrades to an `ABSTAIN`
/// solution carrying the error; only a fully failed fan-out is an error.
pub fn run_reasoners<B: CompletionBackend>(
    backend: &B,
    q: &Question,
    config: &ReasonerConfig,
    sample_base: u32,
) -> Result<Vec<Solution>, AgentError> {
    assert!(config.n_reasoners >= 1, "at least one reasoner is required");
    let prompt = build_reasoner_prompt(q, config.shot, config.flags, config.demo.as_ref());
    let outcomes: Vec<Result<String, BackendError>> = std::thread::scope(|scope| {
        let handles: Vec<_> = (0..config.n_reasoners)
            .map(|i| {
                let prompt = &prompt;
                let params = &config.params;
                scope.spawn(move || {
                    let request = CompletionRequest {
                        messages: prompt,
                        params,
                        sample: SampleSpec::Index(sample_base + i as u32),
                    };
                    backend.complete(&request).map(|c| c.text)
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("reasoner thread panicked")).collect()
    });

    let mut solutions = Vec::with_capacity(config.n_reasoners);
    let mut last_error = None;
    for (i, outcome) in outcomes.into_iter().enumerate() {
        let agent_id = format!("reasoner-{}", i + 1);
        match outcome {
            Ok(text) => solutions.push(parse_solution(&agent_id, &text, q)),
            Err(e) => {
                log::warn!("{agent_id} failed on question {}: {e}", q.id);
                last_error = Some(e.to_string());
                solutions.push(Solution {
                    agent_id,
                    raw_text: String::new(),
                    term_explanation: None,
                    subquestions: Vec::new(),
                    rationale: None,
                    answer: AnswerLabel::Abstain,
                    error: Some(e.to_string()),
                });
            }
        }
    }
    if let Some(last) = last_error {
        if solutions.iter().all(|s| s.error.is_some()) {
            return Err(AgentError::AllCallsFailed { n: config.n_reasoners, last });
        }
    }
    Ok(solutions)
}
