//! Shared domain types and the answer-tally algebra used by the consensus
//! engine.
//!
//! Everything here is an immutable value: safe to clone, share, and send
//! across threads. Probabilities are kept as exact `count / total` rationals
//! and compared against [`Threshold`] with strict `>`; no floating-point
//! accumulation happens on a decision path.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::de::{self, Deserializer, Visitor};
use serde::ser::Serializer;
use serde::{Deserialize, Serialize};

/// What shape of answer a task expects.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum TaskKind {
    /// `k` ordered options labeled `A..`, `k >= 2`.
    MultipleChoice { k: u8 },
    /// Canonical labels `yes` / `no`.
    BooleanYesNo,
    /// Canonical labels `True` / `False`.
    BooleanTrueFalse,
}

impl TaskKind {
    /// Canonical option labels for this kind, in option order.
    pub fn canonical_labels(&self) -> Vec<AnswerLabel> {
        match self {
            TaskKind::MultipleChoice { k } => (0..*k)
                .map(|i| AnswerLabel::Letter((b'A' + i) as char))
                .collect(),
            TaskKind::BooleanYesNo => vec![AnswerLabel::Yes, AnswerLabel::No],
            TaskKind::BooleanTrueFalse => vec![AnswerLabel::True, AnswerLabel::False],
        }
    }

    pub fn is_boolean(&self) -> bool {
        !matches!(self, TaskKind::MultipleChoice { .. })
    }
}

/// A canonical answer token: an option letter for multiple choice, a boolean
/// token, or the `ABSTAIN` sentinel for transcripts no answer could be
/// extracted from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum AnswerLabel {
    Letter(char),
    Yes,
    No,
    True,
    False,
    Abstain,
}

impl AnswerLabel {
    pub fn is_abstain(&self) -> bool {
        matches!(self, AnswerLabel::Abstain)
    }

    /// Parse a single option letter (`'A'..='Z'`, case-insensitive).
    pub fn from_letter(c: char) -> Option<AnswerLabel> {
        let up = c.to_ascii_uppercase();
        up.is_ascii_uppercase().then_some(AnswerLabel::Letter(up))
    }
}

impl fmt::Display for AnswerLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AnswerLabel::Letter(c) => write!(f, "{c}"),
            AnswerLabel::Yes => write!(f, "yes"),
            AnswerLabel::No => write!(f, "no"),
            AnswerLabel::True => write!(f, "True"),
            AnswerLabel::False => write!(f, "False"),
            AnswerLabel::Abstain => write!(f, "ABSTAIN"),
        }
    }
}

impl FromStr for AnswerLabel {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "yes" => return Ok(AnswerLabel::Yes),
            "no" => return Ok(AnswerLabel::No),
            "True" => return Ok(AnswerLabel::True),
            "False" => return Ok(AnswerLabel::False),
            "ABSTAIN" => return Ok(AnswerLabel::Abstain),
            _ => {}
        }
        let mut chars = s.chars();
        match (chars.next(), chars.next()) {
            (Some(c), None) if c.is_ascii_uppercase() => Ok(AnswerLabel::Letter(c)),
            _ => Err(format!("not a canonical answer label: {s:?}")),
        }
    }
}

impl Serialize for AnswerLabel {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for AnswerLabel {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        struct LabelVisitor;
        impl Visitor<'_> for LabelVisitor {
            type Value = AnswerLabel;
            fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
                f.write_str("a canonical answer label")
            }
            fn visit_str<E: de::Error>(self, v: &str) -> Result<AnswerLabel, E> {
                v.parse().map_err(E::custom)
            }
        }
        deserializer.deserialize_str(LabelVisitor)
    }
}

#[derive(Debug, thiserror::Error)]
pub enum QuestionError {
    #[error("question {id}: {reason}")]
    Invalid { id: String, reason: String },
}

/// A normalized task instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Question {
    pub id: String,
    pub text: String,
    /// Ordered `(label, option text)` pairs. Labels are unique; their order is
    /// the tie-break order used everywhere downstream.
    pub options: Vec<(AnswerLabel, String)>,
    pub kind: TaskKind,
    pub gold: Option<AnswerLabel>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub meta: BTreeMap<String, String>,
}

impl Question {
    /// Multiple-choice question; options are labeled `A..` in the given order.
    pub fn multiple_choice(
        id: impl Into<String>,
        text: impl Into<String>,
        option_texts: Vec<String>,
        gold_index: Option<usize>,
    ) -> Result<Question, QuestionError> {
        let id = id.into();
        let k = option_texts.len();
        if !(2..=26).contains(&k) {
            return Err(QuestionError::Invalid {
                id,
                reason: format!("multiple choice needs 2..=26 options, got {k}"),
            });
        }
        let options: Vec<(AnswerLabel, String)> = option_texts
            .into_iter()
            .enumerate()
            .map(|(i, t)| (AnswerLabel::Letter((b'A' + i as u8) as char), t))
            .collect();
        let gold = match gold_index {
            Some(g) => {
                if g >= k {
                    return Err(QuestionError::Invalid {
                        id,
                        reason: format!("gold index {g} out of range for {k} options"),
                    });
                }
                Some(options[g].0)
            }
            None => None,
        };
        Ok(Question {
            id,
            text: text.into(),
            options,
            kind: TaskKind::MultipleChoice { k: k as u8 },
            gold,
            meta: BTreeMap::new(),
        })
    }

    /// Boolean question with canonical labels for `kind` and option text equal
    /// to the canonical tokens.
    pub fn boolean(
        id: impl Into<String>,
        text: impl Into<String>,
        kind: TaskKind,
        gold: Option<AnswerLabel>,
    ) -> Result<Question, QuestionError> {
        let id = id.into();
        if !kind.is_boolean() {
            return Err(QuestionError::Invalid {
                id,
                reason: "boolean constructor used with a multiple-choice kind".into(),
            });
        }
        let options: Vec<(AnswerLabel, String)> = kind
            .canonical_labels()
            .into_iter()
            .map(|l| (l, l.to_string()))
            .collect();
        if let Some(g) = gold {
            if !options.iter().any(|(l, _)| *l == g) {
                return Err(QuestionError::Invalid {
                    id,
                    reason: format!("gold {g} is not a label of this kind"),
                });
            }
        }
        Ok(Question {
            id,
            text: text.into(),
            options,
            kind,
            gold,
            meta: BTreeMap::new(),
        })
    }

    pub fn with_meta(mut self, key: &str, value: impl Into<String>) -> Self {
        self.meta.insert(key.to_string(), value.into());
        self
    }

    /// Option labels in option order.
    pub fn labels(&self) -> Vec<AnswerLabel> {
        self.options.iter().map(|(l, _)| *l).collect()
    }

    pub fn has_label(&self, label: AnswerLabel) -> bool {
        self.options.iter().any(|(l, _)| *l == label)
    }

    pub fn option_text(&self, label: AnswerLabel) -> Option<&str> {
        self.options
            .iter()
            .find(|(l, _)| *l == label)
            .map(|(_, t)| t.as_str())
    }

    /// Check the structural invariants (unique ordered labels, gold in
    /// labels, kind consistent with the option count).
    pub fn validate(&self) -> Result<(), QuestionError> {
        let labels = self.labels();
        for (i, a) in labels.iter().enumerate() {
            if a.is_abstain() {
                return Err(self.invalid("ABSTAIN cannot be an option label"));
            }
            if labels[i + 1..].contains(a) {
                return Err(self.invalid(&format!("duplicate option label {a}")));
            }
        }
        match self.kind {
            TaskKind::MultipleChoice { k } => {
                if k < 2 || labels.len() != k as usize {
                    return Err(self.invalid(&format!(
                        "kind says {k} options, question has {}",
                        labels.len()
                    )));
                }
            }
            _ => {
                if labels != self.kind.canonical_labels() {
                    return Err(self.invalid("boolean question must use canonical labels"));
                }
            }
        }
        if let Some(g) = self.gold {
            if !self.has_label(g) {
                return Err(self.invalid(&format!("gold {g} not among option labels")));
            }
        }
        Ok(())
    }

    fn invalid(&self, reason: &str) -> QuestionError {
        QuestionError::Invalid {
            id: self.id.clone(),
            reason: reason.to_string(),
        }
    }
}

/// A reasoner transcript parsed into its procedural sections plus the
/// extracted answer. `raw_text` is preserved verbatim for audit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Solution {
    pub agent_id: String,
    pub raw_text: String,
    pub term_explanation: Option<String>,
    pub subquestions: Vec<(String, String)>,
    pub rationale: Option<String>,
    pub answer: AnswerLabel,
    /// Set when the completion failed and the solution degraded to ABSTAIN.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// An evaluator transcript parsed into critique, counterfactual analysis, and
/// the revised answer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub evaluator_id: String,
    pub raw_text: String,
    pub critique: Option<String>,
    pub counterfactual_used: AnswerLabel,
    /// `None` when the transcript gives no clear signal either way.
    pub contradiction_found: Option<bool>,
    pub revised_answer: AnswerLabel,
    /// True when the revised answer fell back to the solution's answer
    /// because the evaluator output was unparseable.
    #[serde(default)]
    pub revision_fallback: bool,
}

/// An exact rational threshold in `(0, 1)`, compared with strict `>`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Threshold {
    num: u32,
    den: u32,
}

#[derive(Debug, thiserror::Error)]
#[error("threshold must be a rational in (0,1): {0}")]
pub struct ThresholdError(String);

impl Threshold {
    pub fn new(num: u32, den: u32) -> Result<Threshold, ThresholdError> {
        if den == 0 || num == 0 || num >= den {
            return Err(ThresholdError(format!("{num}/{den}")));
        }
        let g = gcd(num, den);
        Ok(Threshold {
            num: num / g,
            den: den / g,
        })
    }

    pub fn half() -> Threshold {
        Threshold { num: 1, den: 2 }
    }

    /// Strict `count/total > num/den`, evaluated in integer arithmetic.
    pub fn is_exceeded_by(&self, count: u32, total: u32) -> bool {
        (count as u64) * (self.den as u64) > (self.num as u64) * (total as u64)
    }

    pub fn as_f64(&self) -> f64 {
        self.num as f64 / self.den as f64
    }
}

fn gcd(a: u32, b: u32) -> u32 {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

impl fmt::Display for Threshold {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.num, self.den)
    }
}

impl FromStr for Threshold {
    type Err = ThresholdError;

    /// Accepts `"num/den"` or a decimal like `"0.5"`, both parsed exactly.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        if let Some((n, d)) = s.split_once('/') {
            let num: u32 = n.trim().parse().map_err(|_| ThresholdError(s.into()))?;
            let den: u32 = d.trim().parse().map_err(|_| ThresholdError(s.into()))?;
            return Threshold::new(num, den);
        }
        if let Some((int, frac)) = s.split_once('.') {
            let int: u32 = if int.is_empty() {
                0
            } else {
                int.parse().map_err(|_| ThresholdError(s.into()))?
            };
            if frac.is_empty() || frac.len() > 9 || !frac.bytes().all(|b| b.is_ascii_digit()) {
                return Err(ThresholdError(s.into()));
            }
            let den = 10u32.pow(frac.len() as u32);
            let num = int
                .checked_mul(den)
                .and_then(|v| v.checked_add(frac.parse::<u32>().unwrap()))
                .ok_or_else(|| ThresholdError(s.into()))?;
            return Threshold::new(num, den);
        }
        Err(ThresholdError(s.into()))
    }
}

impl Serialize for Threshold {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for Threshold {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(de::Error::custom)
    }
}

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum TallyError {
    #[error("no answers to tally")]
    Empty,
    #[error("all {abstain} answers were ABSTAIN")]
    Degenerate { abstain: u32 },
}

/// Frequency tally of one round's answers. ABSTAIN entries are excluded from
/// the counts (and from probability mass) but tracked in `abstain`.
///
/// Construction fails on degenerate input, so `top1`/`topn` are total on any
/// value of this type.
#[derive(Debug, Clone, PartialEq)]
pub struct AnswerTally {
    counts: BTreeMap<AnswerLabel, u32>,
    /// Option order captured at tally time; the deterministic tie-break.
    order: Vec<AnswerLabel>,
    total: u32,
    abstain: u32,
}

impl AnswerTally {
    /// Tally `answers` against the question's option order.
    ///
    /// Non-ABSTAIN answers must be members of `option_order`.
    pub fn tally(
        answers: &[AnswerLabel],
        option_order: &[AnswerLabel],
    ) -> Result<AnswerTally, TallyError> {
        if answers.is_empty() {
            return Err(TallyError::Empty);
        }
        let mut counts: BTreeMap<AnswerLabel, u32> = BTreeMap::new();
        let mut abstain = 0u32;
        for a in answers {
            if a.is_abstain() {
                abstain += 1;
            } else {
                debug_assert!(option_order.contains(a), "answer {a} not an option label");
                *counts.entry(*a).or_insert(0) += 1;
            }
        }
        let total: u32 = counts.values().sum();
        if total == 0 {
            return Err(TallyError::Degenerate { abstain });
        }
        Ok(AnswerTally {
            counts,
            order: option_order.to_vec(),
            total,
            abstain,
        })
    }

    pub fn count(&self, label: AnswerLabel) -> u32 {
        self.counts.get(&label).copied().unwrap_or(0)
    }

    /// Number of non-ABSTAIN answers tallied.
    pub fn total(&self) -> u32 {
        self.total
    }

    pub fn abstain_count(&self) -> u32 {
        self.abstain
    }

    pub fn probability(&self, label: AnswerLabel) -> f64 {
        self.count(label) as f64 / self.total as f64
    }

    /// Exact `Pr(label) > th`.
    pub fn exceeds(&self, label: AnswerLabel, th: Threshold) -> bool {
        th.is_exceeded_by(self.count(label), self.total)
    }

    /// The label with the maximal count; ties break to the earliest option in
    /// option order.
    pub fn top1(&self) -> AnswerLabel {
        let mut best: Option<(AnswerLabel, u32)> = None;
        for label in self.iter_order() {
            let c = self.count(label);
            if c > 0 && best.map_or(true, |(_, bc)| c > bc) {
                best = Some((label, c));
            }
        }
        best.expect("tally is never degenerate by construction").0
    }

    /// Up to `n` labels by descending count, same tie-break as `top1`; fewer
    /// than `n` when fewer distinct labels were answered.
    pub fn topn(&self, n: usize) -> Vec<AnswerLabel> {
        let mut ranked: Vec<AnswerLabel> = self.iter_order().filter(|l| self.count(*l) > 0).collect();
        // stable sort: equal counts keep option order
        ranked.sort_by(|a, b| self.count(*b).cmp(&self.count(*a)));
        ranked.truncate(n);
        ranked
    }

    /// Counted labels in option order with their counts.
    pub fn entries(&self) -> Vec<(AnswerLabel, u32)> {
        self.iter_order()
            .filter(|l| self.count(*l) > 0)
            .map(|l| (l, self.count(l)))
            .collect()
    }

    fn iter_order(&self) -> impl Iterator<Item = AnswerLabel> + '_ {
        // Labels outside the recorded option order cannot appear via the
        // extraction path; chain them defensively so counts never get lost.
        let extras: Vec<AnswerLabel> = self
            .counts
            .keys()
            .copied()
            .filter(|l| !self.order.contains(l))
            .collect();
        self.order.iter().copied().chain(extras)
    }

    pub fn snapshot(&self) -> TallySnapshot {
        TallySnapshot {
            counts: self.entries(),
            abstain: self.abstain,
            total: self.total,
        }
    }
}

/// Serializable view of a tally, in option order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TallySnapshot {
    pub counts: Vec<(AnswerLabel, u32)>,
    pub abstain: u32,
    pub total: u32,
}

/// Which arm of the consensus round ran.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Branch {
    Majority,
    TopN,
    Degenerate,
    /// Pure majority-vote mode (no evaluators configured).
    MajorityOnly,
}

/// Why the consensus loop stopped.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    EvaluatorAgreement,
    TopnMajority,
    MaxDepthFallback,
    DegenerateFallback,
    /// No evaluators configured; the reasoner tally decided directly.
    MajorityVote,
}

/// One evaluator invocation within a round.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalTrace {
    pub solution_agent: String,
    pub solution_answer: AnswerLabel,
    pub counterfactual: AnswerLabel,
    pub revised: AnswerLabel,
}

/// Per-round record of what the engine saw and did.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundTrace {
    pub depth: u32,
    pub branch: Branch,
    /// Reasoner answers in agent order, ABSTAIN included.
    pub answers: Vec<AnswerLabel>,
    pub tally: Option<TallySnapshot>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub evaluations: Vec<EvalTrace>,
    /// Tally of evaluator-revised answers (top-n branch only).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub revised_tally: Option<TallySnapshot>,
}

/// Full per-question record of the consensus run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConsensusTrace {
    pub rounds: Vec<RoundTrace>,
    pub final_answer: AnswerLabel,
    pub termination: Termination,
    pub rng_seed: u64,
}
