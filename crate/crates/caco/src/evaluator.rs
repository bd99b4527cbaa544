//! The causal evaluator agent: counterfactual selection, prompt
//! construction, and verdict/revision parsing.

use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::backend::{
    BackendError, CompletionBackend, CompletionRequest, Message, PromptMessages, SampleSpec,
    SamplingParams,
};
use crate::core::{AnswerLabel, Evaluation, Question, Solution};
use crate::reasoner::{extract_answer, numbered_header};
use crate::rng;
use crate::templates::{self, sections};

/// Which parts of the evaluation procedure run. At least one must stay on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvaluatorFlags {
    /// Assess the proposed solution as a whole.
    pub solution_evaluation: bool,
    /// Test a counterfactual answer for contradictions.
    pub counterfactual: bool,
    /// Let the evaluator reason to its own final answer; when off, it only
    /// accepts or rejects the proposed one.
    pub reconsideration: bool,
}

impl Default for EvaluatorFlags {
    fn default() -> Self {
        EvaluatorFlags { solution_evaluation: true, counterfactual: true, reconsideration: true }
    }
}

impl EvaluatorFlags {
    pub fn validate(&self) -> Result<(), BackendError> {
        if !(self.solution_evaluation || self.counterfactual || self.reconsideration) {
            return Err(BackendError::Config(
                "evaluator needs at least one of its sections enabled".into(),
            ));
        }
        Ok(())
    }
}

/// Draw a counterfactual answer: uniform over the question's labels minus
/// the answer under test, in option order. Consumes exactly one draw from
/// `rng`. For boolean questions this is deterministically the complement
/// (the draw is still consumed, keeping the stream position independent of
/// the question kind).
pub fn select_counterfactual(
    q: &Question,
    under_test: AnswerLabel,
    rng: &mut impl RngCore,
) -> AnswerLabel {
    let candidates: Vec<AnswerLabel> =
        q.labels().into_iter().filter(|l| *l != under_test).collect();
    assert!(!candidates.is_empty(), "question {} has a single label", q.id);
    *rng::draw(rng, &candidates)
}

/// Build the evaluator prompt: numbered scrutiny procedure in the system
/// message; question, proposed solution, and the counterfactual to test in
/// the user message.
pub fn build_evaluator_prompt(
    q: &Question,
    solution: &Solution,
    counterfactual: AnswerLabel,
    flags: EvaluatorFlags,
) -> PromptMessages {
    let section_entries: Vec<(&str, &str)> = templates::EVALUATOR_SECTIONS
        .iter()
        .filter(|(header, _)| match *header {
            sections::EVALUATION => flags.solution_evaluation,
            sections::COUNTERFACTUAL => flags.counterfactual,
            sections::RE_REASONING => flags.reconsideration,
            _ => true,
        })
        .copied()
        .collect();
    let answer_format = if flags.reconsideration {
        templates::answer_format(q.kind)
    } else {
        templates::VERDICT_FORMAT
    };
    let system = templates::render(
        &templates::EVALUATOR_SYSTEM,
        &[
            ("sections", &templates::numbered_sections(&section_entries)),
            ("answer_format", answer_format),
        ],
    );
    let counterfactual_block = if flags.counterfactual {
        format!(
            "\nCounterfactual answer to test: {}",
            templates::render_label(q, counterfactual)
        )
    } else {
        String::new()
    };
    let user = templates::render(
        &templates::EVALUATOR_USER,
        &[
            ("question_block", templates::question_block(q).as_str()),
            ("solution", solution.raw_text.trim_end()),
            ("counterfactual_block", counterfactual_block.as_str()),
        ],
    );
    PromptMessages::new(vec![Message::system(system), Message::user(user.trim_end().to_string())])
        .expect("evaluator prompt is well-formed")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum EvalSection {
    Evaluation,
    Counterfactual,
    ReReasoning,
}

fn eval_header_kind(line: &str) -> Option<(EvalSection, &str)> {
    let (header, remainder) = numbered_header(line)?;
    // "Counterfactual Reasoning" and "Re-reasoning" both contain
    // "reasoning"; check the specific stems first.
    let kind = if header.contains("counterfactual") {
        EvalSection::Counterfactual
    } else if header.contains("re-reason") || header.contains("rereason") || header.contains("reconsider")
    {
        EvalSection::ReReasoning
    } else if header.contains("evaluat") || header.contains("assess") {
        EvalSection::Evaluation
    } else if header.contains("reasoning") || header.contains("answer") {
        EvalSection::ReReasoning
    } else {
        return None;
    };
    Some((kind, remainder))
}

/// Did the counterfactual analysis report a contradiction? Checks denial
/// phrases before the bare stem, so "no contradiction arises" reads as
/// `Some(false)` and plain "this contradicts the given fact" as
/// `Some(true)`. No usable signal yields `None`.
fn parse_contradiction(counterfactual_section: &str) -> Option<bool> {
    let lower = counterfactual_section.to_lowercase();
    if !lower.contains("contradict") {
        return None;
    }
    let denials = ["no contradiction", "without contradiction", "does not contradict", "doesn't contradict", "not contradict"];
    if denials.iter().any(|d| lower.contains(d)) {
        return Some(false);
    }
    Some(true)
}

/// Parse an evaluator transcript into an [`Evaluation`].
///
/// With reconsideration on, the revised answer is extracted like any other
/// transcript; an unextractable transcript falls back to the proposed
/// answer with `revision_fallback` set. With reconsideration off, a final
/// `Verdict: accept`/`Verdict: reject` line keeps the proposed answer or
/// swaps in the counterfactual, respectively.
pub fn parse_evaluation(
    evaluator_id: &str,
    raw: &str,
    q: &Question,
    solution: &Solution,
    counterfactual: AnswerLabel,
    flags: EvaluatorFlags,
) -> Evaluation {
    let mut critique: Vec<&str> = Vec::new();
    let mut counterfactual_text: Vec<&str> = Vec::new();
    let mut current: Option<EvalSection> = None;
    for line in raw.lines() {
        if let Some((kind, remainder)) = eval_header_kind(line) {
            current = Some(kind);
            if !remainder.is_empty() {
                match kind {
                    EvalSection::Evaluation => critique.push(remainder),
                    EvalSection::Counterfactual => counterfactual_text.push(remainder),
                    EvalSection::ReReasoning => {}
                }
            }
            continue;
        }
        match current {
            Some(EvalSection::Evaluation) => critique.push(line),
            Some(EvalSection::Counterfactual) => counterfactual_text.push(line),
            _ => {}
        }
    }
    let critique_joined = critique.join("\n").trim().to_string();
    let counterfactual_joined = counterfactual_text.join("\n");
    // Fall back to scanning the whole transcript when no counterfactual
    // section was found.
    let contradiction_found = if counterfactual_joined.trim().is_empty() {
        parse_contradiction(raw)
    } else {
        parse_contradiction(&counterfactual_joined)
    };

    let (revised_answer, revision_fallback) = if flags.reconsideration {
        match extract_answer(raw, q) {
            AnswerLabel::Abstain => {
                log::warn!(
                    "{evaluator_id} produced no extractable answer on question {}; \
                     keeping the proposed answer",
                    q.id
                );
                (solution.answer, true)
            }
            label => (label, false),
        }
    } else {
        match parse_verdict(raw) {
            Some(Verdict::Accept) => (solution.answer, false),
            Some(Verdict::Reject) => (counterfactual, false),
            None => {
                log::warn!(
                    "{evaluator_id} produced no verdict on question {}; \
                     keeping the proposed answer",
                    q.id
                );
                (solution.answer, true)
            }
        }
    };

    Evaluation {
        evaluator_id: evaluator_id.to_string(),
        raw_text: raw.to_string(),
        critique: (!critique_joined.is_empty()).then_some(critique_joined),
        counterfactual_used: counterfactual,
        contradiction_found,
        revised_answer,
        revision_fallback,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Verdict {
    Accept,
    Reject,
}

/// The last `Verdict:` line, read case-insensitively.
fn parse_verdict(raw: &str) -> Option<Verdict> {
    let lower = raw.to_lowercase();
    let mut verdict = None;
    let mut from = 0;
    while let Some(found) = lower[from..].find("verdict") {
        let at = from + found;
        let after = &lower[at + "verdict".len()..];
        let trimmed = after.trim_start_matches([' ', '\t']);
        if let Some(content) = trimmed.strip_prefix(':') {
            let line = content.lines().next().unwrap_or("");
            if line.contains("accept") {
                verdict = Some(Verdict::Accept);
            } else if line.contains("reject") {
                verdict = Some(Verdict::Reject);
            }
        }
        from = at + "verdict".len();
    }
    verdict
}

/// Run one evaluator call against a proposed solution.
///
/// The call failing is an error for the caller to handle; unlike reasoner
/// fan-out there is no quorum to absorb it here.
#[allow(clippy::too_many_arguments)]
pub fn evaluate<B: CompletionBackend>(
    backend: &B,
    q: &Question,
    solution: &Solution,
    counterfactual: AnswerLabel,
    flags: EvaluatorFlags,
    params: &SamplingParams,
    sample_index: u32,
    evaluator_id: &str,
) -> Result<Evaluation, BackendError> {
    flags.validate()?;
    let prompt = build_evaluator_prompt(q, solution, counterfactual, flags);
    let request = CompletionRequest {
        messages: &prompt,
        params,
        sample: SampleSpec::Index(sample_index),
    };
    let completion = backend.complete(&request)?;
    Ok(parse_evaluation(evaluator_id, &completion.text, q, solution, counterfactual, flags))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::ScriptedBackend;
    use crate::core::TaskKind;
    use crate::reasoner::parse_solution;
    use AnswerLabel::*;

    fn mc4() -> Question {
        Question::multiple_choice(
            "q-mc",
            "Which word does not belong with the others?",
            vec!["clown".into(), "room".into(), "king".into(), "teacher".into()],
            Some(1),
        )
        .unwrap()
    }

    fn yesno() -> Question {
        Question::boolean("q-yn", "were the twin towers tall?", TaskKind::BooleanYesNo, None)
            .unwrap()
    }

    fn solution_with(q: &Question, answer_line: &str) -> Solution {
        parse_solution("reasoner-1", &format!("4. Answer: {answer_line}"), q)
    }

    // --- counterfactual selection ---

    #[test]
    fn counterfactual_never_equals_answer_under_test() {
        let q = mc4();
        for seed in 0..200u64 {
            let mut rng = rng::question_rng(seed, &q.id);
            let cf = select_counterfactual(&q, Letter('B'), &mut rng);
            assert_ne!(cf, Letter('B'));
            assert!(q.has_label(cf));
        }
    }

    #[test]
    fn counterfactual_covers_all_alternatives() {
        let q = mc4();
        let mut seen = std::collections::BTreeSet::new();
        for seed in 0..200u64 {
            let mut rng = rng::question_rng(seed, &q.id);
            seen.insert(select_counterfactual(&q, Letter('B'), &mut rng));
        }
        assert_eq!(seen.len(), 3, "all three alternatives should appear: {seen:?}");
    }

    #[test]
    fn boolean_counterfactual_is_the_complement() {
        let q = yesno();
        let mut rng = rng::question_rng(7, &q.id);
        assert_eq!(select_counterfactual(&q, Yes, &mut rng), No);
        assert_eq!(select_counterfactual(&q, No, &mut rng), Yes);
    }

    #[test]
    fn selection_is_deterministic_per_stream() {
        let q = mc4();
        let a = select_counterfactual(&q, Letter('A'), &mut rng::question_rng(3, &q.id));
        let b = select_counterfactual(&q, Letter('A'), &mut rng::question_rng(3, &q.id));
        assert_eq!(a, b);
    }

    // --- prompt ---

    #[test]
    fn prompt_contains_procedure_solution_and_counterfactual() {
        let q = mc4();
        let solution = solution_with(&q, "(B) room");
        let prompt =
            build_evaluator_prompt(&q, &solution, Letter('C'), EvaluatorFlags::default());
        let system = &prompt.messages()[0].content;
        assert!(system.contains(&format!("1. {}:", sections::EVALUATION)));
        assert!(system.contains(&format!("2. {}:", sections::COUNTERFACTUAL)));
        assert!(system.contains(&format!("3. {}:", sections::RE_REASONING)));
        assert!(system.contains("Answer: (X)"));
        let user = &prompt.messages()[1].content;
        assert!(user.contains("Options: (A) clown"));
        assert!(user.contains("Proposed solution:\n4. Answer: (B) room"));
        assert!(user.contains("Counterfactual answer to test: (C) king"));
    }

    #[test]
    fn flags_drop_sections_and_renumber() {
        let q = mc4();
        let solution = solution_with(&q, "(B)");
        let flags = EvaluatorFlags {
            solution_evaluation: false,
            counterfactual: true,
            reconsideration: true,
        };
        let prompt = build_evaluator_prompt(&q, &solution, Letter('A'), flags);
        let system = &prompt.messages()[0].content;
        assert!(!system.contains(sections::EVALUATION.to_string().as_str()) || system.starts_with("You are a causal evaluator"));
        assert!(system.contains(&format!("1. {}:", sections::COUNTERFACTUAL)));
        assert!(system.contains(&format!("2. {}:", sections::RE_REASONING)));
    }

    #[test]
    fn no_counterfactual_flag_drops_the_block() {
        let q = mc4();
        let solution = solution_with(&q, "(B)");
        let flags = EvaluatorFlags {
            solution_evaluation: true,
            counterfactual: false,
            reconsideration: true,
        };
        let prompt = build_evaluator_prompt(&q, &solution, Letter('A'), flags);
        assert!(!prompt.messages()[1].content.contains("Counterfactual answer to test"));
        assert!(!prompt.messages()[0].content.contains(sections::COUNTERFACTUAL));
    }

    #[test]
    fn verdict_format_when_reconsideration_off() {
        let q = mc4();
        let solution = solution_with(&q, "(B)");
        let flags = EvaluatorFlags {
            solution_evaluation: true,
            counterfactual: true,
            reconsideration: false,
        };
        let prompt = build_evaluator_prompt(&q, &solution, Letter('A'), flags);
        let system = &prompt.messages()[0].content;
        assert!(system.contains("Verdict: accept"));
        assert!(!system.contains("Answer: (X)"));
    }

    #[test]
    fn all_flags_off_is_invalid() {
        let flags = EvaluatorFlags {
            solution_evaluation: false,
            counterfactual: false,
            reconsideration: false,
        };
        assert!(flags.validate().is_err());
    }

    // --- parsing ---

    const EVAL_TRANSCRIPT: &str = "\
1. Evaluation: The solution's claim that a room is not a person is factual, \
and each inference follows from the previous one.
2. Counterfactual Reasoning: Suppose the answer were (C) king. A king is a \
person like clown and teacher, so king cannot be the odd one out; this \
contradicts the premise of the counterfactual.
3. Re-reasoning: Three options name people and one names a place. \
Therefore, the most likely answer is (B) room.";

    #[test]
    fn parses_critique_contradiction_and_revision() {
        let q = mc4();
        let solution = solution_with(&q, "(B) room");
        let eval = parse_evaluation(
            "evaluator-1",
            EVAL_TRANSCRIPT,
            &q,
            &solution,
            Letter('C'),
            EvaluatorFlags::default(),
        );
        assert!(eval.critique.as_deref().unwrap().contains("factual"));
        assert_eq!(eval.counterfactual_used, Letter('C'));
        assert_eq!(eval.contradiction_found, Some(true));
        assert_eq!(eval.revised_answer, Letter('B'));
        assert!(!eval.revision_fallback);
    }

    #[test]
    fn no_contradiction_reads_as_false() {
        let q = yesno();
        let solution = solution_with(&q, "yes");
        let raw = "\
1. Evaluation: sound throughout.
2. Counterfactual Reasoning: If the answer were no, nothing in the question \
conflicts; there is no contradiction.
3. Re-reasoning: Answer: no";
        let eval = parse_evaluation("e", raw, &q, &solution, No, EvaluatorFlags::default());
        assert_eq!(eval.contradiction_found, Some(false));
        assert_eq!(eval.revised_answer, No);
    }

    #[test]
    fn missing_signal_is_none() {
        let q = yesno();
        let solution = solution_with(&q, "yes");
        let raw = "1. Evaluation: fine.\n3. Re-reasoning: Answer: yes";
        let eval = parse_evaluation("e", raw, &q, &solution, No, EvaluatorFlags::default());
        assert_eq!(eval.contradiction_found, None);
    }

    #[test]
    fn unextractable_revision_falls_back_to_proposal() {
        let q = mc4();
        let solution = solution_with(&q, "(B) room");
        let eval = parse_evaluation(
            "e",
            "I find this difficult to assess.",
            &q,
            &solution,
            Letter('A'),
            EvaluatorFlags::default(),
        );
        assert_eq!(eval.revised_answer, Letter('B'));
        assert!(eval.revision_fallback);
    }

    #[test]
    fn verdict_accept_keeps_proposal() {
        let q = mc4();
        let solution = solution_with(&q, "(B) room");
        let flags = EvaluatorFlags { reconsideration: false, ..EvaluatorFlags::default() };
        let eval = parse_evaluation(
            "e",
            "1. Evaluation: sound.\n2. Counterfactual Reasoning: contradicts.\nVerdict: accept",
            &q,
            &solution,
            Letter('D'),
            flags,
        );
        assert_eq!(eval.revised_answer, Letter('B'));
        assert!(!eval.revision_fallback);
    }

    #[test]
    fn verdict_reject_swaps_in_counterfactual() {
        let q = mc4();
        let solution = solution_with(&q, "(B) room");
        let flags = EvaluatorFlags { reconsideration: false, ..EvaluatorFlags::default() };
        let eval = parse_evaluation(
            "e",
            "1. Evaluation: the second inference is unsound.\nVerdict: reject",
            &q,
            &solution,
            Letter('D'),
            flags,
        );
        assert_eq!(eval.revised_answer, Letter('D'));
    }

    #[test]
    fn missing_verdict_falls_back() {
        let q = mc4();
        let solution = solution_with(&q, "(B) room");
        let flags = EvaluatorFlags { reconsideration: false, ..EvaluatorFlags::default() };
        let eval = parse_evaluation("e", "unclear rambling", &q, &solution, Letter('D'), flags);
        assert_eq!(eval.revised_answer, Letter('B'));
        assert!(eval.revision_fallback);
    }

    // --- end to end ---

    #[test]
    fn evaluate_runs_one_call() {
        let backend = ScriptedBackend::queue([EVAL_TRANSCRIPT]);
        let q = mc4();
        let solution = solution_with(&q, "(B) room");
        let eval = evaluate(
            &backend,
            &q,
            &solution,
            Letter('C'),
            EvaluatorFlags::default(),
            &SamplingParams::default(),
            0,
            "evaluator-1",
        )
        .unwrap();
        assert_eq!(eval.evaluator_id, "evaluator-1");
        assert_eq!(eval.revised_answer, Letter('B'));
        assert_eq!(backend.calls(), 1);
    }

    #[test]
    fn evaluate_propagates_backend_errors() {
        let backend = ScriptedBackend::queue(Vec::<String>::new());
        let q = mc4();
        let solution = solution_with(&q, "(B)");
        let err = evaluate(
            &backend,
            &q,
            &solution,
            Letter('A'),
            EvaluatorFlags::default(),
            &SamplingParams::default(),
            0,
            "evaluator-1",
        )
        .unwrap_err();
        assert!(matches!(err, BackendError::ScriptExhausted { .. }));
    }
}
