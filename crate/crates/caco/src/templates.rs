//! Embedded prompt templates, section vocabulary, and one-shot demos.
//!
//! Templates are plain text with `{name}` placeholders filled by [`render`].
//! The section header strings live here as constants because the prompt
//! builders and the transcript parsers must agree on them exactly.

use std::collections::BTreeMap;
use std::sync::OnceLock;

use serde::Deserialize;

use crate::core::{AnswerLabel, Question, TaskKind};

/// An embedded template, identified for the run-log template manifest.
#[derive(Debug, Clone, Copy)]
pub struct Template {
    pub id: &'static str,
    pub text: &'static str,
}

macro_rules! template {
    ($name:ident, $file:literal) => {
        pub const $name: Template =
            Template { id: $file, text: include_str!(concat!("../assets/templates/", $file)) };
    };
}

template!(REASONER_SYSTEM, "reasoner_system.txt");
template!(EVALUATOR_SYSTEM, "evaluator_system.txt");
template!(EVALUATOR_USER, "evaluator_user.txt");
template!(BASE_USER, "base_user.txt");
template!(COT_USER, "cot_user.txt");
template!(L2M_DECOMPOSE_USER, "l2m_decompose_user.txt");
template!(L2M_SUBQUESTION_USER, "l2m_subquestion_user.txt");
template!(L2M_FINAL_USER, "l2m_final_user.txt");

const ALL_TEMPLATES: [Template; 8] = [
    REASONER_SYSTEM,
    EVALUATOR_SYSTEM,
    EVALUATOR_USER,
    BASE_USER,
    COT_USER,
    L2M_DECOMPOSE_USER,
    L2M_SUBQUESTION_USER,
    L2M_FINAL_USER,
];

/// `template id -> SHA-256 of its text`, recorded in run logs so replays can
/// detect prompt drift.
pub fn manifest() -> BTreeMap<&'static str, String> {
    ALL_TEMPLATES.iter().map(|t| (t.id, crate::backend::text_digest(t.text))).collect()
}

/// Fill `{name}` placeholders. Unknown placeholders are left untouched;
/// substituted values are inserted literally.
pub fn render(template: &Template, vars: &[(&str, &str)]) -> String {
    let mut out = template.text.to_string();
    for (name, value) in vars {
        out = out.replace(&format!("{{{name}}}"), value);
    }
    out
}

/// System message for the single-agent baseline strategies.
pub const BASELINE_SYSTEM: &str = "You are a helpful assistant.";

/// Section header vocabulary shared between prompt builders and parsers.
pub mod sections {
    pub const TERM_EXPLANATION: &str = "Explanation of Terms";
    pub const SUBQUESTIONS: &str = "Subquestion Decomposition and Answering";
    pub const RATIONALE: &str = "Rationale for the Answer";
    pub const ANSWER: &str = "Answer";
    pub const EVALUATION: &str = "Evaluation";
    pub const COUNTERFACTUAL: &str = "Counterfactual Reasoning";
    pub const RE_REASONING: &str = "Re-reasoning";
}

/// Reasoner procedure: `(header, instruction)` in prompt order.
pub const REASONER_SECTIONS: [(&str, &str); 4] = [
    (
        sections::TERM_EXPLANATION,
        "explain the key terms, concepts, or principles the question involves.",
    ),
    (
        sections::SUBQUESTIONS,
        "break the question into single-step subquestions and answer each in turn, \
         writing \"Subquestion N: ...\" followed by \"Answer: ...\" for each.",
    ),
    (sections::RATIONALE, "reason toward the final answer using the sections above."),
    (sections::ANSWER, "state your final answer."),
];

/// Evaluator procedure: `(header, instruction)` in prompt order.
pub const EVALUATOR_SECTIONS: [(&str, &str); 3] = [
    (
        sections::EVALUATION,
        "assess the proposed solution as a whole: check that the knowledge it uses is \
         factual and that every reasoning step is sound.",
    ),
    (
        sections::COUNTERFACTUAL,
        "suppose the counterfactual answer given below were correct, trace its \
         consequences against the question, and report any contradiction you find.",
    ),
    (
        sections::RE_REASONING,
        "weigh the original answer against the counterfactual analysis and reason to \
         your own final answer.",
    ),
];

/// Number the given `(header, instruction)` pairs as prompt lines:
/// `1. Header: instruction`.
pub fn numbered_sections(entries: &[(&str, &str)]) -> String {
    entries
        .iter()
        .enumerate()
        .map(|(i, (header, instruction))| format!("{}. {header}: {instruction}", i + 1))
        .collect::<Vec<_>>()
        .join("\n")
}

/// Final-line instruction matching the task kind's answer syntax.
pub fn answer_format(kind: TaskKind) -> &'static str {
    match kind {
        TaskKind::MultipleChoice { .. } => {
            "End with a final line in the form \"Answer: (X)\", replacing X with the \
             letter of your chosen option."
        }
        TaskKind::BooleanYesNo => {
            "End with a final line that is exactly \"Answer: yes\" or \"Answer: no\"."
        }
        TaskKind::BooleanTrueFalse => {
            "End with a final line that is exactly \"Answer: True\" or \"Answer: False\"."
        }
    }
}

/// Verdict-line instruction used when the evaluator may not revise answers.
pub const VERDICT_FORMAT: &str =
    "End with a final line that is exactly \"Verdict: accept\" if the proposed answer \
     survives scrutiny, or \"Verdict: reject\" if it does not.";

/// The question as shown to every agent.
pub fn question_block(q: &Question) -> String {
    match q.kind {
        TaskKind::MultipleChoice { .. } => {
            let options = q
                .options
                .iter()
                .map(|(label, text)| format!("({label}) {text}"))
                .collect::<Vec<_>>()
                .join(" ");
            format!("Question: {}\nOptions: {options}", q.text)
        }
        TaskKind::BooleanYesNo => format!("Question: {}", q.text),
        TaskKind::BooleanTrueFalse => {
            format!("Statement: {}\nIs this statement True or False?", q.text)
        }
    }
}

/// How a label is written inside prose: `(C) king` for options, the bare
/// token for booleans.
pub fn render_label(q: &Question, label: AnswerLabel) -> String {
    match label {
        AnswerLabel::Letter(_) => match q.option_text(label) {
            Some(text) => format!("({label}) {text}"),
            None => format!("({label})"),
        },
        other => other.to_string(),
    }
}

/// A one-shot exemplar: an authored question plus per-strategy answers.
#[derive(Debug, Clone, Deserialize)]
pub struct Demo {
    pub question: Question,
    pub answers: BTreeMap<String, String>,
}

impl Demo {
    /// Demo completion for a strategy key (`reasoner`, `cot`, `base`,
    /// `l2m_decompose`).
    pub fn answer(&self, strategy: &str) -> Option<&str> {
        self.answers.get(strategy).map(String::as_str)
    }
}

macro_rules! demo_fn {
    ($fn_name:ident, $file:literal) => {
        fn $fn_name() -> &'static Demo {
            static DEMO: OnceLock<Demo> = OnceLock::new();
            DEMO.get_or_init(|| {
                serde_json::from_str(include_str!(concat!("../assets/demos/", $file)))
                    .expect(concat!("embedded demo ", $file, " is valid"))
            })
        }
    };
}

demo_fn!(scienceqa_demo, "scienceqa.json");
demo_fn!(com2sense_demo, "com2sense.json");
demo_fn!(boolq_demo, "boolq.json");

/// The one-shot demo for a dataset, if one ships with the crate.
pub fn demo(dataset: &str) -> Option<&'static Demo> {
    match dataset {
        "scienceqa" => Some(scienceqa_demo()),
        "com2sense" => Some(com2sense_demo()),
        "boolq" => Some(boolq_demo()),
        _ => None,
    }
}
