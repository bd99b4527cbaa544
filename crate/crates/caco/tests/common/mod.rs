//! Helpers shared across integration tests: loading the hand-labeled
//! transcript corpus under `tests/fixtures/transcripts/`.
//!
//! Each corpus case pairs one question with several reconstructed agent
//! transcripts and the answer label each transcript is expected to yield.
//! The expectations were assigned by hand from the transcript text alone,
//! so they stand independently of the extraction code under test.

use std::path::{Path, PathBuf};

use caco::core::{AnswerLabel, Question, TaskKind};
use serde::Deserialize;

#[derive(Debug, Deserialize)]
pub struct Corpus {
    pub cases: Vec<Case>,
}

#[derive(Debug, Deserialize)]
pub struct Case {
    pub name: String,
    pub question: QuestionSpec,
    pub transcripts: Vec<TranscriptSpec>,
}

#[derive(Debug, Deserialize)]
pub struct QuestionSpec {
    pub kind: String,
    pub text: String,
    #[serde(default)]
    pub options: Vec<String>,
    pub gold: AnswerLabel,
}

#[derive(Debug, Deserialize)]
pub struct TranscriptSpec {
    pub file: String,
    pub role: String,
    pub expect: AnswerLabel,
}

pub fn corpus_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/transcripts")
}

pub fn load_corpus() -> Corpus {
    let path = corpus_dir().join("expectations.json");
    let text = std::fs::read_to_string(&path)
        .unwrap_or_else(|e| panic!("reading {}: {e}", path.display()));
    serde_json::from_str(&text).unwrap_or_else(|e| panic!("parsing {}: {e}", path.display()))
}

impl Case {
    pub fn question(&self) -> Question {
        let id = format!("fixture-{}", self.name);
        match self.question.kind.as_str() {
            "multiple_choice" => {
                let gold = match self.question.gold {
                    AnswerLabel::Letter(c) => Some((c as u8 - b'A') as usize),
                    other => panic!("case {}: gold {other} is not an option letter", self.name),
                };
                Question::multiple_choice(
                    id,
                    &self.question.text,
                    self.question.options.clone(),
                    gold,
                )
            }
            "yes_no" => Question::boolean(
                id,
                &self.question.text,
                TaskKind::BooleanYesNo,
                Some(self.question.gold),
            ),
            "true_false" => Question::boolean(
                id,
                &self.question.text,
                TaskKind::BooleanTrueFalse,
                Some(self.question.gold),
            ),
            other => panic!("case {}: unknown question kind {other:?}", self.name),
        }
        .expect("corpus question is well formed")
    }

    pub fn read_transcript(&self, spec: &TranscriptSpec) -> String {
        let path = corpus_dir().join(&spec.file);
        std::fs::read_to_string(&path)
            .unwrap_or_else(|e| panic!("reading {}: {e}", path.display()))
    }
}
