//! Benchmark dataset loaders.
//!
//! Each loader normalizes a published file into [`Question`] values in
//! source order, with no text rewriting beyond whitespace trimming and the
//! documented `?` suffix rule. A [`DatasetDescriptor`] adds an expected
//! count that fails hard on mismatch, guarding against silent filter bugs.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde_json::Value;

use crate::core::{AnswerLabel, Question, QuestionError, TaskKind};

#[derive(Debug, thiserror::Error)]
pub enum DatasetError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("cannot parse {path}: {reason}")]
    Parse { path: PathBuf, reason: String },
    #[error("record {id}: {reason}")]
    Record { id: String, reason: String },
    #[error("{name} loaded {actual} questions, expected {expected}")]
    CountMismatch { name: DatasetName, expected: usize, actual: usize },
    #[error(transparent)]
    Question(#[from] QuestionError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetName {
    Scienceqa,
    Com2sense,
    Boolq,
}

impl DatasetName {
    pub const ALL: [DatasetName; 3] =
        [DatasetName::Scienceqa, DatasetName::Com2sense, DatasetName::Boolq];
}

impl fmt::Display for DatasetName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            DatasetName::Scienceqa => "scienceqa",
            DatasetName::Com2sense => "com2sense",
            DatasetName::Boolq => "boolq",
        };
        f.write_str(s)
    }
}

impl FromStr for DatasetName {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_lowercase().as_str() {
            "scienceqa" => Ok(DatasetName::Scienceqa),
            "com2sense" => Ok(DatasetName::Com2sense),
            "boolq" => Ok(DatasetName::Boolq),
            other => Err(format!("unknown dataset: {other}")),
        }
    }
}

/// Where a dataset lives and what loading it must yield.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct DatasetDescriptor {
    pub name: DatasetName,
    pub path: PathBuf,
    pub split: String,
    /// Loading a different number of questions is a hard error.
    pub expected_count: Option<usize>,
}

/// Text-only ScienceQA test split size.
pub const SCIENCEQA_TEST_COUNT: usize = 2224;
/// Published BoolQ dev size.
pub const BOOLQ_DEV_COUNT: usize = 3270;

impl DatasetDescriptor {
    /// The standard layout under a data directory, with published counts
    /// pinned where the split size is fixed.
    pub fn standard(name: DatasetName, data_dir: &Path) -> Self {
        match name {
            DatasetName::Scienceqa => DatasetDescriptor {
                name,
                path: data_dir.join("scienceqa").join("problems.json"),
                split: "test".into(),
                expected_count: Some(SCIENCEQA_TEST_COUNT),
            },
            DatasetName::Com2sense => DatasetDescriptor {
                name,
                path: data_dir.join("com2sense").join("dev.json"),
                split: "dev".into(),
                expected_count: None,
            },
            DatasetName::Boolq => DatasetDescriptor {
                name,
                path: data_dir.join("boolq").join("dev.jsonl"),
                split: "dev".into(),
                expected_count: Some(BOOLQ_DEV_COUNT),
            },
        }
    }

    pub fn load(&self) -> Result<Vec<Question>, DatasetError> {
        let questions = match self.name {
            DatasetName::Scienceqa => load_scienceqa(&self.path, &self.split)?,
            DatasetName::Com2sense => load_com2sense(&self.path)?,
            DatasetName::Boolq => load_boolq(&self.path)?,
        };
        if let Some(expected) = self.expected_count {
            if questions.len() != expected {
                return Err(DatasetError::CountMismatch {
                    name: self.name,
                    expected,
                    actual: questions.len(),
                });
            }
        }
        Ok(questions)
    }
}

fn read(path: &Path) -> Result<String, DatasetError> {
    std::fs::read_to_string(path).map_err(|source| DatasetError::Io { path: path.into(), source })
}

fn parse_json(path: &Path, raw: &str) -> Result<Value, DatasetError> {
    serde_json::from_str(raw)
        .map_err(|e| DatasetError::Parse { path: path.into(), reason: e.to_string() })
}

fn field<'a>(record: &'a Value, id: &str, name: &str) -> Result<&'a Value, DatasetError> {
    record.get(name).ok_or_else(|| DatasetError::Record {
        id: id.into(),
        reason: format!("missing field {name:?}"),
    })
}

fn str_field(record: &Value, id: &str, name: &str) -> Result<String, DatasetError> {
    field(record, id, name)?
        .as_str()
        .map(str::to_string)
        .ok_or_else(|| DatasetError::Record {
            id: id.into(),
            reason: format!("field {name:?} is not a string"),
        })
}

/// Load ScienceQA from the published `problems.json` (a map of id →
/// record), keeping text-only records of the requested split: the record
/// must carry no image. Options keep file order; the gold label is the
/// letter at the record's answer index. `meta.subject` is mapped to
/// NAT/SOC/LAN and `meta.grade` to G1-6 / G7-12.
pub fn load_scienceqa(path: &Path, split: &str) -> Result<Vec<Question>, DatasetError> {
    let root = parse_json(path, &read(path)?)?;
    let map = root.as_object().ok_or_else(|| DatasetError::Parse {
        path: path.into(),
        reason: "expected a top-level object of id → record".into(),
    })?;
    let mut questions = Vec::new();
    for (id, record) in map {
        if str_field(record, id, "split")? != split {
            continue;
        }
        match record.get("image") {
            None | Some(Value::Null) => {}
            Some(_) => continue,
        }
        let text = str_field(record, id, "question")?;
        let choices: Vec<String> = field(record, id, "choices")?
            .as_array()
            .ok_or_else(|| DatasetError::Record {
                id: id.clone(),
                reason: "field \"choices\" is not an array".into(),
            })?
            .iter()
            .map(|c| {
                c.as_str().map(str::to_string).ok_or_else(|| DatasetError::Record {
                    id: id.clone(),
                    reason: "non-string choice".into(),
                })
            })
            .collect::<Result<_, _>>()?;
        let answer = field(record, id, "answer")?.as_u64().ok_or_else(|| {
            DatasetError::Record { id: id.clone(), reason: "field \"answer\" is not an index".into() }
        })? as usize;
        let subject = match str_field(record, id, "subject")?.as_str() {
            "natural science" => "NAT",
            "social science" => "SOC",
            "language science" => "LAN",
            other => {
                return Err(DatasetError::Record {
                    id: id.clone(),
                    reason: format!("unknown subject {other:?}"),
                })
            }
        };
        let grade_raw = str_field(record, id, "grade")?;
        let grade_num: u32 = grade_raw
            .strip_prefix("grade")
            .and_then(|n| n.parse().ok())
            .ok_or_else(|| DatasetError::Record {
                id: id.clone(),
                reason: format!("unparseable grade {grade_raw:?}"),
            })?;
        let grade = match grade_num {
            1..=6 => "G1-6",
            7..=12 => "G7-12",
            other => {
                return Err(DatasetError::Record {
                    id: id.clone(),
                    reason: format!("grade {other} out of range"),
                })
            }
        };
        let question = Question::multiple_choice(id, text.trim(), choices, Some(answer))?
            .with_meta("subject", subject)
            .with_meta("grade", grade);
        questions.push(question);
    }
    Ok(questions)
}

/// Load Com2Sense from the published dev JSON (an array of statements with
/// True/False labels). Statements stay independent questions; the pair id
/// lands in `meta.pair_id` for pairwise accuracy.
pub fn load_com2sense(path: &Path) -> Result<Vec<Question>, DatasetError> {
    let root = parse_json(path, &read(path)?)?;
    let records = root.as_array().ok_or_else(|| DatasetError::Parse {
        path: path.into(),
        reason: "expected a top-level array of records".into(),
    })?;
    let mut questions = Vec::new();
    for (i, record) in records.iter().enumerate() {
        let id = record
            .get("id")
            .and_then(Value::as_str)
            .map(str::to_string)
            .unwrap_or_else(|| format!("com2sense-{}", i + 1));
        let text = ["sent", "sentence", "statement"]
            .iter()
            .find_map(|k| record.get(*k).and_then(Value::as_str))
            .ok_or_else(|| DatasetError::Record {
                id: id.clone(),
                reason: "missing statement text".into(),
            })?;
        let gold = match str_field(record, &id, "label")?.as_str() {
            "True" => AnswerLabel::True,
            "False" => AnswerLabel::False,
            other => {
                return Err(DatasetError::Record {
                    id,
                    reason: format!("label {other:?} is not True/False"),
                })
            }
        };
        let mut question =
            Question::boolean(id, text.trim(), TaskKind::BooleanTrueFalse, Some(gold))?;
        if let Some(pair) = record.get("pair_id").and_then(Value::as_str) {
            question = question.with_meta("pair_id", pair);
        }
        questions.push(question);
    }
    Ok(questions)
}

/// Load BoolQ from the published dev JSONL. The passage is discarded here,
/// at load time, so no later code path can leak open-book context. Question
/// text gains a `?` suffix when missing; gold maps true → yes, false → no.
pub fn load_boolq(path: &Path) -> Result<Vec<Question>, DatasetError> {
    let raw = read(path)?;
    let mut questions = Vec::new();
    for (i, line) in raw.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let id = format!("boolq-{}", i + 1);
        let record: Value = serde_json::from_str(line).map_err(|e| DatasetError::Parse {
            path: path.into(),
            reason: format!("line {}: {e}", i + 1),
        })?;
        let mut text = str_field(&record, &id, "question")?.trim().to_string();
        if !text.ends_with('?') {
            text.push('?');
        }
        let answer = field(&record, &id, "answer")?.as_bool().ok_or_else(|| {
            DatasetError::Record { id: id.clone(), reason: "field \"answer\" is not a boolean".into() }
        })?;
        let gold = if answer { AnswerLabel::Yes } else { AnswerLabel::No };
        questions.push(Question::boolean(id, text, TaskKind::BooleanYesNo, Some(gold))?);
    }
    Ok(questions)
}
