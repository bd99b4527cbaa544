//! Benchmark runs: configuration, the append-only JSONL run log, and
//! summary metrics. Reports live in [`report`], dataset downloads in
//! [`fetch`].
//!
//! # Run-log format
//!
//! A run log is JSON Lines. Line 1 is the header:
//!
//! * `format` — log schema version, currently `1`.
//! * `config` — the full [`RunConfig`], so the run can be reproduced from
//!   the log alone.
//! * `templates` — sha256 of every prompt template compiled into the
//!   binary, keyed by template id. Resuming with drifted templates is
//!   refused: mixed prompts would poison the log.
//!
//! Every following line is one [`RunRecord`]:
//!
//! * `id` — question id.
//! * `gold` — reference answer, if the dataset has one.
//! * `answer` — final answer; absent when the question errored.
//! * `correct` — `answer == gold`; absent without both.
//! * `rounds` — consensus rounds taken (`1` for single-pass strategies,
//!   `0` when the question errored).
//! * `termination` — why consensus stopped; consensus runs only.
//! * `meta` — dataset metadata (subject, grade, pair id) carried along so
//!   reports need nothing but the log.
//! * `calls` — one entry per successful model call: agent role, prompt and
//!   completion sha256, token counts, latency.
//! * `trace` — full consensus trace; consensus runs only.
//! * `error` — failure description when the question produced no answer.
//!
//! Records appear in dataset order regardless of worker scheduling, and the
//! log never contains wall-clock fields, so a run replayed from a warm
//! cache is byte-identical. Rerunning a config on an existing log skips
//! the recorded ids and appends only what is missing; a torn final line
//! (from a crash mid-write) is dropped and its question rerun.

pub mod fetch;
pub mod report;

use std::collections::{BTreeMap, HashSet, VecDeque};
use std::fmt;
use std::fs;
use std::io::{self, BufWriter, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::mpsc;

use serde::{Deserialize, Serialize};

use crate::backend::{
    AgentRole, AnthropicBackend, BackendError, CachedBackend, CallRecord, CompletionBackend,
    InstrumentedBackend, OpenAiBackend, SamplingParams, ScriptedBackend, TelemetrySink,
};
use crate::baselines::{run_strategy, BaselineConfig, Strategy};
use crate::consensus::{run_consensus_split, ConsensusConfig};
use crate::core::{AnswerLabel, ConsensusTrace, Question, Termination, Threshold};
use crate::datasets::{DatasetDescriptor, DatasetError};
use crate::evaluator::EvaluatorFlags;
use crate::reasoner::{ReasonerConfig, ReasonerFlags, ShotConfig};
use crate::templates::{self, Demo};

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error("cannot access {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error("{path} line {line}: malformed log line: {reason}")]
    Log { path: PathBuf, line: usize, reason: String },
    #[error("cannot resume {path}: {reason}")]
    ResumeMismatch { path: PathBuf, reason: String },
    #[error("report error: {0}")]
    Report(String),
    #[error("fetch {url} failed: {reason}")]
    Fetch { url: String, reason: String },
    #[error("checksum mismatch for {path}: expected {expected}, got {actual}")]
    Checksum { path: PathBuf, expected: String, actual: String },
    #[error("configuration error: {0}")]
    Config(String),
}

fn io_error(path: &Path) -> impl FnOnce(io::Error) -> HarnessError + '_ {
    move |source| HarnessError::Io { path: path.to_path_buf(), source }
}

/// Which completion transport a run talks to. The string form mirrors the
/// CLI flag: `openai`, `anthropic`, `scripted:<path>`, or `cached:<inner>`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum BackendChoice {
    OpenAi,
    Anthropic,
    /// Replay canned responses from a script file.
    Scripted(PathBuf),
    /// Disk cache in front of another choice.
    Cached(Box<BackendChoice>),
}

impl BackendChoice {
    /// Build the backend stack. `model` names the model requested from
    /// providers (and recorded by scripted backends); `cache_dir` is where
    /// a `cached:` layer keeps its entries.
    pub fn build(
        &self,
        model: &str,
        cache_dir: &Path,
    ) -> Result<Box<dyn CompletionBackend>, HarnessError> {
        let backend: Box<dyn CompletionBackend> = match self {
            BackendChoice::OpenAi => Box::new(OpenAiBackend::from_env(model)?),
            BackendChoice::Anthropic => Box::new(AnthropicBackend::from_env(model)?),
            BackendChoice::Scripted(path) => {
                Box::new(ScriptedBackend::from_file(path)?.with_model(model))
            }
            BackendChoice::Cached(inner) => {
                let inner = inner.build(model, cache_dir)?;
                Box::new(CachedBackend::new(inner, cache_dir).map_err(io_error(cache_dir))?)
            }
        };
        Ok(backend)
    }
}

impl fmt::Display for BackendChoice {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BackendChoice::OpenAi => f.write_str("openai"),
            BackendChoice::Anthropic => f.write_str("anthropic"),
            BackendChoice::Scripted(path) => write!(f, "scripted:{}", path.display()),
            BackendChoice::Cached(inner) => write!(f, "cached:{inner}"),
        }
    }
}

impl FromStr for BackendChoice {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "openai" => return Ok(BackendChoice::OpenAi),
            "anthropic" => return Ok(BackendChoice::Anthropic),
            _ => {}
        }
        if let Some(path) = s.strip_prefix("scripted:") {
            if path.is_empty() {
                return Err("scripted backend needs a file: scripted:<path>".into());
            }
            return Ok(BackendChoice::Scripted(PathBuf::from(path)));
        }
        if let Some(inner) = s.strip_prefix("cached:") {
            let inner: BackendChoice = inner.parse()?;
            if matches!(inner, BackendChoice::Cached(_)) {
                return Err("cached backend cannot wrap another cache".into());
            }
            return Ok(BackendChoice::Cached(Box::new(inner)));
        }
        Err(format!("unknown backend {s:?}: expected openai, anthropic, scripted:<path>, or cached:<inner>"))
    }
}

impl TryFrom<String> for BackendChoice {
    type Error = String;

    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

impl From<BackendChoice> for String {
    fn from(choice: BackendChoice) -> String {
        choice.to_string()
    }
}

/// A pipeline stage that can be switched off for ablation runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Ablation {
    /// Reasoners skip the explanation-of-terms section.
    TermExplanation,
    /// Evaluators skip the solution-evaluation section.
    SolutionEval,
    /// Evaluators skip counterfactual probing.
    Counterfactual,
    /// Evaluators skip re-reasoning and instead emit a verdict.
    Reconsideration,
}

impl Ablation {
    pub const ALL: [Ablation; 4] = [
        Ablation::TermExplanation,
        Ablation::SolutionEval,
        Ablation::Counterfactual,
        Ablation::Reconsideration,
    ];
}

impl fmt::Display for Ablation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Ablation::TermExplanation => "term_explanation",
            Ablation::SolutionEval => "solution_eval",
            Ablation::Counterfactual => "counterfactual",
            Ablation::Reconsideration => "reconsideration",
        };
        f.write_str(s)
    }
}

impl FromStr for Ablation {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_lowercase().replace('-', "_").as_str() {
            "term_explanation" => Ok(Ablation::TermExplanation),
            "solution_eval" => Ok(Ablation::SolutionEval),
            "counterfactual" => Ok(Ablation::Counterfactual),
            "reconsideration" => Ok(Ablation::Reconsideration),
            other => Err(format!("unknown ablation: {other}")),
        }
    }
}

fn default_cache_dir() -> PathBuf {
    PathBuf::from("cache")
}
fn default_reasoners() -> usize {
    2
}
fn default_evaluators() -> usize {
    1
}
fn default_topn() -> usize {
    2
}
fn default_d_max() -> u32 {
    3
}
fn default_sc_samples() -> usize {
    10
}
fn default_c_cot_top() -> usize {
    5
}
fn default_workers() -> usize {
    4
}

/// Everything one benchmark run depends on. Serialized into the log header
/// verbatim, so a log plus its cache reproduces the run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub dataset: DatasetDescriptor,
    pub strategy: Strategy,
    pub model: String,
    pub backend: BackendChoice,
    #[serde(default = "default_cache_dir")]
    pub cache_dir: PathBuf,
    /// JSONL log path; also the resume key.
    pub out: PathBuf,
    #[serde(default = "default_reasoners")]
    pub reasoners: usize,
    #[serde(default = "default_evaluators")]
    pub evaluators: usize,
    #[serde(default = "Threshold::half")]
    pub th0: Threshold,
    #[serde(default = "Threshold::half")]
    pub th1: Threshold,
    #[serde(default = "default_topn")]
    pub topn: usize,
    #[serde(default = "default_d_max")]
    pub d_max: u32,
    #[serde(default)]
    pub shot: ShotConfig,
    /// Overrides the built-in one-shot demo fixture.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub demo_path: Option<PathBuf>,
    #[serde(default)]
    pub params: SamplingParams,
    #[serde(default = "default_sc_samples")]
    pub sc_samples: usize,
    #[serde(default = "default_c_cot_top")]
    pub c_cot_top: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub limit: Option<usize>,
    #[serde(default)]
    pub offset: usize,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub ablate: Vec<Ablation>,
    #[serde(default = "default_workers")]
    pub workers: usize,
    /// When set, errored questions count against accuracy instead of being
    /// dropped from the denominator.
    #[serde(default)]
    pub strict: bool,
}

impl RunConfig {
    /// A config with standard settings; callers adjust fields directly.
    pub fn new(
        dataset: DatasetDescriptor,
        strategy: Strategy,
        model: impl Into<String>,
        backend: BackendChoice,
        out: impl Into<PathBuf>,
    ) -> Self {
        RunConfig {
            dataset,
            strategy,
            model: model.into(),
            backend,
            cache_dir: default_cache_dir(),
            out: out.into(),
            reasoners: default_reasoners(),
            evaluators: default_evaluators(),
            th0: Threshold::half(),
            th1: Threshold::half(),
            topn: default_topn(),
            d_max: default_d_max(),
            shot: ShotConfig::Zero,
            demo_path: None,
            params: SamplingParams::default(),
            sc_samples: default_sc_samples(),
            c_cot_top: default_c_cot_top(),
            seed: 0,
            limit: None,
            offset: 0,
            ablate: Vec::new(),
            workers: default_workers(),
            strict: false,
        }
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        if self.workers == 0 {
            return Err(HarnessError::Config("workers must be at least 1".into()));
        }
        if self.sc_samples == 0 {
            return Err(HarnessError::Config("sc_samples must be at least 1".into()));
        }
        match self.strategy {
            Strategy::Caco => {
                self.consensus_config()?;
            }
            _ => {
                self.baseline_config()?;
            }
        }
        Ok(())
    }

    /// Short human label for report rows.
    pub fn label(&self) -> String {
        let mut label = match self.strategy {
            Strategy::Caco => format!("caco R{}&E{}", self.reasoners, self.evaluators),
            Strategy::ScCot => format!("sc_cot k={}", self.sc_samples),
            Strategy::CCot => format!("c_cot k={} m={}", self.sc_samples, self.c_cot_top),
            other => other.to_string(),
        };
        label.push_str(match self.shot {
            ShotConfig::Zero => " zero-shot",
            ShotConfig::One => " one-shot",
        });
        if !self.ablate.is_empty() {
            let names: Vec<String> = self.ablate.iter().map(Ablation::to_string).collect();
            label.push_str(&format!(" -{}", names.join(" -")));
        }
        label
    }

    /// Apply `offset`/`limit` to a loaded question list.
    pub fn subset<'a>(&self, questions: &'a [Question]) -> &'a [Question] {
        let start = self.offset.min(questions.len());
        let rest = &questions[start..];
        match self.limit {
            Some(limit) => &rest[..limit.min(rest.len())],
            None => rest,
        }
    }

    fn resolve_demo(&self) -> Result<Option<Demo>, HarnessError> {
        if self.shot == ShotConfig::Zero {
            return Ok(None);
        }
        if let Some(path) = &self.demo_path {
            let raw = fs::read_to_string(path).map_err(io_error(path))?;
            let demo: Demo = serde_json::from_str(&raw).map_err(|e| {
                HarnessError::Config(format!("invalid demo fixture {}: {e}", path.display()))
            })?;
            return Ok(Some(demo));
        }
        templates::demo(&self.dataset.name.to_string()).cloned().map(Some).ok_or_else(|| {
            HarnessError::Config(format!(
                "no built-in one-shot demo for dataset {}; pass demo_path",
                self.dataset.name
            ))
        })
    }

    pub fn consensus_config(&self) -> Result<ConsensusConfig, HarnessError> {
        let config = ConsensusConfig {
            reasoner: ReasonerConfig {
                n_reasoners: self.reasoners,
                shot: self.shot,
                flags: ReasonerFlags {
                    term_explanation: !self.ablate.contains(&Ablation::TermExplanation),
                },
                params: self.params.clone(),
                demo: self.resolve_demo()?,
            },
            n_evaluators: self.evaluators,
            evaluator_flags: EvaluatorFlags {
                solution_evaluation: !self.ablate.contains(&Ablation::SolutionEval),
                counterfactual: !self.ablate.contains(&Ablation::Counterfactual),
                reconsideration: !self.ablate.contains(&Ablation::Reconsideration),
            },
            evaluator_params: self.params.clone(),
            th0: self.th0,
            th1: self.th1,
            topn: self.topn,
            d_max: self.d_max,
            seed: self.seed,
        };
        config.validate()?;
        Ok(config)
    }

    pub fn baseline_config(&self) -> Result<BaselineConfig, HarnessError> {
        Ok(BaselineConfig {
            shot: self.shot,
            params: self.params.clone(),
            sc_params: SamplingParams::self_consistency(),
            sc_samples: self.sc_samples,
            c_cot_top: self.c_cot_top,
            seed: self.seed,
            demo: self.resolve_demo()?,
        })
    }
}

pub const LOG_FORMAT_VERSION: u32 = 1;

/// First line of every run log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogHeader {
    pub format: u32,
    pub config: RunConfig,
    /// sha256 per compiled-in prompt template, for drift detection.
    pub templates: BTreeMap<String, String>,
}

impl LogHeader {
    fn new(config: &RunConfig) -> Self {
        LogHeader {
            format: LOG_FORMAT_VERSION,
            config: config.clone(),
            templates: templates::manifest()
                .into_iter()
                .map(|(id, sha)| (id.to_string(), sha))
                .collect(),
        }
    }
}

/// One question's outcome. See the module docs for the field-by-field
/// schema.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub id: String,
    pub gold: Option<AnswerLabel>,
    pub answer: Option<AnswerLabel>,
    pub correct: Option<bool>,
    pub rounds: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub termination: Option<Termination>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub meta: BTreeMap<String, String>,
    pub calls: Vec<CallRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trace: Option<ConsensusTrace>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// Run one question end to end, capturing telemetry. Failures become error
/// records rather than aborting the run.
fn run_question<B: CompletionBackend>(
    backend: &B,
    q: &Question,
    strategy: Strategy,
    consensus_config: Option<&ConsensusConfig>,
    baseline_config: Option<&BaselineConfig>,
) -> RunRecord {
    let sink = TelemetrySink::new();
    let outcome = match strategy {
        Strategy::Caco => {
            let config = consensus_config.expect("consensus config prepared for caco runs");
            let reasoner = InstrumentedBackend::new(backend, AgentRole::Reasoner, sink.clone());
            let evaluator = InstrumentedBackend::new(backend, AgentRole::Evaluator, sink.clone());
            run_consensus_split(&reasoner, &evaluator, q, config)
                .map(|trace| {
                    (trace.final_answer, trace.rounds.len() as u32, Some(trace.termination), Some(trace))
                })
                .map_err(|e| e.to_string())
        }
        other => {
            let config = baseline_config.expect("baseline config prepared for baseline runs");
            let instrumented = InstrumentedBackend::new(backend, AgentRole::Baseline, sink.clone());
            run_strategy(&instrumented, q, other, config)
                .map(|result| (result.answer, 1, None, None))
                .map_err(|e| e.to_string())
        }
    };
    let calls = sink.take();
    match outcome {
        Ok((answer, rounds, termination, trace)) => RunRecord {
            id: q.id.clone(),
            gold: q.gold,
            answer: Some(answer),
            correct: q.gold.map(|gold| answer == gold),
            rounds,
            termination,
            meta: q.meta.clone(),
            calls,
            trace,
            error: None,
        },
        Err(error) => {
            log::warn!("question {} failed: {error}", q.id);
            RunRecord {
                id: q.id.clone(),
                gold: q.gold,
                answer: None,
                correct: None,
                rounds: 0,
                termination: None,
                meta: q.meta.clone(),
                calls,
                trace: None,
                error: Some(error),
            }
        }
    }
}

/// Open (or create) the run log, returning a writer positioned for append
/// and the ids already recorded. A complete, matching header is required to
/// resume; a torn final line is truncated away.
fn open_log(config: &RunConfig) -> Result<(BufWriter<fs::File>, HashSet<String>), HarnessError> {
    let path = &config.out;
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent).map_err(io_error(path))?;
        }
    }
    let existing = match fs::read_to_string(path) {
        Ok(contents) => contents,
        Err(e) if e.kind() == io::ErrorKind::NotFound => String::new(),
        Err(e) => return Err(io_error(path)(e)),
    };

    let expected_header = LogHeader::new(config);
    let mut done = HashSet::new();
    let mut keep_bytes = 0u64;

    if !existing.is_empty() {
        for (index, chunk) in existing.split_inclusive('\n').enumerate() {
            let complete = chunk.ends_with('\n');
            let line = chunk.trim_end_matches('\n');
            if !complete {
                // Crash artifact: drop the torn tail and rerun its question.
                log::warn!("{}: dropping torn final line", path.display());
                break;
            }
            if index == 0 {
                let header: LogHeader = serde_json::from_str(line).map_err(|e| {
                    HarnessError::Log { path: path.clone(), line: 1, reason: e.to_string() }
                })?;
                if header.config != expected_header.config {
                    return Err(HarnessError::ResumeMismatch {
                        path: path.clone(),
                        reason: "log was produced by a different run configuration".into(),
                    });
                }
                if header.templates != expected_header.templates {
                    return Err(HarnessError::ResumeMismatch {
                        path: path.clone(),
                        reason: "prompt templates changed since the log was started".into(),
                    });
                }
            } else {
                let record: RunRecord = serde_json::from_str(line).map_err(|e| {
                    HarnessError::Log { path: path.clone(), line: index + 1, reason: e.to_string() }
                })?;
                done.insert(record.id);
            }
            keep_bytes += chunk.len() as u64;
        }
    }

    let mut file = fs::OpenOptions::new()
        .create(true)
        .write(true)
        .read(true)
        .open(path)
        .map_err(io_error(path))?;
    file.set_len(keep_bytes).map_err(io_error(path))?;
    file.seek(SeekFrom::End(0)).map_err(io_error(path))?;
    let mut writer = BufWriter::new(file);
    if keep_bytes == 0 {
        let line =
            serde_json::to_string(&expected_header).expect("header serialization is infallible");
        writer.write_all(line.as_bytes()).map_err(io_error(path))?;
        writer.write_all(b"\n").map_err(io_error(path))?;
        writer.flush().map_err(io_error(path))?;
    }
    Ok((writer, done))
}

fn write_record(
    writer: &mut BufWriter<fs::File>,
    path: &Path,
    record: &RunRecord,
) -> Result<(), HarnessError> {
    let line = serde_json::to_string(record).expect("record serialization is infallible");
    writer.write_all(line.as_bytes()).map_err(io_error(path))?;
    writer.write_all(b"\n").map_err(io_error(path))?;
    // Flush per record so a crash loses at most the line being written.
    writer.flush().map_err(io_error(path))?;
    Ok(())
}

/// Run every configured question against `backend`, append records to the
/// log, and return the summary recomputed from the sealed log.
///
/// `questions` is the full dataset; `config.offset`/`config.limit` select
/// the slice to run. Questions already present in the log are skipped.
pub fn run_benchmark<B: CompletionBackend>(
    backend: &B,
    questions: &[Question],
    config: &RunConfig,
) -> Result<RunSummary, HarnessError> {
    config.validate()?;
    let consensus_config =
        if config.strategy == Strategy::Caco { Some(config.consensus_config()?) } else { None };
    let baseline_config =
        if config.strategy == Strategy::Caco { None } else { Some(config.baseline_config()?) };

    let subset = config.subset(questions);
    let (mut writer, done) = open_log(config)?;
    let pending: Vec<(usize, &Question)> =
        subset.iter().enumerate().filter(|(_, q)| !done.contains(q.id.as_str())).collect();

    if !pending.is_empty() {
        let workers = config.workers.min(pending.len());
        let next = AtomicUsize::new(0);
        std::thread::scope(|scope| -> Result<(), HarnessError> {
            let (tx, rx) = mpsc::channel::<(usize, RunRecord)>();
            for _ in 0..workers {
                let tx = tx.clone();
                let pending = &pending;
                let next = &next;
                let consensus_config = consensus_config.as_ref();
                let baseline_config = baseline_config.as_ref();
                scope.spawn(move || loop {
                    let i = next.fetch_add(1, Ordering::SeqCst);
                    let Some(&(position, question)) = pending.get(i) else { break };
                    let record = run_question(
                        backend,
                        question,
                        config.strategy,
                        consensus_config,
                        baseline_config,
                    );
                    if tx.send((position, record)).is_err() {
                        break;
                    }
                });
            }
            drop(tx);

            // Workers finish out of order; buffer and write in dataset order.
            let mut expected: VecDeque<usize> = pending.iter().map(|(pos, _)| *pos).collect();
            let mut ready: BTreeMap<usize, RunRecord> = BTreeMap::new();
            while let Ok((position, record)) = rx.recv() {
                ready.insert(position, record);
                while let Some(&front) = expected.front() {
                    match ready.remove(&front) {
                        Some(record) => {
                            write_record(&mut writer, &config.out, &record)?;
                            expected.pop_front();
                        }
                        None => break,
                    }
                }
            }
            debug_assert!(expected.is_empty() && ready.is_empty());
            Ok(())
        })?;
    }
    drop(writer);

    let (_, summary) = summarize_log(&config.out)?;
    Ok(summary)
}

/// Parse a sealed log. Unlike resume, every line must be complete.
pub fn read_log(path: &Path) -> Result<(LogHeader, Vec<RunRecord>), HarnessError> {
    let contents = fs::read_to_string(path).map_err(io_error(path))?;
    let mut lines = contents.lines().enumerate();
    let (_, first) = lines.next().ok_or_else(|| HarnessError::Log {
        path: path.to_path_buf(),
        line: 1,
        reason: "empty file".into(),
    })?;
    let header: LogHeader = serde_json::from_str(first).map_err(|e| HarnessError::Log {
        path: path.to_path_buf(),
        line: 1,
        reason: e.to_string(),
    })?;
    let mut records = Vec::new();
    for (index, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let record: RunRecord = serde_json::from_str(line).map_err(|e| HarnessError::Log {
            path: path.to_path_buf(),
            line: index + 1,
            reason: e.to_string(),
        })?;
        records.push(record);
    }
    Ok((header, records))
}

/// Accuracy within one metadata category.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub struct CategoryAccuracy {
    pub correct: usize,
    pub total: usize,
}

impl CategoryAccuracy {
    pub fn accuracy(&self) -> f64 {
        if self.total == 0 {
            0.0
        } else {
            self.correct as f64 / self.total as f64
        }
    }
}

/// Metrics computed from a run log.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunSummary {
    /// Human label of the producing config.
    pub label: String,
    /// Records in the log, errored ones included.
    pub total_records: usize,
    pub errors: usize,
    /// Records in the accuracy denominator.
    pub graded: usize,
    pub correct: usize,
    /// Micro accuracy: `correct / graded`.
    pub accuracy: f64,
    /// Mean of the per-subject accuracies, when subjects are present.
    pub macro_accuracy: Option<f64>,
    pub by_subject: BTreeMap<String, CategoryAccuracy>,
    pub by_grade: BTreeMap<String, CategoryAccuracy>,
    /// Count of questions per number of rounds taken.
    pub rounds: BTreeMap<u32, usize>,
    pub total_calls: usize,
    /// Mean model invocations per question, errored questions included.
    pub mean_calls: f64,
}

/// Compute metrics over records. `strict` puts errored questions in the
/// accuracy denominator (as incorrect) instead of dropping them.
pub fn summarize_records(label: impl Into<String>, strict: bool, records: &[RunRecord]) -> RunSummary {
    let mut summary = RunSummary {
        label: label.into(),
        total_records: 0,
        errors: 0,
        graded: 0,
        correct: 0,
        accuracy: 0.0,
        macro_accuracy: None,
        by_subject: BTreeMap::new(),
        by_grade: BTreeMap::new(),
        rounds: BTreeMap::new(),
        total_calls: 0,
        mean_calls: 0.0,
    };
    for record in records {
        summary.total_records += 1;
        summary.total_calls += record.calls.len();
        if record.error.is_some() {
            summary.errors += 1;
        }
        if record.rounds > 0 {
            *summary.rounds.entry(record.rounds).or_insert(0) += 1;
        }
        let graded = if record.error.is_some() { strict } else { record.correct.is_some() };
        if !graded {
            continue;
        }
        let correct = record.correct == Some(true);
        summary.graded += 1;
        if correct {
            summary.correct += 1;
        }
        for (key, map) in
            [("subject", &mut summary.by_subject), ("grade", &mut summary.by_grade)]
        {
            if let Some(value) = record.meta.get(key) {
                let entry = map.entry(value.clone()).or_default();
                entry.total += 1;
                if correct {
                    entry.correct += 1;
                }
            }
        }
    }
    if summary.graded > 0 {
        summary.accuracy = summary.correct as f64 / summary.graded as f64;
    }
    if !summary.by_subject.is_empty() {
        let sum: f64 = summary.by_subject.values().map(CategoryAccuracy::accuracy).sum();
        summary.macro_accuracy = Some(sum / summary.by_subject.len() as f64);
    }
    if summary.total_records > 0 {
        summary.mean_calls = summary.total_calls as f64 / summary.total_records as f64;
    }
    summary
}

/// Read a sealed log and compute its summary. [`run_benchmark`] returns
/// exactly this, so a summary can always be regenerated from the log alone.
pub fn summarize_log(path: &Path) -> Result<(LogHeader, RunSummary), HarnessError> {
    let (header, records) = read_log(path)?;
    let summary = summarize_records(header.config.label(), header.config.strict, &records);
    Ok((header, summary))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::Script;
    use crate::core::TaskKind;
    use crate::datasets::DatasetName;
    use std::path::Path;

    fn descriptor(dir: &Path) -> DatasetDescriptor {
        DatasetDescriptor {
            name: DatasetName::Scienceqa,
            path: dir.join("problems.json"),
            split: "test".into(),
            expected_count: None,
        }
    }

    fn question(id: &str, text: &str, gold: usize) -> Question {
        Question::multiple_choice(
            id,
            text,
            vec!["red".into(), "blue".into(), "green".into()],
            Some(gold),
        )
        .unwrap()
        .with_meta("subject", if gold == 0 { "NAT" } else { "SOC" })
        .with_meta("grade", "G1-6")
    }

    fn config(dir: &Path, strategy: Strategy, out: &str) -> RunConfig {
        let mut config = RunConfig::new(
            descriptor(dir),
            strategy,
            "test-model",
            BackendChoice::Scripted(dir.join("script.json")),
            dir.join(out),
        );
        config.workers = 2;
        config
    }

    /// Answer each question by matching its text in the prompt.
    fn per_question_script() -> ScriptedBackend {
        ScriptedBackend::new(Script::Patterns(vec![
            (vec!["first color".into()], "Answer: (A)".into()),
            (vec!["second color".into()], "Answer: (B)".into()),
            (vec!["third color".into()], "Answer: (A)".into()),
        ]))
    }

    fn three_questions() -> Vec<Question> {
        vec![
            question("q1", "first color", 0),
            question("q2", "second color", 1),
            question("q3", "third color", 2), // script answers A: wrong
        ]
    }

    #[test]
    fn backend_choice_round_trips() {
        for raw in ["openai", "anthropic", "scripted:/tmp/s.json", "cached:openai", "cached:scripted:s.json"] {
            let choice: BackendChoice = raw.parse().unwrap();
            assert_eq!(choice.to_string(), raw);
            let json = serde_json::to_string(&choice).unwrap();
            assert_eq!(serde_json::from_str::<BackendChoice>(&json).unwrap(), choice);
        }
        assert!("cached:cached:openai".parse::<BackendChoice>().is_err());
        assert!("scripted:".parse::<BackendChoice>().is_err());
        assert!("webdav".parse::<BackendChoice>().is_err());
    }

    #[test]
    fn ablation_tokens_round_trip() {
        for ablation in Ablation::ALL {
            assert_eq!(ablation.to_string().parse::<Ablation>().unwrap(), ablation);
        }
        assert_eq!("solution-eval".parse::<Ablation>().unwrap(), Ablation::SolutionEval);
        assert!("verbosity".parse::<Ablation>().is_err());
    }

    #[test]
    fn three_question_run_counts_two_of_three() {
        let dir = tempfile::tempdir().unwrap();
        let config = config(dir.path(), Strategy::Cot, "run.jsonl");
        let backend = per_question_script();
        let summary = run_benchmark(&backend, &three_questions(), &config).unwrap();
        assert_eq!(summary.total_records, 3);
        assert_eq!(summary.graded, 3);
        assert_eq!(summary.correct, 2);
        assert!((summary.accuracy - 2.0 / 3.0).abs() < 1e-12);
        assert_eq!(summary.rounds, BTreeMap::from([(1, 3)]));
        assert_eq!(summary.total_calls, 3, "cot is one call per question");
        assert_eq!(summary.by_subject["NAT"], CategoryAccuracy { correct: 1, total: 1 });
        assert_eq!(summary.by_subject["SOC"], CategoryAccuracy { correct: 1, total: 2 });
    }

    #[test]
    fn records_keep_dataset_order_under_parallel_workers() {
        let dir = tempfile::tempdir().unwrap();
        let mut config = config(dir.path(), Strategy::Cot, "run.jsonl");
        config.workers = 4;
        let backend = per_question_script();
        run_benchmark(&backend, &three_questions(), &config).unwrap();
        let (_, records) = read_log(&config.out).unwrap();
        let ids: Vec<&str> = records.iter().map(|r| r.id.as_str()).collect();
        assert_eq!(ids, ["q1", "q2", "q3"]);
    }

    #[test]
    fn resume_appends_only_missing_questions() {
        let dir = tempfile::tempdir().unwrap();
        let config = config(dir.path(), Strategy::Cot, "full.jsonl");
        let questions = three_questions();
        run_benchmark(&per_question_script(), &questions, &config).unwrap();
        let full = fs::read_to_string(&config.out).unwrap();

        // Simulate a crash after two questions: keep header + 2 records.
        let partial: String = full.split_inclusive('\n').take(3).collect();
        fs::write(&config.out, &partial).unwrap();

        // The resumed run only runs q3: a script with only q3's pattern
        // proves q1/q2 are never re-asked.
        let q3_only = ScriptedBackend::new(Script::Patterns(vec![(
            vec!["third color".into()],
            "Answer: (A)".into(),
        )]));
        run_benchmark(&q3_only, &questions, &config).unwrap();
        let resumed = fs::read_to_string(&config.out).unwrap();
        assert_eq!(resumed, full, "resume completes the log byte-for-byte");
    }

    #[test]
    fn torn_final_line_is_dropped_and_rerun() {
        let dir = tempfile::tempdir().unwrap();
        let config = config(dir.path(), Strategy::Cot, "torn.jsonl");
        let questions = three_questions();
        run_benchmark(&per_question_script(), &questions, &config).unwrap();
        let full = fs::read_to_string(&config.out).unwrap();

        // Cut the last record in half, newline gone.
        let keep = full.len() - 20;
        fs::write(&config.out, &full[..keep]).unwrap();
        run_benchmark(&per_question_script(), &questions, &config).unwrap();
        assert_eq!(fs::read_to_string(&config.out).unwrap(), full);
    }

    #[test]
    fn resume_with_different_config_is_refused() {
        let dir = tempfile::tempdir().unwrap();
        let config = config(dir.path(), Strategy::Cot, "run.jsonl");
        run_benchmark(&per_question_script(), &three_questions(), &config).unwrap();
        let changed = RunConfig { seed: 7, ..config };
        let err = run_benchmark(&per_question_script(), &three_questions(), &changed).unwrap_err();
        assert!(matches!(err, HarnessError::ResumeMismatch { .. }), "{err}");
    }

    #[test]
    fn caco_run_with_agreeing_script_concentrates_on_round_one() {
        let dir = tempfile::tempdir().unwrap();
        let config = config(dir.path(), Strategy::Caco, "caco.jsonl");
        let backend = ScriptedBackend::new(Script::Patterns(vec![
            (vec!["reasoner agent".into()], "Answer: (A)".into()),
            (vec!["causal evaluator".into()], "3. Re-reasoning: Answer: (A)".into()),
        ]));
        let summary = run_benchmark(&backend, &three_questions(), &config).unwrap();
        assert_eq!(summary.rounds, BTreeMap::from([(1, 3)]), "always-agree → all round 1");
        assert_eq!(summary.total_calls, 9, "R2&E1 agreement is 3 calls per question");
        assert!((summary.mean_calls - 3.0).abs() < 1e-12);

        let (_, records) = read_log(&config.out).unwrap();
        let record = &records[0];
        assert_eq!(record.termination, Some(Termination::EvaluatorAgreement));
        assert_eq!(record.rounds, 1);
        let trace = record.trace.as_ref().unwrap();
        assert_eq!(trace.final_answer, AnswerLabel::Letter('A'));
        let roles: Vec<AgentRole> = record.calls.iter().map(|c| c.role).collect();
        assert_eq!(roles, [AgentRole::Reasoner, AgentRole::Reasoner, AgentRole::Evaluator]);
    }

    #[test]
    fn errored_questions_leave_the_denominator_unless_strict() {
        let dir = tempfile::tempdir().unwrap();
        let mut config = config(dir.path(), Strategy::Cot, "err.jsonl");
        config.workers = 1;
        // Queue covers q1/q2 then runs dry: q3 errors.
        let backend = ScriptedBackend::queue(["Answer: (A)", "Answer: (B)"]);
        let summary = run_benchmark(&backend, &three_questions(), &config).unwrap();
        assert_eq!(summary.errors, 1);
        assert_eq!(summary.graded, 2);
        assert_eq!(summary.correct, 2);
        assert!((summary.accuracy - 1.0).abs() < 1e-12);

        let (_, records) = read_log(&config.out).unwrap();
        assert_eq!(records[2].answer, None);
        assert!(records[2].error.as_deref().unwrap().contains("script exhausted"));
        assert_eq!(records[2].rounds, 0);

        let strict = summarize_records("strict", true, &records);
        assert_eq!(strict.graded, 3);
        assert!((strict.accuracy - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn summary_recomputes_from_sealed_log() {
        let dir = tempfile::tempdir().unwrap();
        let config = config(dir.path(), Strategy::Cot, "run.jsonl");
        let emitted = run_benchmark(&per_question_script(), &three_questions(), &config).unwrap();
        let (header, recomputed) = summarize_log(&config.out).unwrap();
        assert_eq!(emitted, recomputed);
        assert_eq!(header.config, config);
        assert_eq!(header.format, LOG_FORMAT_VERSION);
        assert!(!header.templates.is_empty());
    }

    #[test]
    fn subset_applies_offset_then_limit() {
        let dir = tempfile::tempdir().unwrap();
        let mut config = config(dir.path(), Strategy::Cot, "run.jsonl");
        let questions = three_questions();
        config.offset = 1;
        config.limit = Some(1);
        let subset = config.subset(&questions);
        assert_eq!(subset.len(), 1);
        assert_eq!(subset[0].id, "q2");
        config.offset = 5;
        assert!(config.subset(&questions).is_empty());
    }

    #[test]
    fn labels_name_the_configuration() {
        let dir = tempfile::tempdir().unwrap();
        let mut caco = config(dir.path(), Strategy::Caco, "a.jsonl");
        caco.reasoners = 3;
        caco.ablate = vec![Ablation::Counterfactual];
        assert_eq!(caco.label(), "caco R3&E1 zero-shot -counterfactual");
        let mut sc = config(dir.path(), Strategy::ScCot, "b.jsonl");
        sc.shot = ShotConfig::One;
        assert_eq!(sc.label(), "sc_cot k=10 one-shot");
    }

    #[test]
    fn ablating_every_evaluator_stage_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let mut config = config(dir.path(), Strategy::Caco, "run.jsonl");
        config.ablate =
            vec![Ablation::SolutionEval, Ablation::Counterfactual, Ablation::Reconsideration];
        let err = config.validate().unwrap_err();
        assert!(matches!(err, HarnessError::Backend(BackendError::Config(_))), "{err}");
    }

    #[test]
    fn one_shot_boolean_run_uses_builtin_demo() {
        let dir = tempfile::tempdir().unwrap();
        let mut config = config(dir.path(), Strategy::Cot, "bool.jsonl");
        config.dataset.name = DatasetName::Boolq;
        config.shot = ShotConfig::One;
        config.workers = 1;
        let q = Question::boolean("b1", "is four even?", TaskKind::BooleanYesNo, Some(AnswerLabel::Yes))
            .unwrap();
        // The demo's worked answer must precede the real question.
        let backend = ScriptedBackend::new(Script::Patterns(vec![(
            vec!["is four even?".into(), "water".into()],
            "Answer: yes".into(),
        )]));
        let summary = run_benchmark(&backend, &[q], &config).unwrap();
        assert_eq!(summary.correct, 1);
    }

    #[test]
    fn run_config_survives_serialization() {
        let dir = tempfile::tempdir().unwrap();
        let mut config = config(dir.path(), Strategy::Caco, "run.jsonl");
        config.th0 = Threshold::new(2, 3).unwrap();
        config.ablate = vec![Ablation::TermExplanation];
        config.limit = Some(50);
        let json = serde_json::to_string(&config).unwrap();
        let back: RunConfig = serde_json::from_str(&json).unwrap();
        assert_eq!(back, config);
    }
}
