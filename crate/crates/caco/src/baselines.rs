//! Single-agent prompting strategies the consensus protocol is compared
//! against. All of them share [`extract_answer`] with the agent modules, so
//! differences in accuracy are differences in prompting, not parsing.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::backend::{
    BackendError, CompletionBackend, CompletionRequest, Message, PromptMessages, SampleSpec,
    SamplingParams,
};
use crate::core::{AnswerLabel, AnswerTally, Question};
use crate::reasoner::{extract_answer, AgentError, ShotConfig};
use crate::rng;
use crate::templates::{self, Demo};

/// Every way this crate can answer a question.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    /// Direct answer, no reasoning requested.
    Base,
    /// Zero-shot chain of thought ("Let's think step by step").
    Cot,
    /// Chain of thought sampled `k` times, majority vote.
    ScCot,
    /// Chain of thought sampled `k` times, majority vote over the `m` most
    /// complex transcripts.
    CCot,
    /// Least-to-most: decompose, answer subquestions in sequence, conclude.
    L2m,
    /// The multi-agent consensus protocol.
    Caco,
}

impl Strategy {
    pub const ALL: [Strategy; 6] =
        [Strategy::Base, Strategy::Cot, Strategy::ScCot, Strategy::CCot, Strategy::L2m, Strategy::Caco];
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Strategy::Base => "base",
            Strategy::Cot => "cot",
            Strategy::ScCot => "sc_cot",
            Strategy::CCot => "c_cot",
            Strategy::L2m => "l2m",
            Strategy::Caco => "caco",
        };
        f.write_str(s)
    }
}

impl FromStr for Strategy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_lowercase().replace('-', "_").as_str() {
            "base" => Ok(Strategy::Base),
            "cot" => Ok(Strategy::Cot),
            "sc_cot" | "sccot" => Ok(Strategy::ScCot),
            "c_cot" | "ccot" => Ok(Strategy::CCot),
            "l2m" | "least_to_most" => Ok(Strategy::L2m),
            "caco" | "caco_cot" => Ok(Strategy::Caco),
            other => Err(format!("unknown strategy: {other}")),
        }
    }
}

/// Knobs shared by the baseline strategies.
#[derive(Debug, Clone)]
pub struct BaselineConfig {
    pub shot: ShotConfig,
    /// Decoding for single-sample strategies (base, cot, l2m).
    pub params: SamplingParams,
    /// Wider decoding for the sampled strategies (sc_cot, c_cot).
    pub sc_params: SamplingParams,
    /// Samples drawn by sc_cot and c_cot.
    pub sc_samples: usize,
    /// Transcripts that survive the complexity cut in c_cot.
    pub c_cot_top: usize,
    pub seed: u64,
    pub demo: Option<Demo>,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        BaselineConfig {
            shot: ShotConfig::Zero,
            params: SamplingParams::default(),
            sc_params: SamplingParams::self_consistency(),
            sc_samples: 10,
            c_cot_top: 5,
            seed: 0,
            demo: None,
        }
    }
}

/// What a baseline strategy produced for one question.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineResult {
    pub answer: AnswerLabel,
    /// Extracted answer of each sample, in sample order.
    pub sample_answers: Vec<AnswerLabel>,
    /// A vote among only ABSTAIN samples fell back to a seeded random
    /// option.
    pub fallback_used: bool,
    /// l2m could not parse its own decomposition and answered via cot.
    pub degraded_to_cot: bool,
}

impl BaselineResult {
    fn single(answer: AnswerLabel) -> Self {
        BaselineResult {
            answer,
            sample_answers: vec![answer],
            fallback_used: false,
            degraded_to_cot: false,
        }
    }
}

/// Dispatch a non-consensus strategy.
///
/// `Strategy::Caco` is not a baseline; calling it here is a configuration
/// error.
pub fn run_strategy<B: CompletionBackend>(
    backend: &B,
    q: &Question,
    strategy: Strategy,
    config: &BaselineConfig,
) -> Result<BaselineResult, AgentError> {
    match strategy {
        Strategy::Base => run_base(backend, q, config),
        Strategy::Cot => run_cot(backend, q, config),
        Strategy::ScCot => run_sc_cot(backend, q, config),
        Strategy::CCot => run_c_cot(backend, q, config),
        Strategy::L2m => run_l2m(backend, q, config),
        Strategy::Caco => Err(AgentError::Backend(BackendError::Config(
            "caco is the consensus strategy, not a baseline".into(),
        ))),
    }
}

fn shot_messages(
    config: &BaselineConfig,
    demo_key: &str,
    demo_user: impl Fn(&Demo) -> String,
) -> Vec<Message> {
    let mut messages = Vec::new();
    if config.shot == ShotConfig::One {
        if let Some(demo) = &config.demo {
            if let Some(answer) = demo.answer(demo_key) {
                messages.push(Message::user(demo_user(demo)));
                messages.push(Message::assistant(answer));
            }
        }
    }
    messages
}

fn cot_user_message(q: &Question) -> String {
    templates::render(
        &templates::COT_USER,
        &[
            ("question_block", templates::question_block(q).as_str()),
            ("answer_format", templates::answer_format(q.kind)),
        ],
    )
    .trim_end()
    .to_string()
}

/// The cot prompt, shared by cot, sc_cot, and c_cot.
pub fn build_cot_prompt(q: &Question, config: &BaselineConfig) -> PromptMessages {
    let mut messages = vec![Message::system(templates::BASELINE_SYSTEM)];
    messages.extend(shot_messages(config, "cot", |demo| cot_user_message(&demo.question)));
    messages.push(Message::user(cot_user_message(q)));
    PromptMessages::new(messages).expect("cot prompt is well-formed")
}

fn build_base_prompt(q: &Question, config: &BaselineConfig) -> PromptMessages {
    let user = |q: &Question| {
        templates::render(
            &templates::BASE_USER,
            &[
                ("question_block", templates::question_block(q).as_str()),
                ("answer_format", templates::answer_format(q.kind)),
            ],
        )
        .trim_end()
        .to_string()
    };
    let mut messages = vec![Message::system(templates::BASELINE_SYSTEM)];
    messages.extend(shot_messages(config, "base", |demo| user(&demo.question)));
    messages.push(Message::user(user(q)));
    PromptMessages::new(messages).expect("base prompt is well-formed")
}

fn complete_text<B: CompletionBackend>(
    backend: &B,
    messages: &PromptMessages,
    params: &SamplingParams,
    sample: u32,
) -> Result<String, BackendError> {
    let request =
        CompletionRequest { messages, params, sample: SampleSpec::Index(sample) };
    backend.complete(&request).map(|c| c.text)
}

/// Direct answering without requested reasoning. One call.
pub fn run_base<B: CompletionBackend>(
    backend: &B,
    q: &Question,
    config: &BaselineConfig,
) -> Result<BaselineResult, AgentError> {
    let prompt = build_base_prompt(q, config);
    let text = complete_text(backend, &prompt, &config.params, 0)?;
    Ok(BaselineResult::single(extract_answer(&text, q)))
}

/// Zero-shot chain of thought. One call.
pub fn run_cot<B: CompletionBackend>(
    backend: &B,
    q: &Question,
    config: &BaselineConfig,
) -> Result<BaselineResult, AgentError> {
    let prompt = build_cot_prompt(q, config);
    let text = complete_text(backend, &prompt, &config.params, 0)?;
    Ok(BaselineResult::single(extract_answer(&text, q)))
}

/// Draw `n` cot samples in parallel with the wide profile. Failed calls
/// surface as `None`; a fully failed fan-out is an error.
fn draw_cot_samples<B: CompletionBackend>(
    backend: &B,
    q: &Question,
    config: &BaselineConfig,
    n: usize,
) -> Result<Vec<Option<String>>, AgentError> {
    assert!(n >= 1, "at least one sample is required");
    let prompt = build_cot_prompt(q, config);
    let outcomes: Vec<Result<String, BackendError>> = std::thread::scope(|scope| {
        let handles: Vec<_> = (0..n)
            .map(|i| {
                let prompt = &prompt;
                let params = &config.sc_params;
                scope.spawn(move || complete_text(backend, prompt, params, i as u32))
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("sample thread panicked")).collect()
    });
    let mut last_error = None;
    let samples: Vec<Option<String>> = outcomes
        .into_iter()
        .map(|r| match r {
            Ok(text) => Some(text),
            Err(e) => {
                log::warn!("sample for question {} failed: {e}", q.id);
                last_error = Some(e.to_string());
                None
            }
        })
        .collect();
    if samples.iter().all(Option::is_none) {
        return Err(AgentError::AllCallsFailed { n, last: last_error.unwrap_or_default() });
    }
    Ok(samples)
}

/// Majority vote over `answers`; every sample ABSTAIN (or failed) falls
/// back to a seeded uniform option draw.
fn vote(
    q: &Question,
    seed: u64,
    sample_answers: Vec<AnswerLabel>,
) -> BaselineResult {
    match AnswerTally::tally(&sample_answers, &q.labels()) {
        Ok(tally) => BaselineResult {
            answer: tally.top1(),
            sample_answers,
            fallback_used: false,
            degraded_to_cot: false,
        },
        Err(_) => {
            let mut rng = rng::question_rng(seed, &q.id);
            BaselineResult {
                answer: *rng::draw(&mut rng, &q.labels()),
                sample_answers,
                fallback_used: true,
                degraded_to_cot: false,
            }
        }
    }
}

/// Self-consistent chain of thought: `sc_samples` samples, majority vote.
pub fn run_sc_cot<B: CompletionBackend>(
    backend: &B,
    q: &Question,
    config: &BaselineConfig,
) -> Result<BaselineResult, AgentError> {
    let samples = draw_cot_samples(backend, q, config, config.sc_samples)?;
    let answers: Vec<AnswerLabel> = samples
        .iter()
        .map(|s| s.as_deref().map_or(AnswerLabel::Abstain, |t| extract_answer(t, q)))
        .collect();
    Ok(vote(q, config.seed, answers))
}

/// Reasoning steps in a transcript: its non-empty lines.
pub fn complexity(text: &str) -> usize {
    text.lines().filter(|l| !l.trim().is_empty()).count()
}

/// Complexity-weighted chain of thought: like sc_cot, but only the
/// `c_cot_top` most complex transcripts vote. Complexity ties break by
/// character count, then by sample index, so the cut is deterministic.
/// With `c_cot_top >= sc_samples` the cut is the identity and the strategy
/// coincides with sc_cot.
pub fn run_c_cot<B: CompletionBackend>(
    backend: &B,
    q: &Question,
    config: &BaselineConfig,
) -> Result<BaselineResult, AgentError> {
    let samples = draw_cot_samples(backend, q, config, config.sc_samples)?;
    let all_answers: Vec<AnswerLabel> = samples
        .iter()
        .map(|s| s.as_deref().map_or(AnswerLabel::Abstain, |t| extract_answer(t, q)))
        .collect();
    let mut ranked: Vec<usize> = (0..samples.len()).collect();
    ranked.sort_by_key(|&i| {
        let (steps, chars) = samples[i]
            .as_deref()
            .map_or((0, 0), |t| (complexity(t), t.chars().count()));
        (std::cmp::Reverse(steps), std::cmp::Reverse(chars), i)
    });
    ranked.truncate(config.c_cot_top.max(1));
    let voting: Vec<AnswerLabel> = {
        // Preserve sample order among the survivors so the vote, like
        // sc_cot's, is a function of the multiset.
        let mut survivors = ranked;
        survivors.sort_unstable();
        survivors.into_iter().map(|i| all_answers[i]).collect()
    };
    let mut result = vote(q, config.seed, voting);
    result.sample_answers = all_answers;
    Ok(result)
}

/// Parse a numbered (or dashed) decomposition into subquestions, capped at
/// eight to bound the call count.
pub fn parse_decomposition(text: &str) -> Vec<String> {
    let mut subs = Vec::new();
    for line in text.lines() {
        let t = line.trim().trim_start_matches('*').trim_start();
        let digits = t.chars().take_while(|c| c.is_ascii_digit()).count();
        let body = if digits > 0 {
            t[digits..].strip_prefix(['.', ')']).map(str::trim_start)
        } else {
            t.strip_prefix('-').map(str::trim_start)
        };
        if let Some(body) = body {
            if !body.is_empty() {
                subs.push(body.to_string());
            }
        }
        if subs.len() == 8 {
            break;
        }
    }
    subs
}

/// Least-to-most prompting: one decomposition call, one call per
/// subquestion with the conversation accumulating, and a final call for the
/// answer. An unparseable decomposition degrades to plain cot (the
/// decomposition call still counts).
pub fn run_l2m<B: CompletionBackend>(
    backend: &B,
    q: &Question,
    config: &BaselineConfig,
) -> Result<BaselineResult, AgentError> {
    let decompose_user = |q: &Question| {
        templates::render(
            &templates::L2M_DECOMPOSE_USER,
            &[("question_block", templates::question_block(q).as_str())],
        )
        .trim_end()
        .to_string()
    };
    let mut turns = vec![Message::system(templates::BASELINE_SYSTEM)];
    turns.extend(shot_messages(config, "l2m_decompose", |demo| decompose_user(&demo.question)));
    turns.push(Message::user(decompose_user(q)));

    let prompt = PromptMessages::new(turns.clone()).expect("l2m prompt is well-formed");
    let decomposition = complete_text(backend, &prompt, &config.params, 0)?;
    let subquestions = parse_decomposition(&decomposition);
    if subquestions.is_empty() {
        log::warn!("question {}: unparseable decomposition; degrading to cot", q.id);
        let mut result = run_cot(backend, q, config)?;
        result.degraded_to_cot = true;
        return Ok(result);
    }

    turns.push(Message::assistant(decomposition));
    for sub in &subquestions {
        turns.push(Message::user(
            templates::render(&templates::L2M_SUBQUESTION_USER, &[("subquestion", sub.as_str())])
                .trim_end()
                .to_string(),
        ));
        let prompt = PromptMessages::new(turns.clone()).expect("l2m prompt is well-formed");
        let answer = complete_text(backend, &prompt, &config.params, 0)?;
        turns.push(Message::assistant(answer));
    }
    turns.push(Message::user(
        templates::render(
            &templates::L2M_FINAL_USER,
            &[("answer_format", templates::answer_format(q.kind))],
        )
        .trim_end()
        .to_string(),
    ));
    let prompt = PromptMessages::new(turns).expect("l2m prompt is well-formed");
    let conclusion = complete_text(backend, &prompt, &config.params, 0)?;
    Ok(BaselineResult::single(extract_answer(&conclusion, q)))
}
