//! Causal-consistency chain-of-thought reasoning over language-model backends.
//!
//! The crate is organised in layers:
//!
//! * [`core`] — answer labels, questions, tallies, thresholds, and traces.
//! * [`rng`] — the deterministic per-question randomness contract.
//! * [`backend`] — the completion-backend abstraction plus HTTP, scripted,
//!   and caching implementations.
//! * [`templates`] — embedded prompt templates and section vocabulary.
//! * [`reasoner`] / [`evaluator`] — the two agent roles: prompt
//!   construction, transcript parsing, and answer extraction.
//! * [`consensus`] — the recursive multi-agent consensus procedure.
//! * [`baselines`] — single-agent prompting strategies used for comparison.
//! * [`datasets`] — benchmark loaders with integrity guards.
//! * [`harness`] — benchmark runs, JSONL logs, resume, and reporting.

pub mod backend;
pub mod baselines;
pub mod consensus;
pub mod core;
pub mod datasets;
pub mod evaluator;
pub mod harness;
pub mod reasoner;
pub mod rng;
pub mod templates;
