//! `caco` — run chain-of-thought baselines and the multi-agent consensus
//! pipeline over QA benchmarks, producing resumable JSONL run logs and
//! accuracy reports.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use anyhow::{anyhow, Context, Result};
use clap::{Args, Parser, Subcommand};

use caco::baselines::Strategy;
use caco::core::Threshold;
use caco::datasets::{DatasetDescriptor, DatasetName};
use caco::harness::fetch::fetch_published;
use caco::harness::report::report;
use caco::harness::{run_benchmark, Ablation, BackendChoice, RunConfig, RunSummary};
use caco::reasoner::ShotConfig;

#[derive(Parser)]
#[command(name = "caco", version, about = "Multi-agent consensus reasoning benchmark runner")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a strategy over a dataset, appending to a resumable JSONL log.
    Run(Box<RunArgs>),
    /// Compare run logs: accuracy by category plus round distributions.
    Report(ReportArgs),
    /// Download a dataset's published files and pin their checksums.
    Fetch(FetchArgs),
}

#[derive(Args)]
struct RunArgs {
    /// TOML config whose keys mirror these flags; explicit flags win.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Dataset to run: scienceqa, com2sense, or boolq.
    #[arg(long, value_parser = DatasetName::from_str)]
    dataset: Option<DatasetName>,
    /// Directory holding fetched datasets.
    #[arg(long)]
    data_dir: Option<PathBuf>,
    /// base, cot, sc_cot, c_cot, l2m, or caco.
    #[arg(long, value_parser = Strategy::from_str)]
    strategy: Option<Strategy>,
    /// Model id requested from the provider.
    #[arg(long)]
    model: Option<String>,
    /// openai, anthropic, scripted:<path>, or cached:<inner>.
    ///
    /// Credentials come from OPENAI_API_KEY / ANTHROPIC_API_KEY only.
    #[arg(long, value_parser = BackendChoice::from_str)]
    backend: Option<BackendChoice>,
    /// Directory for cached:* backend entries.
    #[arg(long)]
    cache_dir: Option<PathBuf>,
    /// Run log path (JSONL); rerunning resumes it.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Reasoner agents per round (caco).
    #[arg(long)]
    reasoners: Option<usize>,
    /// Evaluator agents (caco); 0 falls back to plain majority voting.
    #[arg(long)]
    evaluators: Option<usize>,
    /// Majority-branch threshold, e.g. 0.5 or 1/2 (caco).
    #[arg(long, value_parser = Threshold::from_str)]
    th0: Option<Threshold>,
    /// Top-n-branch exit threshold (caco).
    #[arg(long, value_parser = Threshold::from_str)]
    th1: Option<Threshold>,
    /// Ranked candidates scrutinized when no majority forms (caco).
    #[arg(long)]
    topn: Option<usize>,
    /// Recursion depth budget (caco).
    #[arg(long)]
    dmax: Option<u32>,
    /// Worked examples before each question: zero or one.
    #[arg(long, value_parser = ShotConfig::from_str)]
    shot: Option<ShotConfig>,
    /// JSON demo fixture overriding the built-in one-shot exemplar.
    #[arg(long)]
    demo: Option<PathBuf>,
    /// Samples drawn by sc_cot and c_cot.
    #[arg(long)]
    sc_samples: Option<usize>,
    /// Transcripts surviving the complexity cut in c_cot.
    #[arg(long)]
    c_cot_top: Option<usize>,
    /// Seed behind all per-question randomness.
    #[arg(long)]
    seed: Option<u64>,
    /// Run at most this many questions.
    #[arg(long)]
    limit: Option<usize>,
    /// Skip this many questions first.
    #[arg(long)]
    offset: Option<usize>,
    /// Pipeline stages to disable: term_explanation, solution_eval,
    /// counterfactual, reconsideration. Repeatable or comma-separated.
    #[arg(long, value_parser = Ablation::from_str, value_delimiter = ',')]
    ablate: Vec<Ablation>,
    /// Questions processed in parallel.
    #[arg(long)]
    workers: Option<usize>,
    /// Count errored questions against accuracy instead of dropping them.
    #[arg(long)]
    strict: bool,
    /// Skip the dataset's expected-count guard (for trimmed local files).
    #[arg(long)]
    allow_count_mismatch: bool,
}

/// TOML mirror of the run flags.
#[derive(Debug, Default, serde::Deserialize)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    dataset: Option<String>,
    data_dir: Option<PathBuf>,
    strategy: Option<String>,
    model: Option<String>,
    backend: Option<String>,
    cache_dir: Option<PathBuf>,
    out: Option<PathBuf>,
    reasoners: Option<usize>,
    evaluators: Option<usize>,
    th0: Option<String>,
    th1: Option<String>,
    topn: Option<usize>,
    dmax: Option<u32>,
    shot: Option<String>,
    demo: Option<PathBuf>,
    sc_samples: Option<usize>,
    c_cot_top: Option<usize>,
    seed: Option<u64>,
    limit: Option<usize>,
    offset: Option<usize>,
    ablate: Option<Vec<String>>,
    workers: Option<usize>,
    strict: Option<bool>,
    allow_count_mismatch: Option<bool>,
}

fn parse_key<T: FromStr>(value: Option<String>, key: &str) -> Result<Option<T>>
where
    T::Err: fmt::Display,
{
    value
        .map(|raw| raw.parse::<T>().map_err(|e| anyhow!("config key {key} = {raw:?}: {e}")))
        .transpose()
}

fn build_config(args: RunArgs) -> Result<RunConfig> {
    let file: FileConfig = match &args.config {
        Some(path) => {
            let raw = fs::read_to_string(path)
                .with_context(|| format!("cannot read config {}", path.display()))?;
            toml::from_str(&raw).with_context(|| format!("invalid config {}", path.display()))?
        }
        None => FileConfig::default(),
    };

    let dataset = args
        .dataset
        .or(parse_key(file.dataset, "dataset")?)
        .context("a dataset is required: pass --dataset or set it in the config file")?;
    let data_dir = args.data_dir.or(file.data_dir).unwrap_or_else(|| PathBuf::from("data"));
    let strategy =
        args.strategy.or(parse_key(file.strategy, "strategy")?).unwrap_or(Strategy::Caco);
    let model = args.model.or(file.model).unwrap_or_else(|| "gpt-3.5-turbo".to_string());
    let backend =
        args.backend.or(parse_key(file.backend, "backend")?).unwrap_or(BackendChoice::OpenAi);
    let out = args
        .out
        .or(file.out)
        .unwrap_or_else(|| PathBuf::from(format!("runs/{dataset}-{strategy}.jsonl")));

    let mut descriptor = DatasetDescriptor::standard(dataset, &data_dir);
    if args.allow_count_mismatch || file.allow_count_mismatch.unwrap_or(false) {
        descriptor.expected_count = None;
    }

    let mut config = RunConfig::new(descriptor, strategy, model, backend, out);
    if let Some(v) = args.cache_dir.or(file.cache_dir) {
        config.cache_dir = v;
    }
    if let Some(v) = args.reasoners.or(file.reasoners) {
        config.reasoners = v;
    }
    if let Some(v) = args.evaluators.or(file.evaluators) {
        config.evaluators = v;
    }
    if let Some(v) = args.th0.or(parse_key(file.th0, "th0")?) {
        config.th0 = v;
    }
    if let Some(v) = args.th1.or(parse_key(file.th1, "th1")?) {
        config.th1 = v;
    }
    if let Some(v) = args.topn.or(file.topn) {
        config.topn = v;
    }
    if let Some(v) = args.dmax.or(file.dmax) {
        config.d_max = v;
    }
    if let Some(v) = args.shot.or(parse_key(file.shot, "shot")?) {
        config.shot = v;
    }
    config.demo_path = args.demo.or(file.demo);
    if let Some(v) = args.sc_samples.or(file.sc_samples) {
        config.sc_samples = v;
    }
    if let Some(v) = args.c_cot_top.or(file.c_cot_top) {
        config.c_cot_top = v;
    }
    if let Some(v) = args.seed.or(file.seed) {
        config.seed = v;
    }
    config.limit = args.limit.or(file.limit);
    if let Some(v) = args.offset.or(file.offset) {
        config.offset = v;
    }
    config.ablate = if args.ablate.is_empty() {
        file.ablate
            .unwrap_or_default()
            .into_iter()
            .map(|raw| raw.parse().map_err(|e| anyhow!("config key ablate: {e}")))
            .collect::<Result<_>>()?
    } else {
        args.ablate
    };
    if let Some(v) = args.workers.or(file.workers) {
        config.workers = v;
    }
    config.strict = args.strict || file.strict.unwrap_or(false);
    Ok(config)
}

fn run(args: RunArgs) -> Result<()> {
    let config = build_config(args)?;
    let questions = config
        .dataset
        .load()
        .with_context(|| format!("loading {}", config.dataset.path.display()))?;
    let backend = config.backend.build(&config.model, &config.cache_dir)?;
    eprintln!(
        "running {} on {} ({} questions)",
        config.label(),
        config.dataset.name,
        config.subset(&questions).len()
    );
    let summary = run_benchmark(&backend, &questions, &config)?;
    print_summary(&config.out, &summary);
    Ok(())
}

fn print_summary(log: &Path, summary: &RunSummary) {
    println!("log: {}", log.display());
    println!("config: {}", summary.label);
    println!("questions: {} ({} errored)", summary.total_records, summary.errors);
    println!(
        "accuracy: {:.2}% ({}/{})",
        summary.accuracy * 100.0,
        summary.correct,
        summary.graded
    );
    if let Some(macro_accuracy) = summary.macro_accuracy {
        println!("macro accuracy over subjects: {:.2}%", macro_accuracy * 100.0);
    }
    for (name, categories) in [("subject", &summary.by_subject), ("grade", &summary.by_grade)] {
        if categories.is_empty() {
            continue;
        }
        let cells: Vec<String> = categories
            .iter()
            .map(|(category, c)| {
                format!("{category} {:.2}% ({}/{})", c.accuracy() * 100.0, c.correct, c.total)
            })
            .collect();
        println!("by {name}: {}", cells.join(", "));
    }
    if !summary.rounds.is_empty() {
        let cells: Vec<String> =
            summary.rounds.iter().map(|(rounds, n)| format!("{rounds}: {n}")).collect();
        println!("rounds: {}", cells.join(", "));
    }
    println!("model calls: {} ({:.2} per question)", summary.total_calls, summary.mean_calls);
}

#[derive(Args)]
struct ReportArgs {
    /// Run logs to compare; all must target the same dataset.
    #[arg(required = true)]
    logs: Vec<PathBuf>,
    /// Also write accuracy.csv and rounds.csv into this directory.
    #[arg(long)]
    csv_dir: Option<PathBuf>,
}

fn run_report(args: ReportArgs) -> Result<()> {
    let report = report(&args.logs)?;
    print!("{report}");
    if let Some(dir) = args.csv_dir {
        fs::create_dir_all(&dir)
            .with_context(|| format!("cannot create {}", dir.display()))?;
        let accuracy = dir.join("accuracy.csv");
        fs::write(&accuracy, report.accuracy_csv())
            .with_context(|| format!("cannot write {}", accuracy.display()))?;
        let rounds = dir.join("rounds.csv");
        fs::write(&rounds, report.rounds_csv())
            .with_context(|| format!("cannot write {}", rounds.display()))?;
        eprintln!("wrote {} and {}", accuracy.display(), rounds.display());
    }
    Ok(())
}

#[derive(Args)]
struct FetchArgs {
    /// scienceqa, com2sense, or boolq.
    #[arg(value_parser = DatasetName::from_str)]
    dataset: DatasetName,
    /// Directory datasets are stored under.
    #[arg(long, default_value = "data")]
    data_dir: PathBuf,
}

fn run_fetch(args: FetchArgs) -> Result<()> {
    let paths = fetch_published(args.dataset, &args.data_dir)?;
    for path in paths {
        println!("{}", path.display());
    }
    Ok(())
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match Cli::parse().command {
        Command::Run(args) => run(*args),
        Command::Report(args) => run_report(args),
        Command::Fetch(args) => run_fetch(args),
    }
}
