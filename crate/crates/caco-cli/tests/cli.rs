//! End-to-end runs of the `caco` binary: run, report, and fetch against
//! scripted backends and synthetic dataset files in temporary directories.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn caco(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_caco"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("spawn caco")
}

fn stdout(output: &Output) -> String {
    String::from_utf8_lossy(&output.stdout).to_string()
}

fn stderr(output: &Output) -> String {
    String::from_utf8_lossy(&output.stderr).to_string()
}

fn assert_success(output: &Output) {
    assert!(
        output.status.success(),
        "command failed\nstdout:\n{}\nstderr:\n{}",
        stdout(output),
        stderr(output)
    );
}

/// Three boolean questions with gold yes / no / no.
fn write_boolq(dir: &Path) {
    let data = dir.join("data/boolq");
    fs::create_dir_all(&data).unwrap();
    fs::write(
        data.join("dev.jsonl"),
        concat!(
            r#"{"question": "is water a liquid at room temperature", "answer": true, "passage": "Water is a liquid."}"#,
            "\n",
            r#"{"question": "is fire cold to the touch", "answer": false, "passage": "Fire is hot."}"#,
            "\n",
            r#"{"question": "is a rock a living organism", "answer": false, "passage": "Rocks are not alive."}"#,
            "\n",
        ),
    )
    .unwrap();
}

/// Answers yes for the water and fire questions, no for the rock question:
/// correct, wrong, correct against `write_boolq`'s gold labels.
fn write_two_of_three_script(dir: &Path) {
    fs::write(
        dir.join("script.json"),
        r#"{"patterns": [
            {"contains": ["water"], "text": "Answer: yes"},
            {"contains": ["fire"], "text": "Answer: yes"},
            {"contains": ["rock"], "text": "Answer: no"}
        ]}"#,
    )
    .unwrap();
}

const RUN_BOOLQ: &[&str] = &[
    "run",
    "--dataset",
    "boolq",
    "--backend",
    "scripted:script.json",
    "--allow-count-mismatch",
];

#[test]
fn run_cot_reports_two_of_three_accuracy() {
    let dir = tempfile::tempdir().unwrap();
    write_boolq(dir.path());
    write_two_of_three_script(dir.path());

    let output = caco(
        dir.path(),
        &[RUN_BOOLQ, &["--strategy", "cot", "--out", "run.jsonl"]].concat(),
    );
    assert_success(&output);

    let text = stdout(&output);
    assert!(text.contains("accuracy: 66.67% (2/3)"), "unexpected summary:\n{text}");
    assert!(text.contains("model calls: 3 (1.00 per question)"), "unexpected summary:\n{text}");

    let log = fs::read_to_string(dir.path().join("run.jsonl")).unwrap();
    let lines: Vec<&str> = log.lines().collect();
    assert_eq!(lines.len(), 4, "header plus one record per question");
    let header: serde_json::Value = serde_json::from_str(lines[0]).unwrap();
    assert_eq!(header["format"], 1);
    assert_eq!(header["config"]["strategy"], "cot");
    let record: serde_json::Value = serde_json::from_str(lines[1]).unwrap();
    assert_eq!(record["id"], "boolq-1");
    assert_eq!(record["correct"], true);
}

#[test]
fn run_caco_uses_three_calls_per_question_when_round_one_settles() {
    let dir = tempfile::tempdir().unwrap();
    write_boolq(dir.path());
    // Everyone says yes, so the evaluator agrees with the majority at once.
    fs::write(
        dir.path().join("script.json"),
        r#"{"patterns": [{"contains": [], "text": "Answer: yes"}]}"#,
    )
    .unwrap();

    let output = caco(
        dir.path(),
        &[
            RUN_BOOLQ,
            &[
                "--strategy",
                "caco",
                "--reasoners",
                "2",
                "--evaluators",
                "1",
                "--out",
                "run.jsonl",
            ],
        ]
        .concat(),
    );
    assert_success(&output);

    let text = stdout(&output);
    assert!(text.contains("rounds: 1: 3"), "all questions settle in round one:\n{text}");
    assert!(text.contains("model calls: 9 (3.00 per question)"), "unexpected summary:\n{text}");
    assert!(text.contains("accuracy: 33.33% (1/3)"), "yes is right once:\n{text}");
}

#[test]
fn rerunning_a_finished_log_changes_nothing() {
    let dir = tempfile::tempdir().unwrap();
    write_boolq(dir.path());
    write_two_of_three_script(dir.path());
    let args = [RUN_BOOLQ, &["--strategy", "cot", "--out", "run.jsonl"]].concat();

    assert_success(&caco(dir.path(), &args));
    let first = fs::read(dir.path().join("run.jsonl")).unwrap();

    let second_run = caco(dir.path(), &args);
    assert_success(&second_run);
    let second = fs::read(dir.path().join("run.jsonl")).unwrap();

    assert_eq!(first, second, "a finished log is replayed, not rewritten");
    assert!(stdout(&second_run).contains("accuracy: 66.67% (2/3)"));
}

#[test]
fn config_file_supplies_defaults_and_flags_override() {
    let dir = tempfile::tempdir().unwrap();
    write_boolq(dir.path());
    write_two_of_three_script(dir.path());
    fs::write(
        dir.path().join("caco.toml"),
        r#"
dataset = "boolq"
strategy = "cot"
backend = "scripted:script.json"
model = "file-model"
out = "run.jsonl"
allow_count_mismatch = true
"#,
    )
    .unwrap();

    let output = caco(
        dir.path(),
        &["run", "--config", "caco.toml", "--model", "flag-model"],
    );
    assert_success(&output);

    let log = fs::read_to_string(dir.path().join("run.jsonl")).unwrap();
    let header: serde_json::Value =
        serde_json::from_str(log.lines().next().unwrap()).unwrap();
    assert_eq!(header["config"]["model"], "flag-model", "explicit flag beats the file");
    assert_eq!(header["config"]["strategy"], "cot");
}

#[test]
fn report_compares_logs_and_writes_csv() {
    let dir = tempfile::tempdir().unwrap();
    write_boolq(dir.path());
    write_two_of_three_script(dir.path());

    assert_success(&caco(
        dir.path(),
        &[RUN_BOOLQ, &["--strategy", "cot", "--out", "cot.jsonl"]].concat(),
    ));
    assert_success(&caco(
        dir.path(),
        &[RUN_BOOLQ, &["--strategy", "base", "--out", "base.jsonl"]].concat(),
    ));

    let output = caco(
        dir.path(),
        &["report", "cot.jsonl", "base.jsonl", "--csv-dir", "csv"],
    );
    assert_success(&output);

    let text = stdout(&output);
    assert!(text.contains("dataset: boolq"), "report names the dataset:\n{text}");
    assert!(text.contains("cot zero-shot"), "report lists each config:\n{text}");
    assert!(text.contains("base zero-shot"), "report lists each config:\n{text}");

    let accuracy = fs::read_to_string(dir.path().join("csv/accuracy.csv")).unwrap();
    assert!(accuracy.starts_with("config,"), "csv header:\n{accuracy}");
    assert_eq!(accuracy.lines().count(), 3, "header plus one row per log");
    assert!(fs::read_to_string(dir.path().join("csv/rounds.csv")).is_ok());
}

#[test]
fn fetch_pins_existing_files_without_network() {
    let dir = tempfile::tempdir().unwrap();
    write_boolq(dir.path());

    let output = caco(dir.path(), &["fetch", "boolq", "--data-dir", "data"]);
    assert_success(&output);
    assert!(stdout(&output).trim_end().ends_with("dev.jsonl"));

    let manifest =
        fs::read_to_string(dir.path().join("data/boolq/manifest.json")).unwrap();
    assert!(manifest.contains("\"sha256\""), "checksum pinned:\n{manifest}");

    // A second fetch verifies against the pin and changes nothing.
    assert_success(&caco(dir.path(), &["fetch", "boolq", "--data-dir", "data"]));
}

#[test]
fn count_guard_refuses_trimmed_files_by_default() {
    let dir = tempfile::tempdir().unwrap();
    write_boolq(dir.path());
    write_two_of_three_script(dir.path());

    let output = caco(
        dir.path(),
        &[
            "run",
            "--dataset",
            "boolq",
            "--backend",
            "scripted:script.json",
            "--strategy",
            "cot",
            "--out",
            "run.jsonl",
        ],
    );
    assert!(!output.status.success(), "count mismatch must fail the run");
    let text = stderr(&output);
    assert!(text.contains("3270") && text.contains("3"), "names both counts:\n{text}");
}

#[test]
fn a_dataset_must_come_from_flags_or_config() {
    let dir = tempfile::tempdir().unwrap();
    let output = caco(dir.path(), &["run"]);
    assert!(!output.status.success());
    assert!(stderr(&output).contains("--dataset"), "points at the missing flag");
}
