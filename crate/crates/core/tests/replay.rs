use std::path::{Path, PathBuf};

use inquire_core::run::{replay_episode, run_stream, RunConfig};
use inquire_core::Error;

fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures")
}

fn golden_run() -> (tempfile::TempDir, RunConfig) {
    let dir = tempfile::tempdir().unwrap();
    let config = RunConfig::load(&fixtures().join("case731.config.toml")).unwrap();
    run_stream(&config, dir.path()).unwrap();
    (dir, config)
}

#[test]
fn edited_transcript_reports_first_divergent_turn() {
    let (dir, _) = golden_run();
    let path = dir.path().join("episodes/1.transcript.jsonl");
    let text = std::fs::read_to_string(&path).unwrap();
    std::fs::write(&path, text.replacen("\"cost\":1200", "\"cost\":1250", 1)).unwrap();
    let report = replay_episode(&path, None).unwrap();
    assert!(!report.passed);
    let d = report.divergence.unwrap();
    assert_eq!(d.turn, 4);
    assert!(d.expected.unwrap().contains("1250"));
    assert!(d.actual.unwrap().contains("1200"));
}

#[test]
fn missing_recorded_call_is_a_divergence() {
    let (dir, _) = golden_run();
    let calls = dir.path().join("episodes/1.calls.jsonl");
    let kept: String = std::fs::read_to_string(&calls)
        .unwrap()
        .lines()
        .filter(|l| {
            let call: serde_json::Value = serde_json::from_str(l).unwrap();
            !call["response"].as_str().unwrap_or("").starts_with("Cyst fluid")
        })
        .map(|l| format!("{l}\n"))
        .collect();
    std::fs::write(&calls, kept).unwrap();
    let report = replay_episode(&dir.path().join("episodes/1.transcript.jsonl"), None).unwrap();
    assert!(!report.passed);
    let d = report.divergence.unwrap();
    assert_eq!(d.turn, 7);
    assert!(d.error.is_some());
}

#[test]
fn mismatched_config_is_refused() {
    let (dir, config) = golden_run();
    let other = RunConfig { t_max: 10, ..config };
    let err = replay_episode(&dir.path().join("episodes/1.transcript.jsonl"), Some(&other)).unwrap_err();
    assert!(matches!(err, Error::ReplayRefused(_)), "{err}");
}

#[test]
fn output_directory_of_another_run_is_rejected() {
    let (dir, config) = golden_run();
    let other = RunConfig { k: 3, ..config };
    assert!(run_stream(&other, dir.path()).is_err());
}
