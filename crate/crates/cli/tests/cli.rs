use std::path::Path;
use std::process::{Command, Output};

fn rampmerge(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rampmerge"))
        .args(args)
        .current_dir(cwd)
        .output()
        .expect("binary runs")
}

fn read_all(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<_> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap())
        .map(|e| (e.file_name().to_string_lossy().into_owned(), std::fs::read(e.path()).unwrap()))
        .collect();
    files.sort();
    files
}

#[test]
fn simulate_is_byte_identical_across_runs() {
    let tmp = tempfile::tempdir().unwrap();
    for out in ["a", "b"] {
        let o = rampmerge(
            &["simulate", "--seed", "3", "--interference", "10", "--duration", "5", "--out", out],
            tmp.path(),
        );
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    let a = read_all(&tmp.path().join("a"));
    assert_eq!(a.len(), 4);
    assert_eq!(a, read_all(&tmp.path().join("b")));
}

#[test]
fn metrics_reads_back_the_event_log() {
    let tmp = tempfile::tempdir().unwrap();
    let o = rampmerge(&["simulate", "--duration", "3", "--out", "run"], tmp.path());
    assert!(o.status.success());
    let o = rampmerge(&["metrics", "run/control_events.csv"], tmp.path());
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = String::from_utf8(o.stdout).unwrap();
    assert!(text.starts_with("AOR\n") && text.contains("PEOR\n"));
}

#[test]
fn train_and_evaluate_round_trip_a_checkpoint() {
    let tmp = tempfile::tempdir().unwrap();
    std::fs::write(tmp.path().join("small.toml"), "buffer_size = 128\nminibatch = 64\nupdates_per_epoch = 2\n").unwrap();
    let o = rampmerge(
        &["train", "--config", "small.toml", "--epochs", "2", "--out", "p.json", "--trace", "t.csv"],
        tmp.path(),
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let trace = std::fs::read_to_string(tmp.path().join("t.csv")).unwrap();
    assert_eq!(trace.lines().count(), 3);
    let o = rampmerge(&["evaluate", "--policy", "p.json", "--episodes", "2", "--out", "e.json"], tmp.path());
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(tmp.path().join("e.json").exists());
}

#[test]
fn configuration_errors_exit_with_two() {
    let tmp = tempfile::tempdir().unwrap();
    std::fs::write(tmp.path().join("bad.toml"), "rsvp_typo = 3\n").unwrap();
    let o = rampmerge(&["simulate", "--config", "bad.toml"], tmp.path());
    assert_eq!(o.status.code(), Some(2));
    let o = rampmerge(&["simulate", "--config", "missing.toml"], tmp.path());
    assert_eq!(o.status.code(), Some(1));
}
