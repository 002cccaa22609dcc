use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use knowprobe::fixtures;
use knowprobe::model::{validate_corpus, ProbeOutcome, QaPair};
use knowprobe::pipeline::{RunLedger, RunStatus, StageRecord, StageStatus};
use knowprobe::probe::CampaignCheckpoint;

#[allow(dead_code)]
mod cli_config {
    include!(concat!(env!("CARGO_MANIFEST_DIR"), "/examples/cli_config.rs"));
}

fn knowprobe(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_knowprobe"))
        .current_dir(dir)
        .args(["--log", "off"])
        .args(args)
        .env_remove("KNOWPROBE_BACKEND_URL")
        .env_remove("KNOWPROBE_TRAINER_COMMAND")
        .output()
        .expect("spawn knowprobe")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = knowprobe(dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn error_record(out: &Output) -> serde_json::Value {
    let stderr = String::from_utf8_lossy(&out.stderr);
    let line = stderr.lines().last().expect("stderr is empty");
    serde_json::from_str(line).unwrap_or_else(|e| panic!("not a JSON record ({e}): {stderr}"))
}

fn demo() -> (tempfile::TempDir, PathBuf) {
    let dir = tempfile::tempdir().unwrap();
    cli_config::write_demo(dir.path()).unwrap();
    let path = dir.path().to_path_buf();
    (dir, path)
}

#[test]
fn pipeline_with_mock_config_completes() {
    let (_guard, dir) = demo();
    let summary = ok(&dir, &["--config", "run.toml", "pipeline"]);
    assert!(summary.contains("stopped:"), "{summary}");
    let ledger = RunLedger::load(&dir.join("out/ledger.json")).unwrap();
    assert_eq!(ledger.status, RunStatus::Complete);
    assert_eq!(ledger.snapshots.len(), 3);
    assert_eq!(ledger.stages.len(), 2);
    for report in ["stage1", "stage2", "summary"] {
        assert!(dir.join(format!("out/reports/{report}.txt")).exists());
    }
    assert!(dir.join("out/timings.json").exists());
    assert!(!dir.join("out/run.lock").exists());
}

#[test]
fn pipeline_is_replayable() {
    let (_guard, dir) = demo();
    ok(&dir, &["--config", "run.toml", "--out-dir", "a", "pipeline"]);
    ok(&dir, &["--config", "run.toml", "--out-dir", "b", "pipeline"]);
    for file in [
        "ledger.json",
        "snapshots/origin.jsonl",
        "snapshots/stage2.jsonl",
        "curricula/stage2.jsonl",
        "stages/stage2/record.json",
        "reports/summary.txt",
    ] {
        assert_eq!(
            std::fs::read(dir.join("a").join(file)).unwrap(),
            std::fs::read(dir.join("b").join(file)).unwrap(),
            "{file}"
        );
    }
}

#[test]
fn subcommands_compose_to_pipeline() {
    let (_guard, dir) = demo();
    ok(&dir, &["--config", "run.toml", "pipeline"]);
    let ledger = RunLedger::load(&dir.join("out/ledger.json")).unwrap();
    let stage1 = ledger.stage("stage1").unwrap().checkpoint.clone().unwrap();
    let stage2 = ledger.stage("stage2").unwrap().checkpoint.clone().unwrap();

    let step = |extra: &[&str]| {
        let mut args = vec!["--config", "run.toml", "--out-dir", "sub"];
        args.extend_from_slice(extra);
        ok(&dir, &args)
    };
    step(&["probe", "--name", "origin"]);
    step(&["classify", "--probes", "sub/probes/origin.jsonl"]);
    step(&["curate", "--origin", "sub/snapshots/origin.jsonl"]);
    step(&["train", "--curriculum", "sub/curricula/stage1.jsonl"]);
    step(&["--model", &stage1, "probe", "--name", "stage1"]);
    step(&["classify", "--probes", "sub/probes/stage1.jsonl"]);
    step(&["curate", "--origin", "sub/snapshots/origin.jsonl", "--previous", "sub/snapshots/stage1.jsonl"]);
    step(&["train", "--curriculum", "sub/curricula/stage2.jsonl", "--resume-from", &stage1]);
    step(&["--model", &stage2, "probe", "--name", "stage2"]);
    step(&["classify", "--probes", "sub/probes/stage2.jsonl"]);
    step(&[
        "analyze",
        "--origin",
        "sub/snapshots/origin.jsonl",
        "--before",
        "sub/snapshots/stage1.jsonl",
        "--after",
        "sub/snapshots/stage2.jsonl",
        "--name",
        "stage2",
    ]);

    for file in [
        "snapshots/origin.jsonl",
        "snapshots/stage1.jsonl",
        "snapshots/stage2.jsonl",
        "curricula/stage1.jsonl",
        "curricula/stage2.jsonl",
        "stages/stage1/record.json",
        "stages/stage2/record.json",
        "reports/stage2.txt",
        "reports/stage2.json",
    ] {
        assert_eq!(
            std::fs::read(dir.join("sub").join(file)).unwrap(),
            std::fs::read(dir.join("out").join(file)).unwrap(),
            "{file}"
        );
    }
}

#[test]
fn classify_four_estimates() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = validate_corpus(
        ["hk", "mk", "wk", "unk"]
            .iter()
            .map(|id| QaPair::new(*id, format!("Question {id}?"), &["x"]))
            .collect(),
    )
    .unwrap();
    corpus.save(&dir.path().join("corpus.jsonl")).unwrap();
    let mut cp = CampaignCheckpoint::new("digest", 42, "m");
    for outcome in [
        ProbeOutcome::new("hk", (10, 10), (160, 160)),
        ProbeOutcome::new("mk", (3, 10), (40, 160)),
        ProbeOutcome::new("wk", (0, 10), (1, 160)),
        ProbeOutcome::new("unk", (0, 10), (0, 160)),
    ] {
        cp.completed.insert(outcome.qa_id.clone(), outcome);
    }
    cp.save(&dir.path().join("four.jsonl")).unwrap();
    let out = ok(dir.path(), &["--corpus", "corpus.jsonl", "--out-dir", ".", "classify", "--probes", "four.jsonl"]);
    assert_eq!(out, "HighlyKnown MaybeKnown WeaklyKnown Unknown\n1 1 1 1\n");
    let snap = knowprobe::model::ClassificationSnapshot::load(&dir.path().join("snapshots/four.jsonl")).unwrap();
    assert_eq!(snap.len(), 4);
}

#[test]
fn analyze_fixture_reports_one_stage_counts() {
    let dir = tempfile::tempdir().unwrap();
    let run = fixtures::qwen2();
    run.snap0.save(&dir.path().join("origin.jsonl")).unwrap();
    run.snap1.save(&dir.path().join("stage1.jsonl")).unwrap();
    run.snap2.as_ref().unwrap().save(&dir.path().join("stage2.jsonl")).unwrap();
    let out = ok(dir.path(), &["analyze", "--before", "origin.jsonl", "--after", "stage1.jsonl"]);
    assert!(out.contains("49959 20665 98540"), "{out}");
    let out = ok(
        dir.path(),
        &["analyze", "--origin", "origin.jsonl", "--before", "stage1.jsonl", "--after", "stage2.jsonl", "--name", "two"],
    );
    assert!(out.contains("53691 18288 97185"), "{out}");
    assert!(out.contains("relative gain: 7.47%"), "{out}");
    assert!(dir.path().join("knowprobe-out/reports/two.txt").exists());
}

#[test]
fn graph_writes_edges_and_counts() {
    let (_guard, dir) = demo();
    ok(&dir, &["--config", "run.toml", "pipeline"]);
    let out = ok(
        &dir,
        &["--config", "run.toml", "graph", "--origin", "out/snapshots/origin.jsonl", "--after", "out/snapshots/stage1.jsonl"],
    );
    assert!(out.starts_with("Initial Reclassified LinkedReclassified\n"), "{out}");
    let counts: Vec<usize> = out.lines().nth(1).unwrap().split(' ').map(|n| n.parse().unwrap()).collect();
    assert!(counts[2] <= counts[1]);
    assert!(dir.join("out/graph/edges.tsv").exists());
    assert!(dir.join("out/graph/nodes.tsv").exists());
}

#[test]
fn validation_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let out = knowprobe(dir.path(), &["probe"]);
    assert_eq!(out.status.code(), Some(2));
    let record = error_record(&out);
    assert_eq!(record["error"], "validation");
    assert_eq!(record["exit_code"], 2);
    assert!(record["message"].as_str().unwrap().contains("corpus"));

    let (_guard, demo_dir) = demo();
    let out = knowprobe(&demo_dir, &["--config", "run.toml", "--strategy", "s9", "pipeline"]);
    assert_eq!(out.status.code(), Some(2));
    std::fs::write(demo_dir.join("bad.toml"), "version = 7\n").unwrap();
    let out = knowprobe(&demo_dir, &["--config", "bad.toml", "probe"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn unreachable_backend_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = validate_corpus(vec![
        QaPair::new("a", "Who wrote A?", &["x"]),
        QaPair::new("b", "Who wrote B?", &["y"]),
    ])
    .unwrap();
    corpus.save(&dir.path().join("corpus.jsonl")).unwrap();
    // nothing listens on the discard port
    let out = knowprobe(
        dir.path(),
        &["--corpus", "corpus.jsonl", "--backend-url", "http://127.0.0.1:9/v1", "--exemplars", "1", "probe"],
    );
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(error_record(&out)["error"], "backend");
}

#[test]
fn failing_trainer_exits_4() {
    let (_guard, dir) = demo();
    ok(&dir, &["--config", "run.toml", "probe"]);
    ok(&dir, &["--config", "run.toml", "classify", "--probes", "out/probes/origin.jsonl"]);
    ok(&dir, &["--config", "run.toml", "curate", "--origin", "out/snapshots/origin.jsonl"]);
    let out = knowprobe(
        &dir,
        &["--config", "run.toml", "--trainer-command", "false", "train", "--curriculum", "out/curricula/stage1.jsonl"],
    );
    assert_eq!(out.status.code(), Some(4));
    let record = error_record(&out);
    assert_eq!(record["error"], "trainer");
    let record_path = dir.join("out/stages/stage1/record.json");
    let stage: StageRecord = serde_json::from_str(&std::fs::read_to_string(record_path).unwrap()).unwrap();
    assert_eq!(stage.status, StageStatus::Failed);
    assert!(stage.epochs.is_empty());
}
