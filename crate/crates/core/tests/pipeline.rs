use std::path::Path;
use std::sync::Arc;

use knowprobe::mock::{AnswerPolicy, MockBackend, MockServer, QaRule};
use knowprobe::model::{ClassificationSnapshot, Corpus, KnowledgeClass, Strategy, TrainerConfig};
use knowprobe::pipeline::world::{synthetic_corpus, ScriptedWorld};
use knowprobe::pipeline::{Pipeline, PipelineConfig, RunLedger, RunLock, RunStatus, StopReason};
use knowprobe::probe::{run_campaign, CampaignOptions, HttpBackend, ProbeConfig};
use knowprobe::Error;

fn corpus() -> Corpus {
    synthetic_corpus(160, 40, 5).unwrap()
}

fn config(run_id: &str) -> PipelineConfig {
    PipelineConfig {
        run_id: run_id.into(),
        stage1: TrainerConfig { max_epochs: 3, ..TrainerConfig::stage1() },
        poll_interval_ms: 1,
        ..PipelineConfig::default()
    }
}

fn run(world: &ScriptedWorld, corpus: &Corpus, cfg: PipelineConfig, dir: &Path) -> knowprobe::Result<RunLedger> {
    let backend = world.backend(corpus, 3)?;
    Pipeline::new(cfg, corpus, &backend, &world.trainer, dir).run()
}

#[test]
fn resume_after_trainer_failure_matches_uninterrupted_run() {
    let corpus = corpus();
    let world = ScriptedWorld::demo();
    let clean = tempfile::tempdir().unwrap();
    let expected = run(&world, &corpus, config("r"), clean.path()).unwrap();

    let mut broken = world.clone();
    broken.trainer.stages.get_mut("stage2").unwrap().fail_after = Some(2);
    let dir = tempfile::tempdir().unwrap();
    let err = run(&broken, &corpus, config("r"), dir.path()).unwrap_err();
    assert!(matches!(err, Error::TrainerFailed { .. }), "{err}");
    let failed = RunLedger::load(&dir.path().join("ledger.json")).unwrap();
    assert_eq!(failed.status, RunStatus::Failed);
    let stage2 = failed.stage("stage2").unwrap();
    assert_eq!(stage2.epochs.len(), 2);
    assert!(failed.failure.is_some());

    let resumed = run(&world, &corpus, config("r"), dir.path()).unwrap();
    assert_eq!(resumed, expected);
    assert_eq!(
        std::fs::read(dir.path().join("ledger.json")).unwrap(),
        std::fs::read(clean.path().join("ledger.json")).unwrap()
    );
}

#[test]
fn rerun_reuses_cached_probes() {
    let corpus = corpus();
    let world = ScriptedWorld::demo();
    let dir = tempfile::tempdir().unwrap();
    let backend = world.backend(&corpus, 3).unwrap();
    let first = Pipeline::new(config("c"), &corpus, &backend, &world.trainer, dir.path()).run().unwrap();
    let calls = backend.calls();
    let second = Pipeline::new(config("c"), &corpus, &backend, &world.trainer, dir.path()).run().unwrap();
    assert_eq!(first, second);
    assert_eq!(backend.calls(), calls, "a complete rerun should not query the backend");
}

#[test]
fn locked_run_directory_is_refused() {
    let corpus = corpus();
    let world = ScriptedWorld::demo();
    let dir = tempfile::tempdir().unwrap();
    let _held = RunLock::acquire(dir.path()).unwrap();
    let err = run(&world, &corpus, config("l"), dir.path()).unwrap_err();
    assert!(matches!(err, Error::RunLocked(_)), "{err}");
    assert_eq!(err.kind().exit_code(), 5);
}

#[test]
fn strategy_s2_excludes_initially_weak_pairs() {
    let corpus = corpus();
    let world = ScriptedWorld::demo();
    let dir = tempfile::tempdir().unwrap();
    let cfg = PipelineConfig { strategy: Strategy::S2, ..config("s2") };
    let ledger = run(&world, &corpus, cfg, dir.path()).unwrap();
    assert_eq!(ledger.stage("stage2").unwrap().strategy, Strategy::S2);
    let snap0 = ClassificationSnapshot::load(&dir.path().join("snapshots/origin.jsonl")).unwrap();
    let spec = knowprobe::curriculum::load(&dir.path().join("curricula/stage2.jsonl")).unwrap();
    assert!(!spec.member_ids.is_empty());
    for id in &spec.member_ids {
        let label = snap0.label(id).unwrap();
        assert!(!matches!(label, KnowledgeClass::WeaklyKnown | KnowledgeClass::Unknown), "{id} was {label}");
    }
    assert!(spec.replay_pool_ids.is_empty());
}

#[test]
fn rounds_stop_on_cap_or_stall() {
    let corpus = corpus();
    let world = ScriptedWorld::demo();

    let one = tempfile::tempdir().unwrap();
    let ledger = run(&world, &corpus, config("m1"), one.path()).unwrap();
    assert_eq!(ledger.stages.len(), 2);

    // every round strictly better than the last
    let mut climbing = world.clone();
    for (stage, skill) in [("stage2", 0.70), ("stage2-round2", 0.82), ("stage2-round3", 0.95)] {
        climbing.trainer.stages.get_mut(stage).unwrap().skills = vec![skill];
    }
    let dir = tempfile::tempdir().unwrap();
    let cfg = PipelineConfig { max_rounds: 3, ..config("m3") };
    let ledger = run(&climbing, &corpus, cfg, dir.path()).unwrap();
    let names: Vec<&str> = ledger.stages.iter().map(|s| s.name.as_str()).collect();
    assert_eq!(names, ["stage1", "stage2", "stage2-round2", "stage2-round3"]);
    assert_eq!(ledger.stop_reason, Some(StopReason::MaxRounds));
    let trajectory = ledger.accuracy_trajectory();
    assert!(trajectory.windows(2).skip(1).all(|w| w[1] > w[0]), "{trajectory:?}");
    assert_eq!(
        ledger.stage("stage2-round2").unwrap().resume_from.as_deref(),
        ledger.stage("stage2").unwrap().checkpoint.as_deref()
    );
}

#[test]
fn fresh_adapter_does_not_resume() {
    let corpus = corpus();
    let world = ScriptedWorld::demo();
    let dir = tempfile::tempdir().unwrap();
    let ledger = run(&world, &corpus, PipelineConfig { fresh_adapter: true, ..config("f") }, dir.path()).unwrap();
    assert_eq!(ledger.stage("stage2").unwrap().resume_from, None);

    let other = tempfile::tempdir().unwrap();
    let ledger = run(&world, &corpus, config("f"), other.path()).unwrap();
    assert_eq!(ledger.stage("stage2").unwrap().resume_from, ledger.stage("stage1").unwrap().checkpoint);
}

#[test]
fn permanent_backend_failures_leave_pairs_pending() {
    let corpus = synthetic_corpus(40, 0, 9).unwrap();
    let victim = corpus.pairs()[3].id.clone();
    let policy = AnswerPolicy::uniform(QaRule::AlwaysCorrect, 1).failing(&format!(":{victim}$"));
    let backend = MockBackend::new(&corpus, policy).unwrap();
    let config = ProbeConfig {
        retry: knowprobe::probe::RetryPolicy::immediate(2),
        ..ProbeConfig::new("m", 42)
    };
    let dir = tempfile::tempdir().unwrap();
    let options = CampaignOptions {
        parallelism: 4,
        checkpoint: Some(dir.path().join("cp.jsonl")),
        ..Default::default()
    };
    match run_campaign(&corpus, &corpus, &config, &backend, &options) {
        Err(Error::CampaignIncomplete { pending, cause }) => {
            assert_eq!(pending, vec![victim]);
            assert!(cause.is_some());
        }
        other => panic!("expected an incomplete campaign, got {other:?}"),
    }
    let saved = knowprobe::probe::CampaignCheckpoint::load(&dir.path().join("cp.jsonl")).unwrap();
    assert_eq!(saved.completed.len(), corpus.len() - 1);
}

#[test]
fn http_pipeline_matches_in_process() {
    let corpus = corpus();
    let world = ScriptedWorld::demo();
    let local = tempfile::tempdir().unwrap();
    let expected = run(&world, &corpus, config("h"), local.path()).unwrap();

    let server = MockServer::start(Arc::new(world.backend(&corpus, 3).unwrap())).unwrap();
    let http = HttpBackend::new(server.base_url(), None).mock_endpoint();
    let remote = tempfile::tempdir().unwrap();
    let ledger = Pipeline::new(config("h"), &corpus, &http, &world.trainer, remote.path()).run().unwrap();
    assert_eq!(ledger, expected);
}
