// Writes a stage directory, runs the scripted trainer against it and picks
// the best epoch from per-epoch accuracies.

use std::time::Duration;

use knowprobe::model::{validate_corpus, CurriculumSpec, QaPair, ReplayBase, Strategy, TrainerConfig};
use knowprobe::pipeline::trainer::{train_stage, ScriptedTrainer, StageScript, TrainerManifest};
use knowprobe::Error;

pub fn run_example() -> knowprobe::Result<String> {
    let corpus = validate_corpus(
        (0..8)
            .map(|i| QaPair::new(format!("t{i}"), format!("Question {i}?"), &[&format!("answer {i}")]))
            .collect(),
    )?;
    let spec = CurriculumSpec {
        strategy: Strategy::Stage1MaybeKnown,
        replay_ratio: 0.0,
        replay_base: ReplayBase::Pool,
        seed: 42,
        member_ids: (0..8).map(|i| format!("t{i}")).collect(),
        replay_pool_ids: Vec::new(),
        snapshot_digests: Vec::new(),
    };
    let config = TrainerConfig {
        max_epochs: 3,
        ..TrainerConfig::stage1()
    };
    let manifest = TrainerManifest::build(&spec, &corpus, config, None, "example-eval-set")?;
    let trainer = ScriptedTrainer {
        stages: [("stage1".to_string(), StageScript { skills: vec![0.5], fail_after: None })].into(),
        epoch_delay_ms: 5,
    };

    let dir = tempfile::tempdir().map_err(|e| Error::Config(e.to_string()))?;
    let accuracies = [0.301, 0.325, 0.320];
    let mut hook = |epoch: u32, _checkpoint: &str| Ok(accuracies[epoch as usize - 1]);
    let stage = train_stage(&dir.path().join("stage1"), &manifest, &trainer, &mut hook, Duration::from_millis(2))?;

    let mut out = String::new();
    for e in &stage.epochs {
        out.push_str(&format!("epoch {} {} {:.1}\n", e.epoch, e.checkpoint, 100.0 * e.accuracy));
    }
    out.push_str(&format!("best epoch {} -> {}\n", stage.best_epoch, stage.checkpoint));
    Ok(out)
}

fn main() -> knowprobe::Result<()> {
    print!("{}", run_example()?);
    Ok(())
}
