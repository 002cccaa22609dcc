// Repeats the second stage until max accuracy stops improving by 0.05 points.

use knowprobe::model::TrainerConfig;
use knowprobe::pipeline::world::{synthetic_corpus, ScriptedWorld};
use knowprobe::pipeline::{format_accuracy, Pipeline, PipelineConfig};
use knowprobe::Error;

pub fn run_example() -> knowprobe::Result<String> {
    let corpus = synthetic_corpus(240, 80, 1)?;
    let world = ScriptedWorld::demo();
    let backend = world.backend(&corpus, 3)?;
    let config = PipelineConfig {
        run_id: "multi-round-demo".into(),
        base_model: world.base_model.clone(),
        stage1: TrainerConfig { max_epochs: 3, ..TrainerConfig::stage1() },
        max_rounds: 5,
        poll_interval_ms: 1,
        ..PipelineConfig::default()
    };
    let dir = tempfile::tempdir().map_err(|e| Error::Config(e.to_string()))?;
    let ledger = Pipeline::new(config, &corpus, &backend, &world.trainer, dir.path()).run()?;
    let mut out = String::new();
    for stage in &ledger.stages {
        out.push_str(&format!(
            "{:<14} max {} best epoch {}\n",
            stage.name,
            stage.max_accuracy.map(format_accuracy).unwrap_or_default(),
            stage.best_epoch.unwrap_or(0)
        ));
    }
    let reason = ledger.stop_reason.map(|r| r.as_str()).unwrap_or("none");
    out.push_str(&format!("stopped: {reason}\n"));
    Ok(out)
}

fn main() -> knowprobe::Result<()> {
    print!("{}", run_example()?);
    Ok(())
}
