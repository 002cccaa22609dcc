// A complete two-stage run on the synthetic world: probe, stage 1, re-probe,
// stage 2 with S5 replay, re-probe, reports.

use knowprobe::model::TrainerConfig;
use knowprobe::pipeline::world::{synthetic_corpus, ScriptedWorld};
use knowprobe::pipeline::{Pipeline, PipelineConfig};
use knowprobe::Error;

pub fn run_example() -> knowprobe::Result<String> {
    let corpus = synthetic_corpus(240, 80, 1)?;
    let world = ScriptedWorld::demo();
    let backend = world.backend(&corpus, 3)?;
    let config = PipelineConfig {
        run_id: "two-stage-demo".into(),
        base_model: world.base_model.clone(),
        stage1: TrainerConfig { max_epochs: 3, ..TrainerConfig::stage1() },
        poll_interval_ms: 1,
        noise_baseline: true,
        origin_breakdown: true,
        ..PipelineConfig::default()
    };
    let dir = tempfile::tempdir().map_err(|e| Error::Config(e.to_string()))?;
    let pipeline = Pipeline::new(config, &corpus, &backend, &world.trainer, dir.path());
    let ledger = pipeline.run()?;
    let summary = knowprobe::io::read_to_string(&pipeline.report_path("summary"))?;
    let stage2 = knowprobe::io::read_to_string(&pipeline.report_path("stage2"))?;
    Ok(format!("{summary}\n{stage2}\nstatus {:?}\n", ledger.status))
}

fn main() -> knowprobe::Result<()> {
    print!("{}", run_example()?);
    Ok(())
}
