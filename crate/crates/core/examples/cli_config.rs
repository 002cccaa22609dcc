// Writes a corpus, a mock policy and a run configuration that the
// `knowprobe` binary can use directly:
//
// ```text
// cargo run --example cli_config -- demo-run
// knowprobe --config demo-run/run.toml pipeline
// ```

use std::path::Path;

use knowprobe::config::{FileConfig, CONFIG_VERSION};
use knowprobe::model::TrainerConfig;
use knowprobe::pipeline::world::{synthetic_corpus, ScriptedWorld};
use knowprobe::pipeline::PipelineConfig;
use knowprobe::{io, Error};

/// Writes `corpus.jsonl` and `run.toml` into `dir`; returns the TOML text.
pub fn write_demo(dir: &Path) -> knowprobe::Result<String> {
    let corpus = synthetic_corpus(160, 40, 3)?;
    corpus.save(&dir.join("corpus.jsonl"))?;
    let world = ScriptedWorld::demo();
    let mut config = FileConfig {
        version: CONFIG_VERSION,
        corpus: Some("corpus.jsonl".into()),
        out_dir: Some("out".into()),
        pipeline: PipelineConfig {
            run_id: "cli-demo".into(),
            base_model: world.base_model.clone(),
            stage1: TrainerConfig { max_epochs: 3, ..TrainerConfig::stage1() },
            poll_interval_ms: 1,
            ..PipelineConfig::default()
        },
        ..FileConfig::default()
    };
    config.backend.mock = Some(world.policy(3));
    config.trainer.scripted = Some(world.trainer.clone());
    let text = config.to_toml()?;
    io::write_atomic(&dir.join("run.toml"), text.as_bytes())?;
    Ok(text)
}

pub fn run_example() -> knowprobe::Result<String> {
    let dir = tempfile::tempdir().map_err(|e| Error::Config(e.to_string()))?;
    let text = write_demo(dir.path())?;
    let parsed = FileConfig::load(&dir.path().join("run.toml"))?;
    Ok(format!("{text}\nround trip ok: {}\n", parsed.pipeline.run_id == "cli-demo"))
}

fn main() -> knowprobe::Result<()> {
    match std::env::args().nth(1) {
        Some(dir) => {
            io::create_dir_all(Path::new(&dir))?;
            write_demo(Path::new(&dir))?;
            println!("wrote {dir}/corpus.jsonl and {dir}/run.toml");
        }
        None => print!("{}", run_example()?),
    }
    Ok(())
}
