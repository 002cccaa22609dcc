// Builds the stage-1 set and every stage-2 strategy on snapshots engineered
// to match the published Qwen2 label counts.

use knowprobe::curriculum::{replay_count, stage1_dataset, stage2_dataset, DEFAULT_REPLAY_RATIO};
use knowprobe::fixtures;
use knowprobe::model::Strategy;

pub fn run_example() -> knowprobe::Result<String> {
    let run = fixtures::qwen2();
    let stage1 = stage1_dataset(&run.snap0, &run.corpus, 42)?;
    let mut out = format!("stage1 members {}\n", stage1.member_ids.len());
    for strategy in [Strategy::S1, Strategy::S2, Strategy::S3, Strategy::S4, Strategy::S5] {
        let spec = stage2_dataset(strategy, &run.snap0, &run.snap1, &run.corpus, 42, DEFAULT_REPLAY_RATIO)?;
        out.push_str(&format!(
            "{strategy} members {} replay pool {} replay per epoch {}\n",
            spec.member_ids.len(),
            spec.replay_pool_ids.len(),
            replay_count(&spec)
        ));
    }
    Ok(out)
}

fn main() -> knowprobe::Result<()> {
    print!("{}", run_example()?);
    Ok(())
}
