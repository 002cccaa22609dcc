// Shows how each epoch mixes curriculum members with a fresh replay sample.

use knowprobe::curriculum::{replay_count, replay_epoch_mix};
use knowprobe::model::{CurriculumSpec, ReplayBase, Strategy};

pub fn run_example() -> knowprobe::Result<String> {
    let spec = CurriculumSpec {
        strategy: Strategy::S5,
        replay_ratio: 0.2,
        replay_base: ReplayBase::Pool,
        seed: 42,
        member_ids: (0..6).map(|i| format!("m{i}")).collect(),
        replay_pool_ids: (0..10).map(|i| format!("hk{i}")).collect(),
        snapshot_digests: Vec::new(),
    };
    spec.validate()?;
    let mut out = format!("replay per epoch: {}\n", replay_count(&spec));
    for epoch in 1..=3 {
        out.push_str(&format!("epoch {epoch}: {}\n", replay_epoch_mix(&spec, epoch).join(" ")));
    }
    Ok(out)
}

fn main() -> knowprobe::Result<()> {
    print!("{}", run_example()?);
    Ok(())
}
