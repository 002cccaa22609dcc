// Labels a few probe outcomes and shows the coarse grouping.

use knowprobe::classify::{classify, coarsen};
use knowprobe::model::ProbeOutcome;
use knowprobe::probe::estimate;

pub fn run_example() -> knowprobe::Result<String> {
    let outcomes = [
        ProbeOutcome::new("always", (10, 10), (160, 160)),
        ProbeOutcome::new("sometimes", (3, 10), (40, 160)),
        ProbeOutcome::new("only-sampled", (0, 10), (1, 160)),
        ProbeOutcome::new("never", (0, 10), (0, 160)),
    ];
    let mut out = String::new();
    for o in &outcomes {
        let est = estimate(o)?;
        let class = classify(&est);
        out.push_str(&format!(
            "{:<13} greedy {:>5} sampled {:>6} -> {} ({})\n",
            o.qa_id,
            est.p_greedy.to_string(),
            est.p_sampled.to_string(),
            class,
            coarsen(class)
        ));
    }
    Ok(out)
}

fn main() -> knowprobe::Result<()> {
    print!("{}", run_example()?);
    Ok(())
}
