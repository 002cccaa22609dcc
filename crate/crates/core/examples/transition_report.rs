// Transition matrices, counts and HighlyKnown gains for the engineered Qwen2 run.

use knowprobe::analytics::TransitionReport;
use knowprobe::fixtures;

pub fn run_example() -> knowprobe::Result<String> {
    let run = fixtures::qwen2();
    let stage1 = TransitionReport::build(&run.snap0, &run.snap1, None, None)?;
    let snap2 = run.snap2.as_ref().expect("qwen2 has a second stage");
    let stage2 = TransitionReport::build(&run.snap1, snap2, Some(&run.snap0), None)?;
    Ok(format!("== stage 1 ==\n{}\n== stage 2 ==\n{}", stage1.render(), stage2.render()))
}

fn main() -> knowprobe::Result<()> {
    print!("{}", run_example()?);
    Ok(())
}
