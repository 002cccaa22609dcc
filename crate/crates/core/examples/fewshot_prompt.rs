// Builds a 4-shot prompt from same-pattern exemplars and scores two outputs.

use knowprobe::model::{validate_corpus, QaPair, PATTERN_TAG};
use knowprobe::probe::{prompt_rng, Mode};
use knowprobe::prompt::{build_fewshot_prompt, match_answer, ExemplarPool, MatcherPolicy};

pub fn run_example() -> knowprobe::Result<String> {
    let capitals = [
        ("France", "Paris"),
        ("Japan", "Tokyo"),
        ("Kenya", "Nairobi"),
        ("Peru", "Lima"),
        ("Chile", "Santiago"),
        ("Egypt", "Cairo"),
    ];
    let pairs = capitals
        .iter()
        .enumerate()
        .map(|(i, (country, city))| {
            QaPair::new(format!("cap{i}"), format!("What is the capital of {country}?"), &[city])
                .with_meta(PATTERN_TAG, "capital")
        })
        .collect();
    let corpus = validate_corpus(pairs)?;
    let pool = ExemplarPool::new(corpus.pairs());
    let target = corpus.get("cap5").expect("target exists");
    let mut rng = prompt_rng(42, &target.id, Mode::Greedy, 0);
    let prompt = build_fewshot_prompt(target, pool.eligible(target, 4), 4, &mut rng)?.render();

    let policy = MatcherPolicy::default();
    let mut out = prompt.clone();
    out.push('\n');
    for output in ["  the answer is CAIRO.", "Alexandria"] {
        out.push_str(&format!("{output:?} correct: {}\n", match_answer(output, target, &policy)));
    }
    Ok(out)
}

fn main() -> knowprobe::Result<()> {
    print!("{}", run_example()?);
    Ok(())
}
