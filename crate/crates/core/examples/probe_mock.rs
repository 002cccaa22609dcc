// Probes three pairs against the scripted mock and labels them.
//
// One pair is right in 3 of 10 greedy rounds, one only in 1 of 160 samples,
// and one never.

use std::collections::HashMap;

use knowprobe::classify::snapshot;
use knowprobe::mock::{AnswerPolicy, MockBackend, QaRule};
use knowprobe::model::{validate_corpus, QaPair};
use knowprobe::probe::{run_campaign, CampaignOptions, ProbeConfig};

pub fn run_example() -> knowprobe::Result<String> {
    let mut pairs = vec![
        QaPair::new("mk", "Who wrote Hamlet?", &["Shakespeare"]),
        QaPair::new("wk", "Who painted Guernica?", &["Picasso"]),
        QaPair::new("unk", "Who founded Carthage?", &["Dido"]),
    ];
    for i in 0..5 {
        pairs.push(QaPair::new(format!("pad{i}"), format!("Filler question {i}?"), &[&format!("f{i}")]));
    }
    let corpus = validate_corpus(pairs)?;

    let mut greedy = vec![false; 10];
    greedy[..3].fill(true);
    let mut sampled = vec![0u32; 10];
    sampled[4] = 1;
    let policy = AnswerPolicy::uniform(QaRule::NeverCorrect, 1)
        .with_rule("mk", QaRule::Scripted { greedy, sampled: vec![0; 10] })
        .with_rule("wk", QaRule::Scripted { greedy: vec![false; 10], sampled });
    let backend = MockBackend::new(&corpus, policy)?;

    let config = ProbeConfig::new("demo-model", 42);
    let outcomes = run_campaign(&corpus, &corpus, &config, &backend, &CampaignOptions::with_parallelism(4))?;
    let outcomes: HashMap<_, _> = outcomes.into_iter().collect();
    let snap = snapshot(&corpus, &outcomes, "demo-model", "example", 42)?;

    let mut out = String::new();
    for id in ["mk", "wk", "unk"] {
        let o = &outcomes[id];
        out.push_str(&format!(
            "{id:<4} greedy {}/{} sampled {}/{} -> {}\n",
            o.greedy_correct, o.greedy_total, o.sampled_correct, o.sampled_total, snap.labels[id]
        ));
    }
    out.push_str(&format!("backend calls: {}\n", backend.calls()));
    Ok(out)
}

fn main() -> knowprobe::Result<()> {
    print!("{}", run_example()?);
    Ok(())
}
