// Re-probes the same mock model with two seeds and compares the label churn
// against the exact class probabilities of the Bernoulli rule.

use knowprobe::analytics::{aggregate_counts, noise_baseline, render_matrix, row_churn};
use knowprobe::mock::{bernoulli_class_probabilities, AnswerPolicy, MockBackend, QaRule};
use knowprobe::model::{validate_corpus, QaPair};
use knowprobe::pipeline::probe_and_classify;
use knowprobe::probe::ProbeConfig;

pub fn run_example() -> knowprobe::Result<String> {
    let corpus = validate_corpus(
        (0..400)
            .map(|i| QaPair::new(format!("n{i:04}"), format!("Question {i}?"), &[&format!("answer {i}")]))
            .collect(),
    )?;
    let (p, q) = (0.9, 0.05);
    let backend = MockBackend::new(&corpus, AnswerPolicy::uniform(QaRule::Bernoulli { greedy: p, sampled: q }, 11))?;
    let first = probe_and_classify(&corpus, &corpus, &ProbeConfig::new("m", 1), &backend, 8, None)?;
    let second = probe_and_classify(&corpus, &corpus, &ProbeConfig::new("m", 2), &backend, 8, None)?;
    let matrix = noise_baseline(&first, &second)?;

    let expected = bernoulli_class_probabilities(p, q, 10, 160);
    let counts = aggregate_counts(&first, false);
    let mut out = String::from("label         observed  expected\n");
    for (label, (n, e)) in counts.labels.iter().zip(counts.counts.iter().zip(expected)) {
        out.push_str(&format!("{label:<12} {:>9.3} {:>9.3}\n", *n as f64 / 400.0, e));
    }
    out.push('\n');
    out.push_str(&render_matrix(&matrix));
    for r in row_churn(&matrix) {
        out.push_str(&format!("{} churn {:.1}%\n", r.label, 100.0 * r.fraction));
    }
    Ok(out)
}

fn main() -> knowprobe::Result<()> {
    print!("{}", run_example()?);
    Ok(())
}
