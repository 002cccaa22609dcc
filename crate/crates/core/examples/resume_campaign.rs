// Interrupts a campaign part way, then resumes it from the checkpoint file.

use knowprobe::mock::{AnswerPolicy, MockBackend, QaRule};
use knowprobe::pipeline::world::synthetic_corpus;
use knowprobe::probe::{run_campaign, CampaignCheckpoint, CampaignOptions, ProbeConfig};
use knowprobe::Error;

pub fn run_example() -> knowprobe::Result<String> {
    let dir = tempfile::tempdir().map_err(|e| Error::Config(e.to_string()))?;
    let path = dir.path().join("campaign.jsonl");
    let corpus = synthetic_corpus(60, 0, 2)?;
    let backend = MockBackend::new(&corpus, AnswerPolicy::uniform(QaRule::Bernoulli { greedy: 0.6, sampled: 0.3 }, 4))?;
    let config = ProbeConfig::new("m", 42);

    let interrupted = CampaignOptions {
        parallelism: 4,
        checkpoint: Some(path.clone()),
        checkpoint_every: 5,
        stop_after: Some(25),
    };
    let first = run_campaign(&corpus, &corpus, &config, &backend, &interrupted);
    let saved = CampaignCheckpoint::load(&path)?.completed.len();
    let calls_before = backend.calls();

    let resume = CampaignOptions {
        parallelism: 4,
        checkpoint: Some(path),
        ..Default::default()
    };
    let resumed = run_campaign(&corpus, &corpus, &config, &backend, &resume)?;
    let calls_to_finish = backend.calls() - calls_before;
    let fresh = run_campaign(&corpus, &corpus, &config, &backend, &CampaignOptions::default())?;

    Ok(format!(
        "first run incomplete: {}\nsaved outcomes: {saved}\ncalls to finish: {}\nresumed equals uninterrupted: {}\n",
        matches!(first, Err(Error::CampaignIncomplete { .. })),
        calls_to_finish,
        resumed == fresh
    ))
}

fn main() -> knowprobe::Result<()> {
    print!("{}", run_example()?);
    Ok(())
}
