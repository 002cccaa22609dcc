// Runs a probe campaign over HTTP against the mock server.

use std::sync::Arc;

use knowprobe::mock::{AnswerPolicy, MockBackend, MockServer, QaRule};
use knowprobe::pipeline::world::synthetic_corpus;
use knowprobe::probe::{run_campaign, CampaignOptions, HttpBackend, ProbeConfig, RetryPolicy};

pub fn run_example() -> knowprobe::Result<String> {
    let corpus = synthetic_corpus(24, 0, 5)?;
    let policy = AnswerPolicy::uniform(QaRule::Bernoulli { greedy: 0.5, sampled: 0.2 }, 9);
    let server = MockServer::start(Arc::new(MockBackend::new(&corpus, policy)?))?;
    let client = HttpBackend::new(server.base_url(), None).mock_endpoint();

    let mut config = ProbeConfig::new("remote-model", 42);
    config.retry = RetryPolicy::immediate(3);
    let over_http = run_campaign(&corpus, &corpus, &config, &client, &CampaignOptions::with_parallelism(8))?;

    let local = MockBackend::new(&corpus, AnswerPolicy::uniform(QaRule::Bernoulli { greedy: 0.5, sampled: 0.2 }, 9))?;
    let in_process = run_campaign(&corpus, &corpus, &config, &local, &CampaignOptions::default())?;

    Ok(format!(
        "endpoint {}\nprobed {} pairs; identical to in-process mock: {}\n",
        client.endpoint(),
        over_http.len(),
        over_http == in_process
    ))
}

fn main() -> knowprobe::Result<()> {
    print!("{}", run_example()?);
    Ok(())
}
