// Every example runs and prints what it promises.

#[allow(dead_code)]
mod classify_estimates {
    include!(concat!(env!("CARGO_MANIFEST_DIR"), "/examples/classify_estimates.rs"));
}

#[test]
fn classify_estimates_runs() {
    let out = classify_estimates::run_example().expect("classify_estimates");
    assert!(out.contains("-> HighlyKnown"), "{out}");
    assert!(out.contains("-> MaybeKnown"), "{out}");
    assert!(out.contains("-> WeaklyKnown"), "{out}");
    assert!(out.contains("-> Unknown"), "{out}");
}

#[allow(dead_code)]
mod fewshot_prompt {
    include!(concat!(env!("CARGO_MANIFEST_DIR"), "/examples/fewshot_prompt.rs"));
}

#[test]
fn fewshot_prompt_runs() {
    let out = fewshot_prompt::run_example().expect("fewshot_prompt");
    assert!(out.contains("Q: "), "{out}");
    assert!(out.contains("A: "), "{out}");
}

#[allow(dead_code)]
mod probe_mock {
    include!(concat!(env!("CARGO_MANIFEST_DIR"), "/examples/probe_mock.rs"));
}

#[test]
fn probe_mock_runs() {
    let out = probe_mock::run_example().expect("probe_mock");
    assert!(out.contains("mk   greedy 3/10"), "{out}");
    assert!(out.contains("-> MaybeKnown"), "{out}");
    assert!(out.contains("-> WeaklyKnown"), "{out}");
    assert!(out.contains("-> Unknown"), "{out}");
}

#[allow(dead_code)]
mod probe_http {
    include!(concat!(env!("CARGO_MANIFEST_DIR"), "/examples/probe_http.rs"));
}

#[test]
fn probe_http_runs() {
    let out = probe_http::run_example().expect("probe_http");
    assert!(out.contains("identical to in-process mock: true"), "{out}");
}

#[allow(dead_code)]
mod resume_campaign {
    include!(concat!(env!("CARGO_MANIFEST_DIR"), "/examples/resume_campaign.rs"));
}

#[test]
fn resume_campaign_runs() {
    let out = resume_campaign::run_example().expect("resume_campaign");
    assert!(out.contains("first run incomplete: true"), "{out}");
    assert!(out.contains("resumed equals uninterrupted: true"), "{out}");
}

#[allow(dead_code)]
mod curate_stages {
    include!(concat!(env!("CARGO_MANIFEST_DIR"), "/examples/curate_stages.rs"));
}

#[test]
fn curate_stages_runs() {
    let out = curate_stages::run_example().expect("curate_stages");
    assert!(out.contains("stage1 members 36897"), "{out}");
    assert!(out.contains("s1 members 18733"), "{out}");
    assert!(out.contains("s2 members 13844"), "{out}");
    assert!(out.contains("s3 members 14781"), "{out}");
    assert!(out.contains("s4 members 20665"), "{out}");
    assert!(out.contains("replay pool 49959 replay per epoch 9991"), "{out}");
}

#[allow(dead_code)]
mod replay_mix {
    include!(concat!(env!("CARGO_MANIFEST_DIR"), "/examples/replay_mix.rs"));
}

#[test]
fn replay_mix_runs() {
    let out = replay_mix::run_example().expect("replay_mix");
    assert!(out.contains("replay per epoch: 2"), "{out}");
    assert!(out.contains("epoch 3:"), "{out}");
}

#[allow(dead_code)]
mod transition_report {
    include!(concat!(env!("CARGO_MANIFEST_DIR"), "/examples/transition_report.rs"));
}

#[test]
fn transition_report_runs() {
    let out = transition_report::run_example().expect("transition_report");
    assert!(out.contains("27282"), "{out}");
    assert!(out.contains("relative gain: 7.47%"), "{out}");
    assert!(out.contains("incremental gain: 24.03%"), "{out}");
}

#[allow(dead_code)]
mod noise_baseline {
    include!(concat!(env!("CARGO_MANIFEST_DIR"), "/examples/noise_baseline.rs"));
}

#[test]
fn noise_baseline_runs() {
    let out = noise_baseline::run_example().expect("noise_baseline");
    assert!(out.contains("HighlyKnown churn"), "{out}");
}

#[allow(dead_code)]
mod entity_graph {
    include!(concat!(env!("CARGO_MANIFEST_DIR"), "/examples/entity_graph.rs"));
}

#[test]
fn entity_graph_runs() {
    let out = entity_graph::run_example().expect("entity_graph");
    assert!(out.contains("Initial Reclassified LinkedReclassified\n2 4 2\n"), "{out}");
}

#[allow(dead_code)]
mod trainer_contract {
    include!(concat!(env!("CARGO_MANIFEST_DIR"), "/examples/trainer_contract.rs"));
}

#[test]
fn trainer_contract_runs() {
    let out = trainer_contract::run_example().expect("trainer_contract");
    assert!(out.contains("best epoch 2 -> stage1/epoch2"), "{out}");
}

#[allow(dead_code)]
mod two_stage_pipeline {
    include!(concat!(env!("CARGO_MANIFEST_DIR"), "/examples/two_stage_pipeline.rs"));
}

#[test]
fn two_stage_pipeline_runs() {
    let out = two_stage_pipeline::run_example().expect("two_stage_pipeline");
    assert!(out.contains("stopped: max rounds"), "{out}");
    assert!(out.contains("status Complete"), "{out}");
}

#[allow(dead_code)]
mod multi_round {
    include!(concat!(env!("CARGO_MANIFEST_DIR"), "/examples/multi_round.rs"));
}

#[test]
fn multi_round_runs() {
    let out = multi_round::run_example().expect("multi_round");
    assert!(out.contains("stage2-round2"), "{out}");
    assert!(out.contains("stopped: no improvement"), "{out}");
}

#[allow(dead_code)]
mod cli_config {
    include!(concat!(env!("CARGO_MANIFEST_DIR"), "/examples/cli_config.rs"));
}

#[test]
fn cli_config_runs() {
    let out = cli_config::run_example().expect("cli_config");
    assert!(out.contains("round trip ok: true"), "{out}");
    assert!(out.contains("version = 1"), "{out}");
}
