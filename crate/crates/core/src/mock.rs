//! Deterministic scripted inference backend.
//!
//! The mock reads the request id from the tag line that probe prompts carry
//! when the backend asks for it, looks up the target pair, and answers with the
//! canonical answer whenever the pair's rule fires, otherwise with a fixed
//! distractor. Every random draw is keyed on `(seed, model, request id, sample)`
//! (the latent rule leaves out the model), so responses do not depend on call
//! order or concurrency.

use std::collections::{BTreeMap, HashMap};
use std::net::SocketAddr;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::thread::JoinHandle;

use regex::Regex;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::model::Corpus;
use crate::probe::{read_prompt_tag, Backend, BackendError, GenerationRequest, RequestId};

pub const DISTRACTOR: &str = "[no answer]";

/// How one pair is answered.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case")]
pub enum QaRule {
    AlwaysCorrect,
    NeverCorrect,
    /// Each greedy generation is right with probability `greedy`, each sampled one with `sampled`.
    Bernoulli { greedy: f64, sampled: f64 },
    /// `greedy[r]` decides greedy round `r`; `sampled[r]` is how many of round `r`'s samples are right.
    Scripted { greedy: Vec<bool>, sampled: Vec<u32> },
    /// Correctness probability falls with the pair's hidden difficulty and rises with model skill.
    /// Draws are shared across models, so raising skill never turns a right answer wrong.
    Latent,
}

/// Skill-versus-difficulty world used by `QaRule::Latent`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatentWorld {
    pub skills: BTreeMap<String, f64>,
    pub default_skill: f64,
    pub sharpness: f64,
    /// Extra log-odds that sampled decoding gets over greedy.
    pub sampling_lift: f64,
}

impl Default for LatentWorld {
    fn default() -> Self {
        LatentWorld {
            skills: BTreeMap::new(),
            default_skill: 0.5,
            sharpness: 10.0,
            sampling_lift: 2.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnswerPolicy {
    pub seed: u64,
    pub default_rule: QaRule,
    #[serde(default)]
    pub rules: BTreeMap<String, QaRule>,
    #[serde(default)]
    pub latent: LatentWorld,
    /// Requests whose id matches this regex fail as unavailable.
    #[serde(default)]
    pub fail_pattern: Option<String>,
}

impl AnswerPolicy {
    pub fn uniform(rule: QaRule, seed: u64) -> Self {
        AnswerPolicy {
            seed,
            default_rule: rule,
            rules: BTreeMap::new(),
            latent: LatentWorld::default(),
            fail_pattern: None,
        }
    }

    pub fn with_rule(mut self, qa_id: &str, rule: QaRule) -> Self {
        self.rules.insert(qa_id.to_string(), rule);
        self
    }

    pub fn failing(mut self, pattern: &str) -> Self {
        self.fail_pattern = Some(pattern.to_string());
        self
    }

    pub fn validate(&self) -> Result<()> {
        for rule in std::iter::once(&self.default_rule).chain(self.rules.values()) {
            if let QaRule::Bernoulli { greedy, sampled } = rule {
                if !(0.0..=1.0).contains(greedy) || !(0.0..=1.0).contains(sampled) {
                    return Err(Error::Config("bernoulli probabilities must lie in [0, 1]".into()));
                }
            }
        }
        Ok(())
    }
}

pub struct MockBackend {
    answers: HashMap<String, String>,
    policy: AnswerPolicy,
    fail: Option<Regex>,
    calls: AtomicU64,
}

impl MockBackend {
    pub fn new(corpus: &Corpus, policy: AnswerPolicy) -> Result<Self> {
        policy.validate()?;
        let fail = policy
            .fail_pattern
            .as_deref()
            .map(Regex::new)
            .transpose()
            .map_err(|e| Error::Config(format!("bad fail pattern: {e}")))?;
        Ok(MockBackend {
            answers: corpus
                .pairs()
                .iter()
                .map(|p| (p.id.clone(), p.canonical_answer().to_string()))
                .collect(),
            policy,
            fail,
            calls: AtomicU64::new(0),
        })
    }

    pub fn calls(&self) -> u64 {
        self.calls.load(Ordering::Relaxed)
    }

    pub fn policy(&self) -> &AnswerPolicy {
        &self.policy
    }

    fn uniform(&self, parts: &[&str]) -> f64 {
        let mut h = Sha256::new();
        h.update(self.policy.seed.to_le_bytes());
        for p in parts {
            h.update(p.as_bytes());
            h.update([0u8]);
        }
        let bytes: [u8; 32] = h.finalize().into();
        let x = u64::from_le_bytes(bytes[..8].try_into().expect("8 bytes"));
        (x >> 11) as f64 / (1u64 << 53) as f64
    }

    fn fires(&self, model: &str, greedy: bool, rid: &RequestId, raw_id: &str, j: u32) -> bool {
        let rule = self
            .policy
            .rules
            .get(&rid.qa_id)
            .unwrap_or(&self.policy.default_rule);
        let draw = || self.uniform(&[model, raw_id, &j.to_string()]);
        match rule {
            QaRule::AlwaysCorrect => true,
            QaRule::NeverCorrect => false,
            QaRule::Bernoulli { greedy: p, sampled: q } => draw() < if greedy { *p } else { *q },
            QaRule::Scripted { greedy: g, sampled: s } => {
                let round = rid.round as usize;
                if greedy {
                    g.get(round).copied().unwrap_or(false)
                } else {
                    let index = rid.sample.unwrap_or(0) + j;
                    index < s.get(round).copied().unwrap_or(0)
                }
            }
            QaRule::Latent => {
                let world = &self.policy.latent;
                let skill = world.skills.get(model).copied().unwrap_or(world.default_skill);
                let difficulty = self.uniform(&["difficulty", &rid.qa_id]);
                let mut logit = (skill - difficulty) * world.sharpness;
                if !greedy {
                    logit += world.sampling_lift;
                }
                // shared draws across models: a more skilled model answers a superset
                let shared = self.uniform(&["latent", raw_id, &j.to_string()]);
                shared < 1.0 / (1.0 + (-logit).exp())
            }
        }
    }

    /// Answers one request. `n` texts, each the canonical answer or the distractor.
    pub fn serve(&self, request: &GenerationRequest) -> std::result::Result<Vec<String>, BackendError> {
        self.calls.fetch_add(1, Ordering::Relaxed);
        let raw_id = read_prompt_tag(&request.prompt).unwrap_or(&request.request_id);
        let rid = RequestId::parse(raw_id)
            .ok_or_else(|| BackendError::UnknownQa(format!("untagged request {raw_id:?}")))?;
        let answer = self
            .answers
            .get(&rid.qa_id)
            .ok_or_else(|| BackendError::UnknownQa(rid.qa_id.clone()))?;
        if self.fail.as_ref().is_some_and(|re| re.is_match(raw_id)) {
            return Err(BackendError::Unavailable(format!("injected failure for {raw_id}")));
        }
        let greedy = request.temperature == 0.0;
        Ok((0..request.n)
            .map(|j| {
                if self.fires(&request.model, greedy, &rid, raw_id, j) {
                    answer.clone()
                } else {
                    DISTRACTOR.to_string()
                }
            })
            .collect())
    }
}

impl Backend for MockBackend {
    fn generate(&self, request: &GenerationRequest) -> std::result::Result<Vec<String>, BackendError> {
        self.serve(request)
    }

    fn wants_id_tag(&self) -> bool {
        true
    }
}

/// The mock behind the same HTTP completion contract real servers speak.
pub struct MockServer {
    addr: SocketAddr,
    server: Arc<tiny_http::Server>,
    handle: Option<JoinHandle<()>>,
}

#[derive(Deserialize)]
struct WireRequest {
    model: String,
    prompt: String,
    temperature: f64,
    #[serde(default)]
    top_k: Option<u32>,
    n: u32,
    max_tokens: u32,
    #[serde(default)]
    seed: u64,
}

impl MockServer {
    /// Binds an ephemeral localhost port and serves until dropped.
    pub fn start(backend: Arc<MockBackend>) -> Result<MockServer> {
        let server = tiny_http::Server::http("127.0.0.1:0")
            .map_err(|e| Error::Config(format!("cannot bind mock server: {e}")))?;
        let addr = server
            .server_addr()
            .to_ip()
            .ok_or_else(|| Error::Config("mock server has no ip address".into()))?;
        let server = Arc::new(server);
        let worker = Arc::clone(&server);
        let handle = std::thread::spawn(move || {
            for mut request in worker.incoming_requests() {
                let (status, body) = handle_http(&backend, &mut request);
                let response = tiny_http::Response::from_string(body)
                    .with_status_code(status)
                    .with_header(
                        "Content-Type: application/json"
                            .parse::<tiny_http::Header>()
                            .expect("static header"),
                    );
                let _ = request.respond(response);
            }
        });
        Ok(MockServer {
            addr,
            server,
            handle: Some(handle),
        })
    }

    /// Base URL to hand to `HttpBackend`.
    pub fn base_url(&self) -> String {
        format!("http://{}/v1", self.addr)
    }
}

impl Drop for MockServer {
    fn drop(&mut self) {
        self.server.unblock();
        if let Some(h) = self.handle.take() {
            let _ = h.join();
        }
    }
}

fn handle_http(backend: &MockBackend, request: &mut tiny_http::Request) -> (u16, String) {
    let error = |status: u16, kind: &str, message: String| {
        (status, serde_json::json!({"error": kind, "message": message}).to_string())
    };
    if *request.method() != tiny_http::Method::Post || !request.url().ends_with("/completions") {
        return error(404, "not_found", request.url().to_string());
    }
    let mut body = String::new();
    if let Err(e) = std::io::Read::read_to_string(request.as_reader(), &mut body) {
        return error(400, "bad_request", e.to_string());
    }
    let wire: WireRequest = match serde_json::from_str(&body) {
        Ok(w) => w,
        Err(e) => return error(400, "bad_request", e.to_string()),
    };
    let request_id = read_prompt_tag(&wire.prompt).unwrap_or_default().to_string();
    let generation = GenerationRequest {
        model: wire.model,
        prompt: wire.prompt,
        temperature: wire.temperature,
        n: wire.n,
        top_k: wire.top_k,
        max_new_tokens: wire.max_tokens,
        request_id,
        seed: wire.seed,
    };
    match backend.serve(&generation) {
        Ok(texts) => (200, serde_json::json!({ "choices": texts }).to_string()),
        Err(BackendError::UnknownQa(m)) => error(422, "unknown_qa", m),
        Err(BackendError::Unavailable(m)) => error(503, "unavailable", m),
        Err(BackendError::Rejected(m)) => error(400, "rejected", m),
    }
}

/// Exact class probabilities for a pair under `Bernoulli { greedy: p, sampled: q }`,
/// given `greedy_rounds` greedy generations and `samples` sampled generations.
/// Order: HighlyKnown, MaybeKnown, WeaklyKnown, Unknown.
pub fn bernoulli_class_probabilities(p: f64, q: f64, greedy_rounds: u32, samples: u32) -> [f64; 4] {
    let all_right = p.powi(greedy_rounds as i32);
    let all_wrong = (1.0 - p).powi(greedy_rounds as i32);
    let never_sampled = (1.0 - q).powi(samples as i32);
    [
        all_right,
        1.0 - all_right - all_wrong,
        all_wrong * (1.0 - never_sampled),
        all_wrong * never_sampled,
    ]
}
