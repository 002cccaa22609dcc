//! Greedy and sampled generation campaigns and their correctness tallies.
//!
//! Every prompt is built from an rng derived from `(campaign seed, qa id, mode,
//! round)`, so a pair's prompts never depend on which other pairs are probed,
//! in which order, or on how many workers run.

mod backend;
mod checkpoint;

use std::collections::{BTreeMap, HashMap};
use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::mpsc;

use num_rational::Ratio;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub use backend::{
    generate_with_retry, Backend, BackendError, GenerationRequest, HttpBackend, RetryPolicy,
};
pub use checkpoint::CampaignCheckpoint;

use crate::error::{Error, Result};
use crate::io;
use crate::model::{Corpus, DecodingSpec, ProbeEstimate, ProbeOutcome, QaPair};
use crate::prompt::{build_fewshot_prompt, match_answer, ExemplarPool, MatcherPolicy, DEFAULT_EXEMPLARS};

/// Bumped whenever prompt rendering or request-id layout changes.
pub const PROMPT_LAYOUT_VERSION: u32 = 1;

/// How the samples of one sampled round are requested.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SampleMode {
    /// One call with `n = samples_per_round`.
    #[default]
    SingleCall,
    /// `samples_per_round` calls with `n = 1`, sharing the round's prompt.
    SeparateCalls,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeConfig {
    pub model: String,
    pub greedy: DecodingSpec,
    pub sampled: DecodingSpec,
    pub exemplars: usize,
    pub matcher: MatcherPolicy,
    pub sample_mode: SampleMode,
    pub seed: u64,
    pub retry: RetryPolicy,
}

impl ProbeConfig {
    pub fn new(model: impl Into<String>, seed: u64) -> Self {
        ProbeConfig {
            model: model.into(),
            greedy: DecodingSpec::greedy(),
            sampled: DecodingSpec::sampled(),
            exemplars: DEFAULT_EXEMPLARS,
            matcher: MatcherPolicy::default(),
            sample_mode: SampleMode::SingleCall,
            seed,
            retry: RetryPolicy::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.greedy.validate()?;
        self.sampled.validate()?;
        if !self.greedy.is_greedy() {
            return Err(Error::InvalidDecoding("greedy spec needs temperature 0".into()));
        }
        if self.sampled.is_greedy() {
            return Err(Error::InvalidDecoding(
                "sampled spec needs a positive temperature".into(),
            ));
        }
        Ok(())
    }

    /// Digest over decoding, exemplar count, matcher, sample mode, prompt layout,
    /// id tagging and the exemplar pool contents. Model and seed are not included.
    pub fn digest(&self, pool: &Corpus, id_tagged: bool) -> Result<String> {
        #[derive(Serialize)]
        struct Digested<'a> {
            layout: u32,
            greedy: &'a DecodingSpec,
            sampled: &'a DecodingSpec,
            exemplars: usize,
            matcher: &'a MatcherPolicy,
            sample_mode: SampleMode,
            id_tagged: bool,
            pool: String,
        }
        io::digest_of(&Digested {
            layout: PROMPT_LAYOUT_VERSION,
            greedy: &self.greedy,
            sampled: &self.sampled,
            exemplars: self.exemplars,
            matcher: &self.matcher,
            sample_mode: self.sample_mode,
            id_tagged,
            pool: io::sha256_hex(pool.to_jsonl()?.as_bytes()),
        })
    }
}

/// Probe mode letter used in request ids.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Greedy,
    Sampled,
    Eval,
}

impl Mode {
    fn letter(self) -> char {
        match self {
            Mode::Greedy => 'g',
            Mode::Sampled => 's',
            Mode::Eval => 'e',
        }
    }
}

/// Parsed form of `{mode}{round}[.{sample}]@{seed}:{qa_id}`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RequestId {
    pub mode: Mode,
    pub round: u32,
    pub sample: Option<u32>,
    pub seed: u64,
    pub qa_id: String,
}

impl RequestId {
    pub fn new(mode: Mode, round: u32, sample: Option<u32>, seed: u64, qa_id: &str) -> Self {
        RequestId {
            mode,
            round,
            sample,
            seed,
            qa_id: qa_id.to_string(),
        }
    }

    pub fn render(&self) -> String {
        match self.sample {
            Some(s) => format!("{}{}.{}@{}:{}", self.mode.letter(), self.round, s, self.seed, self.qa_id),
            None => format!("{}{}@{}:{}", self.mode.letter(), self.round, self.seed, self.qa_id),
        }
    }

    pub fn parse(text: &str) -> Option<RequestId> {
        let (prefix, qa_id) = text.split_once(':')?;
        let (head, seed) = prefix.split_once('@')?;
        let mut chars = head.chars();
        let mode = match chars.next()? {
            'g' => Mode::Greedy,
            's' => Mode::Sampled,
            'e' => Mode::Eval,
            _ => return None,
        };
        let rest = chars.as_str();
        let (round, sample) = match rest.split_once('.') {
            Some((r, s)) => (r.parse().ok()?, Some(s.parse().ok()?)),
            None => (rest.parse().ok()?, None),
        };
        Some(RequestId {
            mode,
            round,
            sample,
            seed: seed.parse().ok()?,
            qa_id: qa_id.to_string(),
        })
    }
}

const ID_TAG_PREFIX: &str = "<!-- probe:";
const ID_TAG_SUFFIX: &str = " -->";

/// Prepends the request-id comment line read by the mock backend.
pub fn tag_prompt(prompt: &str, request_id: &str) -> String {
    format!("{ID_TAG_PREFIX}{request_id}{ID_TAG_SUFFIX}\n{prompt}")
}

pub fn read_prompt_tag(prompt: &str) -> Option<&str> {
    prompt
        .lines()
        .next()?
        .strip_prefix(ID_TAG_PREFIX)?
        .strip_suffix(ID_TAG_SUFFIX)
}

fn derived_seed(parts: &[&str]) -> [u8; 32] {
    let mut h = Sha256::new();
    for p in parts {
        h.update(p.as_bytes());
        h.update([0u8]);
    }
    h.finalize().into()
}

/// Rng for one pair's prompt in one round.
pub fn prompt_rng(seed: u64, qa_id: &str, mode: Mode, round: u32) -> ChaCha8Rng {
    let mode = mode.letter().to_string();
    ChaCha8Rng::from_seed(derived_seed(&[
        &seed.to_string(),
        qa_id,
        &mode,
        &round.to_string(),
    ]))
}

fn wire_seed(request_id: &str) -> u64 {
    let bytes = derived_seed(&["wire", request_id]);
    u64::from_le_bytes(bytes[..8].try_into().expect("8 bytes"))
}

/// Builds the request for one generation call, tagging the prompt when the backend wants it.
pub fn make_request(
    backend: &dyn Backend,
    model: &str,
    prompt: &str,
    spec: &DecodingSpec,
    n: u32,
    id: &RequestId,
) -> GenerationRequest {
    let request_id = id.render();
    let prompt = if backend.wants_id_tag() {
        tag_prompt(prompt, &request_id)
    } else {
        prompt.to_string()
    };
    GenerationRequest {
        model: model.to_string(),
        prompt,
        temperature: spec.temperature,
        n,
        top_k: spec.top_k,
        max_new_tokens: spec.max_new_tokens,
        seed: wire_seed(&request_id),
        request_id,
    }
}

fn count_correct(texts: &[String], pair: &QaPair, matcher: &MatcherPolicy) -> u32 {
    texts.iter().filter(|t| match_answer(t, pair, matcher)).count() as u32
}

/// `rounds` greedy generations, each with a freshly sampled few-shot prompt.
/// Returns `(greedy_correct, greedy_total)`.
pub fn run_greedy_probe(
    pair: &QaPair,
    pool: &ExemplarPool<'_>,
    config: &ProbeConfig,
    backend: &dyn Backend,
) -> Result<(u32, u32)> {
    let spec = &config.greedy;
    if !spec.is_greedy() || spec.samples_per_round != 1 {
        return Err(Error::InvalidDecoding(
            "greedy probe needs temperature 0 and one sample per round".into(),
        ));
    }
    let eligible = pool.eligible(pair, config.exemplars);
    let mut correct = 0;
    for round in 0..spec.rounds {
        let mut rng = prompt_rng(config.seed, &pair.id, Mode::Greedy, round);
        let prompt = build_fewshot_prompt(pair, eligible, config.exemplars, &mut rng)?.render();
        let id = RequestId::new(Mode::Greedy, round, None, config.seed, &pair.id);
        let request = make_request(backend, &config.model, &prompt, spec, 1, &id);
        let texts = generate_with_retry(backend, &request, &config.retry)?;
        correct += count_correct(&texts, pair, &config.matcher);
    }
    Ok((correct, spec.rounds))
}

/// `rounds` sampled rounds of `samples_per_round` generations each, one fresh
/// prompt per round. Returns `(sampled_correct, sampled_total)`.
pub fn run_sampled_probe(
    pair: &QaPair,
    pool: &ExemplarPool<'_>,
    config: &ProbeConfig,
    backend: &dyn Backend,
) -> Result<(u32, u32)> {
    let spec = &config.sampled;
    if spec.is_greedy() {
        return Err(Error::InvalidDecoding("sampled probe needs temperature > 0".into()));
    }
    let eligible = pool.eligible(pair, config.exemplars);
    let mut correct = 0;
    for round in 0..spec.rounds {
        let mut rng = prompt_rng(config.seed, &pair.id, Mode::Sampled, round);
        let prompt = build_fewshot_prompt(pair, eligible, config.exemplars, &mut rng)?.render();
        match config.sample_mode {
            SampleMode::SingleCall => {
                let id = RequestId::new(Mode::Sampled, round, None, config.seed, &pair.id);
                let request =
                    make_request(backend, &config.model, &prompt, spec, spec.samples_per_round, &id);
                let texts = generate_with_retry(backend, &request, &config.retry)?;
                correct += count_correct(&texts, pair, &config.matcher);
            }
            SampleMode::SeparateCalls => {
                for sample in 0..spec.samples_per_round {
                    let id =
                        RequestId::new(Mode::Sampled, round, Some(sample), config.seed, &pair.id);
                    let request = make_request(backend, &config.model, &prompt, spec, 1, &id);
                    let texts = generate_with_retry(backend, &request, &config.retry)?;
                    correct += count_correct(&texts, pair, &config.matcher);
                }
            }
        }
    }
    Ok((correct, spec.total_generations()))
}

/// Greedy then sampled probe of one pair.
pub fn probe_pair(
    pair: &QaPair,
    pool: &ExemplarPool<'_>,
    config: &ProbeConfig,
    backend: &dyn Backend,
) -> Result<ProbeOutcome> {
    let greedy = run_greedy_probe(pair, pool, config, backend)?;
    let sampled = run_sampled_probe(pair, pool, config, backend)?;
    Ok(ProbeOutcome::new(pair.id.clone(), greedy, sampled))
}

/// Exact `correct / total` for both modes.
pub fn estimate(outcome: &ProbeOutcome) -> Result<ProbeEstimate> {
    if outcome.greedy_total == 0 || outcome.sampled_total == 0 {
        return Err(Error::ZeroTotal(outcome.qa_id.clone()));
    }
    Ok(ProbeEstimate {
        p_greedy: Ratio::new(outcome.greedy_correct as u64, outcome.greedy_total as u64),
        p_sampled: Ratio::new(outcome.sampled_correct as u64, outcome.sampled_total as u64),
    })
}

#[derive(Debug, Clone)]
pub struct CampaignOptions {
    /// Upper bound on pairs probed at once, hence on requests in flight.
    pub parallelism: usize,
    /// Resume from and persist to this file.
    pub checkpoint: Option<PathBuf>,
    /// Persist after this many newly completed pairs.
    pub checkpoint_every: usize,
    /// Stop handing out new pairs after this many completions in this call.
    pub stop_after: Option<usize>,
}

impl Default for CampaignOptions {
    fn default() -> Self {
        CampaignOptions {
            parallelism: 1,
            checkpoint: None,
            checkpoint_every: 64,
            stop_after: None,
        }
    }
}

impl CampaignOptions {
    pub fn with_parallelism(parallelism: usize) -> Self {
        CampaignOptions {
            parallelism,
            ..Default::default()
        }
    }
}

/// Probes every pair of `targets`, drawing exemplars from `pool`.
///
/// The result is independent of `parallelism` and of completion order. Pairs
/// whose probe fails are left pending in the checkpoint and named in the error.
pub fn run_campaign(
    targets: &Corpus,
    pool: &Corpus,
    config: &ProbeConfig,
    backend: &dyn Backend,
    options: &CampaignOptions,
) -> Result<BTreeMap<String, ProbeOutcome>> {
    config.validate()?;
    if options.parallelism == 0 {
        return Err(Error::Config("parallelism must be at least 1".into()));
    }
    let digest = config.digest(pool, backend.wants_id_tag())?;
    let mut state = match &options.checkpoint {
        Some(path) if path.exists() => {
            let cp = CampaignCheckpoint::load(path)?;
            cp.check_matches(&digest, config.seed, &config.model)?;
            cp
        }
        _ => CampaignCheckpoint::new(digest, config.seed, &config.model),
    };
    state.completed.retain(|id, _| targets.get(id).is_some());

    let pending: Vec<&QaPair> = state
        .pending(targets)
        .into_iter()
        .filter_map(|id| targets.get(id))
        .collect();
    let exemplars = ExemplarPool::new(pool.pairs());
    let next = AtomicUsize::new(0);
    let handed_out = AtomicUsize::new(0);
    let halt = AtomicBool::new(false);
    let limit = options.stop_after.unwrap_or(usize::MAX);
    let mut failures: HashMap<String, Error> = HashMap::new();
    let mut since_save = 0;

    std::thread::scope(|scope| -> Result<()> {
        let (tx, rx) = mpsc::channel::<(String, Result<ProbeOutcome>)>();
        let workers = options.parallelism.min(pending.len()).max(1);
        for _ in 0..workers {
            let tx = tx.clone();
            let (pending, exemplars, next, handed_out, halt) =
                (&pending, &exemplars, &next, &handed_out, &halt);
            scope.spawn(move || loop {
                if halt.load(Ordering::SeqCst) {
                    break;
                }
                if handed_out.fetch_add(1, Ordering::SeqCst) >= limit {
                    break;
                }
                let i = next.fetch_add(1, Ordering::SeqCst);
                let Some(pair) = pending.get(i) else { break };
                let result = probe_pair(pair, exemplars, config, backend);
                if tx.send((pair.id.clone(), result)).is_err() {
                    break;
                }
            });
        }
        drop(tx);
        for (id, result) in rx {
            match result {
                Ok(outcome) => {
                    state.completed.insert(id, outcome);
                    since_save += 1;
                    if since_save >= options.checkpoint_every.max(1) {
                        if let Some(path) = &options.checkpoint {
                            if let Err(e) = state.save(path) {
                                halt.store(true, Ordering::SeqCst);
                                return Err(e);
                            }
                        }
                        since_save = 0;
                    }
                }
                Err(e) => {
                    tracing::warn!(qa_id = %id, "probe failed: {e}");
                    failures.insert(id, e);
                }
            }
        }
        Ok(())
    })?;

    if let Some(path) = &options.checkpoint {
        state.save(path)?;
    }
    let pending = state.pending(targets);
    if !pending.is_empty() {
        // An unresolvable pair is a configuration error, not an outage.
        if let Some((_, e)) = failures.iter().find(|(_, e)| matches!(e, Error::UnknownQa(_))) {
            return Err(Error::UnknownQa(e.to_string()));
        }
        return Err(Error::CampaignIncomplete {
            cause: pending.iter().find_map(|id| failures.get(*id)).map(|e| e.to_string()),
            pending: pending.into_iter().map(String::from).collect(),
        });
    }
    Ok(state.completed)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn request_ids_round_trip() {
        for id in [
            RequestId::new(Mode::Greedy, 3, None, 42, "q1"),
            RequestId::new(Mode::Sampled, 9, Some(15), 7, "wiki:q:17"),
            RequestId::new(Mode::Eval, 0, None, 42, "t@1"),
        ] {
            assert_eq!(RequestId::parse(&id.render()), Some(id));
        }
        assert_eq!(RequestId::new(Mode::Greedy, 3, None, 42, "q1").render(), "g3@42:q1");
        assert_eq!(RequestId::parse("x1@2:q"), None);
    }

    #[test]
    fn prompt_tag_round_trip() {
        let tagged = tag_prompt("Q: a\nA:", "g0@1:q");
        assert_eq!(read_prompt_tag(&tagged), Some("g0@1:q"));
        assert_eq!(read_prompt_tag("Q: a\nA:"), None);
    }

    #[test]
    fn estimates() {
        let e = estimate(&ProbeOutcome::new("a", (3, 10), (0, 160))).unwrap();
        assert_eq!((e.p_greedy, e.p_sampled), (Ratio::new(3, 10), Ratio::from_integer(0)));
        let e = estimate(&ProbeOutcome::new("a", (10, 10), (160, 160))).unwrap();
        assert_eq!((e.p_greedy, e.p_sampled), (Ratio::from_integer(1), Ratio::from_integer(1)));
        let e = estimate(&ProbeOutcome::new("a", (0, 10), (7, 160))).unwrap();
        assert_eq!((e.p_greedy, e.p_sampled), (Ratio::from_integer(0), Ratio::new(7, 160)));
        assert!(matches!(
            estimate(&ProbeOutcome::new("a", (0, 0), (7, 160))),
            Err(Error::ZeroTotal(_))
        ));
    }

    #[test]
    fn prompt_rng_depends_only_on_its_key() {
        use rand::RngCore;
        let a = prompt_rng(42, "q1", Mode::Greedy, 0).next_u64();
        assert_eq!(a, prompt_rng(42, "q1", Mode::Greedy, 0).next_u64());
        assert_ne!(a, prompt_rng(42, "q1", Mode::Greedy, 1).next_u64());
        assert_ne!(a, prompt_rng(42, "q1", Mode::Sampled, 0).next_u64());
        assert_ne!(a, prompt_rng(43, "q1", Mode::Greedy, 0).next_u64());
    }
}
