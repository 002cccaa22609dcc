//! Test-split accuracy with a prompt set fixed once per run.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io;
use crate::model::{Corpus, DecodingSpec};
use crate::probe::{generate_with_retry, make_request, prompt_rng, Backend, Mode, RequestId, RetryPolicy};
use crate::prompt::{build_fewshot_prompt, match_answer, ExemplarPool, MatcherPolicy};

/// Seed for the evaluation prompts unless configured otherwise.
pub const EVAL_SEED: u64 = 42;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalPrompt {
    pub id: String,
    pub prompt: String,
}

/// One few-shot prompt per test pair, built once and reused for every checkpoint.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FixedPrompts {
    pub seed: u64,
    pub exemplars: usize,
    pub prompts: Vec<EvalPrompt>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    seed: u64,
    exemplars: usize,
}

impl FixedPrompts {
    /// Exemplars come from `pool`, typically the train split.
    pub fn build(test: &Corpus, pool: &Corpus, exemplars: usize, seed: u64) -> Result<Self> {
        if test.is_empty() {
            return Err(Error::EmptyEvalSet);
        }
        let pool = ExemplarPool::new(pool.pairs());
        let prompts = test
            .pairs()
            .iter()
            .map(|pair| {
                let mut rng = prompt_rng(seed, &pair.id, Mode::Eval, 0);
                let eligible = pool.eligible(pair, exemplars);
                let prompt = build_fewshot_prompt(pair, eligible, exemplars, &mut rng)?.render();
                Ok(EvalPrompt {
                    id: pair.id.clone(),
                    prompt,
                })
            })
            .collect::<Result<_>>()?;
        Ok(FixedPrompts {
            seed,
            exemplars,
            prompts,
        })
    }

    pub fn to_jsonl(&self) -> Result<String> {
        let mut out = io::to_jsonl([Header {
            seed: self.seed,
            exemplars: self.exemplars,
        }])?;
        out.push_str(&io::to_jsonl(&self.prompts)?);
        Ok(out)
    }

    pub fn from_jsonl(text: &str) -> Result<Self> {
        let mut lines = io::jsonl_lines(text);
        let (n, first) = lines.next().ok_or(Error::EmptyEvalSet)?;
        let header: Header = io::parse_line("eval prompt header", n, first)?;
        let prompts = lines
            .map(|(n, l)| io::parse_line("eval prompt", n, l))
            .collect::<Result<Vec<EvalPrompt>>>()?;
        Ok(FixedPrompts {
            seed: header.seed,
            exemplars: header.exemplars,
            prompts,
        })
    }

    /// Content digest, used as the eval-set reference handed to trainers.
    pub fn digest(&self) -> Result<String> {
        Ok(io::sha256_hex(self.to_jsonl()?.as_bytes()))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        io::write_atomic(path, self.to_jsonl()?.as_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_jsonl(&io::read_to_string(path)?)
    }
}

#[derive(Debug, Clone)]
pub struct EvalOptions {
    pub matcher: MatcherPolicy,
    pub retry: RetryPolicy,
    pub max_new_tokens: u32,
    pub parallelism: usize,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions {
            matcher: MatcherPolicy::default(),
            retry: RetryPolicy::default(),
            max_new_tokens: DecodingSpec::DEFAULT_MAX_NEW_TOKENS,
            parallelism: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    /// Fraction of test pairs answered correctly.
    pub accuracy: f64,
    pub correct: BTreeMap<String, bool>,
}

/// One greedy generation per fixed prompt, scored with the matcher.
pub fn evaluate(
    model_ref: &str,
    test: &Corpus,
    prompts: &FixedPrompts,
    backend: &dyn Backend,
    options: &EvalOptions,
) -> Result<EvalResult> {
    if prompts.prompts.is_empty() {
        return Err(Error::EmptyEvalSet);
    }
    let spec = DecodingSpec {
        max_new_tokens: options.max_new_tokens,
        ..DecodingSpec::greedy()
    };
    let next = AtomicUsize::new(0);
    let workers = options.parallelism.clamp(1, prompts.prompts.len());
    let results: Vec<Result<Vec<(String, bool)>>> = std::thread::scope(|scope| {
        let handles: Vec<_> = (0..workers)
            .map(|_| {
                scope.spawn(|| {
                    let mut out = Vec::new();
                    loop {
                        let i = next.fetch_add(1, Ordering::Relaxed);
                        let Some(p) = prompts.prompts.get(i) else { break };
                        let pair = test.get(&p.id).ok_or_else(|| Error::UnknownQa(p.id.clone()))?;
                        let id = RequestId::new(Mode::Eval, 0, None, prompts.seed, &p.id);
                        let request = make_request(backend, model_ref, &p.prompt, &spec, 1, &id);
                        let texts = generate_with_retry(backend, &request, &options.retry)?;
                        out.push((p.id.clone(), match_answer(&texts[0], pair, &options.matcher)));
                    }
                    Ok(out)
                })
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("eval worker panicked"))
            .collect()
    });
    let mut correct = BTreeMap::new();
    for r in results {
        correct.extend(r?);
    }
    let right = correct.values().filter(|ok| **ok).count();
    Ok(EvalResult {
        accuracy: right as f64 / correct.len() as f64,
        correct,
    })
}

/// Accuracy fraction only.
pub fn evaluate_accuracy(
    model_ref: &str,
    test: &Corpus,
    prompts: &FixedPrompts,
    backend: &dyn Backend,
) -> Result<f64> {
    Ok(evaluate(model_ref, test, prompts, backend, &EvalOptions::default())?.accuracy)
}

/// Percent with two decimals, as accuracies are reported.
pub fn format_accuracy(fraction: f64) -> String {
    format!("{:.2}", 100.0 * fraction)
}
