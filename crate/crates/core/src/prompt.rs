//! Few-shot probe prompts and substring answer matching.

use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::QaPair;

pub const DEFAULT_EXEMPLARS: usize = 4;

/// A rendered-on-demand closed-book prompt: `k` solved exemplars, then the target question.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptTemplate {
    pub exemplars: Vec<(String, String)>,
    pub target_question: String,
}

impl PromptTemplate {
    /// `Q: {question}\nA: {answer}\n\n` per exemplar, then `Q: {target}\nA:`.
    pub fn render(&self) -> String {
        let mut out = String::new();
        for (q, a) in &self.exemplars {
            out.push_str("Q: ");
            out.push_str(q);
            out.push_str("\nA: ");
            out.push_str(a);
            out.push_str("\n\n");
        }
        out.push_str("Q: ");
        out.push_str(&self.target_question);
        out.push_str("\nA:");
        out
    }
}

/// Picks `k` exemplars uniformly without replacement from `pool` minus the target.
///
/// The exemplars keep the order in which they were sampled, so the result is a
/// pure function of the rng state, the target id and the pool ordering.
pub fn build_fewshot_prompt<R: Rng + ?Sized>(
    target: &QaPair,
    pool: &[&QaPair],
    k: usize,
    rng: &mut R,
) -> Result<PromptTemplate> {
    let others: Vec<&QaPair> = pool.iter().copied().filter(|p| p.id != target.id).collect();
    if others.len() < k {
        return Err(Error::PoolTooSmall {
            needed: k,
            available: others.len(),
        });
    }
    let exemplars = rand::seq::index::sample(rng, others.len(), k)
        .into_iter()
        .map(|i| {
            let p = others[i];
            (p.question.clone(), p.canonical_answer().to_string())
        })
        .collect();
    Ok(PromptTemplate {
        exemplars,
        target_question: target.question.clone(),
    })
}

/// Groups candidate exemplars by question-pattern tag.
///
/// A target carrying a pattern tag draws from pairs with the same tag when that
/// group holds at least `k` other pairs; otherwise it draws from the whole pool.
#[derive(Debug, Clone)]
pub struct ExemplarPool<'a> {
    all: Vec<&'a QaPair>,
    by_pattern: BTreeMap<&'a str, Vec<&'a QaPair>>,
}

impl<'a> ExemplarPool<'a> {
    pub fn new(pairs: impl IntoIterator<Item = &'a QaPair>) -> Self {
        let all: Vec<&QaPair> = pairs.into_iter().collect();
        let mut by_pattern: BTreeMap<&str, Vec<&QaPair>> = BTreeMap::new();
        for p in &all {
            if let Some(tag) = p.pattern() {
                by_pattern.entry(tag).or_default().push(p);
            }
        }
        ExemplarPool { all, by_pattern }
    }

    pub fn len(&self) -> usize {
        self.all.len()
    }

    pub fn is_empty(&self) -> bool {
        self.all.is_empty()
    }

    pub fn eligible(&self, target: &QaPair, k: usize) -> &[&'a QaPair] {
        if let Some(group) = target.pattern().and_then(|t| self.by_pattern.get(t)) {
            let others = group.iter().filter(|p| p.id != target.id).count();
            if others >= k {
                return group;
            }
        }
        &self.all
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum MultiAnswer {
    /// Only `answers[0]` is accepted.
    #[default]
    FirstAnswerOnly,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MatcherPolicy {
    pub case_fold: bool,
    pub whitespace_collapse: bool,
    pub multi_answer: MultiAnswer,
}

impl Default for MatcherPolicy {
    fn default() -> Self {
        MatcherPolicy {
            case_fold: true,
            whitespace_collapse: true,
            multi_answer: MultiAnswer::FirstAnswerOnly,
        }
    }
}

impl MatcherPolicy {
    pub fn exact() -> Self {
        MatcherPolicy {
            case_fold: false,
            whitespace_collapse: false,
            multi_answer: MultiAnswer::FirstAnswerOnly,
        }
    }

    pub fn normalize(&self, text: &str) -> String {
        let text = if self.whitespace_collapse {
            text.split_whitespace().collect::<Vec<_>>().join(" ")
        } else {
            text.to_string()
        };
        if self.case_fold {
            text.to_lowercase()
        } else {
            text
        }
    }
}

/// True iff the normalized canonical answer occurs as a substring of the normalized output.
pub fn match_answer(model_output: &str, pair: &QaPair, policy: &MatcherPolicy) -> bool {
    let expected = match policy.multi_answer {
        MultiAnswer::FirstAnswerOnly => pair.answers.first(),
    };
    let Some(expected) = expected else {
        return false;
    };
    let expected = policy.normalize(expected);
    if expected.is_empty() {
        return false;
    }
    policy.normalize(model_output).contains(&expected)
}
