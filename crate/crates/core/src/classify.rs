//! Four-way knowledge labels from probe estimates.

use std::collections::{BTreeMap, HashMap};

use num_traits::{One, Zero};

use crate::error::{Error, Result};
use crate::model::{
    ClassificationSnapshot, CoarseClass, Corpus, KnowledgeClass, ProbeEstimate, ProbeOutcome,
};
use crate::probe::estimate;

/// HighlyKnown iff greedy is always right; MaybeKnown iff greedy is sometimes
/// right; otherwise WeaklyKnown iff sampling is ever right, else Unknown.
pub fn classify(est: &ProbeEstimate) -> KnowledgeClass {
    if est.p_greedy.is_one() {
        KnowledgeClass::HighlyKnown
    } else if !est.p_greedy.is_zero() {
        KnowledgeClass::MaybeKnown
    } else if !est.p_sampled.is_zero() {
        KnowledgeClass::WeaklyKnown
    } else {
        KnowledgeClass::Unknown
    }
}

pub fn coarsen(class: KnowledgeClass) -> CoarseClass {
    match class {
        KnowledgeClass::HighlyKnown => CoarseClass::HighlyKnown,
        KnowledgeClass::MaybeKnown => CoarseClass::MaybeKnown,
        KnowledgeClass::WeaklyKnown | KnowledgeClass::Unknown => CoarseClass::Residual,
    }
}

/// Labels every pair of `corpus` from its probe outcome.
pub fn snapshot(
    corpus: &Corpus,
    outcomes: &HashMap<String, ProbeOutcome>,
    model_ref: &str,
    digest: &str,
    seed: u64,
) -> Result<ClassificationSnapshot> {
    let mut labels = BTreeMap::new();
    for id in corpus.ids() {
        let outcome = outcomes
            .get(id)
            .ok_or_else(|| Error::MissingOutcome(id.to_string()))?;
        labels.insert(id.to_string(), classify(&estimate(outcome)?));
    }
    Ok(ClassificationSnapshot::new(model_ref, digest, seed, labels))
}
