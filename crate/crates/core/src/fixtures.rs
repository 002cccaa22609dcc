//! Published knowledge-type counts and snapshots engineered to reproduce them.
//!
//! Row order is HighlyKnown, MaybeKnown, WeaklyKnown, Unknown for fine labels
//! and HighlyKnown, MaybeKnown, Residual for coarse labels.

use std::collections::BTreeMap;

use crate::model::{
    validate_corpus, ClassificationSnapshot, CoarseClass, Corpus, KnowledgeClass, QaPair,
    TransitionMatrix,
};

/// Qwen2-7B initial label counts on the train split.
pub const QWEN2_INITIAL: [u64; 4] = [34426, 36897, 25986, 71855];
/// LLaMA3-8B initial label counts on the train split.
pub const LLAMA3_INITIAL: [u64; 4] = [34739, 42400, 24701, 67324];

/// Qwen2-7B, initial fine label -> coarse label after stage-1 fine-tuning.
pub const QWEN2_STAGE1: [[u64; 3]; 4] = [
    [27282, 3952, 3192],
    [19059, 9892, 7946],
    [3091, 4889, 18006],
    [527, 1932, 69396],
];

/// LLaMA3-8B, initial fine label -> coarse label after stage-1 fine-tuning.
pub const LLAMA3_STAGE1: [[u64; 3]; 4] = [
    [29930, 4428, 381],
    [19635, 19976, 2789],
    [1991, 8607, 14103],
    [396, 5165, 61763],
];

/// Qwen2-7B, coarse label after stage 1 -> coarse label after stage 2.
pub const QWEN2_STAGE2: [[u64; 3]; 3] = [
    [47335, 2527, 97],
    [6131, 13161, 1373],
    [225, 2600, 95715],
];

/// Re-probing the untuned model: coarse label on the first probe -> on the second.
/// Stored as published; its row totals do not match the initial counts.
pub const RETEST_NOISE: [[u64; 3]; 3] = [
    [31987, 3190, 0],
    [3285, 30006, 5236],
    [0, 5285, 97571],
];

/// Coarse counts (HighlyKnown, MaybeKnown, Residual) before tuning, after one stage, after two.
pub const COARSE_COUNTS_ORIGIN: [u64; 3] = [34426, 36897, 97841];
pub const COARSE_COUNTS_ONE_STAGE: [u64; 3] = [49959, 20665, 98540];
pub const COARSE_COUNTS_TWO_STAGE: [u64; 3] = [53691, 18288, 97185];

/// Entity-graph node counts: Initial, Reclassified, Linked Reclassified.
pub const LINKAGE_COUNTS: [u64; 3] = [43005, 5121, 3968];

/// Qwen2 test accuracy (percent): untuned, one stage, two stages, further rounds.
pub const QWEN2_ACCURACY: [f64; 4] = [29.93, 32.98, 33.80, 33.79];

/// Max accuracy after stage 2 for strategies 1 to 5.
pub const STRATEGY_MAX_ACCURACY: [f64; 5] = [33.62, 33.24, 33.29, 33.62, 33.80];

/// A corpus with three snapshots whose transitions match the published counts.
pub struct EngineeredRun {
    pub corpus: Corpus,
    pub snap0: ClassificationSnapshot,
    pub snap1: ClassificationSnapshot,
    pub snap2: Option<ClassificationSnapshot>,
}

fn fixture_id(i: usize) -> String {
    format!("q{i:06}")
}

fn residual_fine(origin: KnowledgeClass) -> KnowledgeClass {
    if origin == KnowledgeClass::WeaklyKnown {
        KnowledgeClass::WeaklyKnown
    } else {
        KnowledgeClass::Unknown
    }
}

fn fine_of(coarse: CoarseClass, origin: KnowledgeClass) -> KnowledgeClass {
    match coarse {
        CoarseClass::HighlyKnown => KnowledgeClass::HighlyKnown,
        CoarseClass::MaybeKnown => KnowledgeClass::MaybeKnown,
        CoarseClass::Residual => residual_fine(origin),
    }
}

/// Builds snapshots whose fine-by-coarse stage-1 transitions equal `stage1`,
/// and, when given, whose coarse stage-2 transitions equal `stage2`.
///
/// Residual labels after a stage stay WeaklyKnown for pairs that started
/// WeaklyKnown and are Unknown otherwise.
///
/// Panics if `stage2`'s row totals differ from the stage-1 column totals.
pub fn engineer(
    model: &str,
    stage1: &[[u64; 3]; 4],
    stage2: Option<&[[u64; 3]; 3]>,
) -> EngineeredRun {
    let mut labels0 = BTreeMap::new();
    let mut labels1 = BTreeMap::new();
    let mut next = 0usize;
    for (origin, row) in KnowledgeClass::ALL.into_iter().zip(stage1) {
        for (after, &count) in CoarseClass::ALL.into_iter().zip(row) {
            for _ in 0..count {
                let id = fixture_id(next);
                next += 1;
                labels0.insert(id.clone(), origin);
                labels1.insert(id, fine_of(after, origin));
            }
        }
    }
    let snap2 = stage2.map(|matrix| {
        let mut labels2 = BTreeMap::new();
        for (from, row) in CoarseClass::ALL.into_iter().zip(matrix) {
            let ids: Vec<&String> = labels1
                .iter()
                .filter(|(_, c): &(&String, &KnowledgeClass)| c.coarse() == from)
                .map(|(id, _)| id)
                .collect();
            assert_eq!(
                ids.len() as u64,
                row.iter().sum::<u64>(),
                "stage-2 row {from} does not match stage-1 column total"
            );
            let mut it = ids.into_iter();
            for (to, &count) in CoarseClass::ALL.into_iter().zip(row) {
                for id in it.by_ref().take(count as usize) {
                    labels2.insert(id.clone(), fine_of(to, labels0[id]));
                }
            }
        }
        ClassificationSnapshot::new(format!("{model}/stage2"), "fixture", 0, labels2)
    });
    let corpus = validate_corpus(
        (0..next)
            .map(|i| {
                let id = fixture_id(i);
                QaPair::new(id.clone(), format!("Question {id}?"), &[&format!("Answer {id}")])
            })
            .collect(),
    )
    .expect("fixture corpus is valid");
    EngineeredRun {
        corpus,
        snap0: ClassificationSnapshot::new(model, "fixture", 0, labels0),
        snap1: ClassificationSnapshot::new(format!("{model}/stage1"), "fixture", 0, labels1),
        snap2,
    }
}

pub fn qwen2() -> EngineeredRun {
    engineer("qwen2-7b", &QWEN2_STAGE1, Some(&QWEN2_STAGE2))
}

pub fn llama3() -> EngineeredRun {
    engineer("llama3-8b", &LLAMA3_STAGE1, None)
}

/// The published re-probe noise counts as a coarse transition matrix.
pub fn retest_noise_matrix() -> TransitionMatrix {
    let labels: Vec<String> = CoarseClass::ALL.iter().map(|c| c.to_string()).collect();
    TransitionMatrix {
        row_labels: labels.clone(),
        col_labels: labels,
        counts: RETEST_NOISE.iter().map(|r| r.to_vec()).collect(),
    }
}
