//! A small synthetic world for end-to-end runs without a real model.
//!
//! The corpus is generated from relation templates over invented entities. The
//! mock backend answers with the latent rule, and the scripted trainer's
//! checkpoints map to skills, so accuracy and labels move as training "happens".

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::mock::{AnswerPolicy, LatentWorld, MockBackend, QaRule};
use crate::model::{validate_corpus, Corpus, QaPair, Split};
use crate::pipeline::trainer::{ScriptedTrainer, StageScript};

const SYLLABLES: [&str; 16] = [
    "ka", "lo", "mi", "ren", "tis", "va", "dor", "el", "qua", "sun", "bri", "ot", "zan", "pe", "ru", "gal",
];

fn name(index: usize, parts: usize) -> String {
    let mut s = String::new();
    let mut i = index;
    for _ in 0..parts {
        s.push_str(SYLLABLES[i % SYLLABLES.len()]);
        i /= SYLLABLES.len();
    }
    let mut c = s.chars();
    match c.next() {
        Some(f) => f.to_uppercase().chain(c).collect(),
        None => s,
    }
}

/// `train + test` pairs over four relation templates that share entities, so
/// the entity graph built from them is connected in places.
pub fn synthetic_corpus(train: usize, test: usize, seed: u64) -> Result<Corpus> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let total = train + test;
    let people = (total / 4).max(4);
    let cities = (total / 8).max(4);
    let countries = (total / 32).max(2);
    let person = |i: usize| format!("{} {}", name(i, 2), name(i * 7 + 3, 3));
    let city = |i: usize| name(i + 4096, 3);
    let country = |i: usize| format!("{}ia", name(i + 8192, 2));
    let mut pairs = Vec::with_capacity(total);
    for i in 0..total {
        let (question, answer, pattern) = match i % 4 {
            0 => (
                format!("Who wrote The {} of {}?", name(i, 2), name(i + 1, 2)),
                person(rng.gen_range(0..people)),
                "author",
            ),
            1 => (
                format!("Where was {} born?", person(i / 4 % people)),
                city(rng.gen_range(0..cities)),
                "birthplace",
            ),
            2 => (
                format!("What is the country of {}?", city(i / 4 % cities)),
                country(rng.gen_range(0..countries)),
                "country",
            ),
            _ => (
                format!("Who directed {} {}?", name(i + 17, 2), name(i, 3)),
                person(rng.gen_range(0..people)),
                "director",
            ),
        };
        pairs.push((question, answer, pattern));
    }
    // the same subject can come up twice in the cyclic templates; keep the first
    let mut seen = std::collections::BTreeSet::new();
    pairs.retain(|(q, _, _)| seen.insert(q.clone()));
    let mut order: Vec<usize> = (0..pairs.len()).collect();
    order.shuffle(&mut rng);
    let test_ids: std::collections::BTreeSet<usize> = order.into_iter().take(test.min(pairs.len())).collect();
    let pairs = pairs
        .into_iter()
        .enumerate()
        .map(|(i, (q, a, pattern))| {
            let split = if test_ids.contains(&i) { Split::Test } else { Split::Train };
            QaPair::new(format!("w{i:05}"), q, &[&a])
                .with_split(split)
                .with_meta(crate::model::PATTERN_TAG, pattern)
        })
        .collect();
    validate_corpus(pairs)
}

/// The untuned model's skill plus a scripted trainer, sharing one skill table.
#[derive(Debug, Clone, PartialEq)]
pub struct ScriptedWorld {
    pub base_model: String,
    pub base_skill: f64,
    pub seed: u64,
    pub trainer: ScriptedTrainer,
}

impl ScriptedWorld {
    /// A world where stage 1 helps, stage 2 helps a little more, and further rounds stall.
    pub fn demo() -> Self {
        let stage = |skills: &[f64]| StageScript {
            skills: skills.to_vec(),
            fail_after: None,
        };
        ScriptedWorld {
            base_model: "base".into(),
            base_skill: 0.45,
            seed: 7,
            trainer: ScriptedTrainer {
                stages: BTreeMap::from([
                    ("stage1".to_string(), stage(&[0.50, 0.56, 0.55])),
                    ("stage2".to_string(), stage(&[0.60, 0.59, 0.58])),
                    ("stage2-round2".to_string(), stage(&[0.60, 0.60, 0.59])),
                    ("stage2-round3".to_string(), stage(&[0.60])),
                ]),
                epoch_delay_ms: 0,
            },
        }
    }

    /// Answer policy whose latent skills cover the base model and every
    /// checkpoint the trainer can emit within `max_epochs`.
    pub fn policy(&self, max_epochs: u32) -> AnswerPolicy {
        let mut skills = self.trainer.skill_table(max_epochs);
        skills.insert(self.base_model.clone(), self.base_skill);
        AnswerPolicy {
            latent: LatentWorld {
                skills,
                default_skill: self.base_skill,
                ..LatentWorld::default()
            },
            ..AnswerPolicy::uniform(QaRule::Latent, self.seed)
        }
    }

    pub fn backend(&self, corpus: &Corpus, max_epochs: u32) -> Result<MockBackend> {
        MockBackend::new(corpus, self.policy(max_epochs))
    }
}
