//! Stage-1 and stage-2 training sets, and the per-epoch replay mix.

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::io;
use crate::model::{
    ClassificationSnapshot, Corpus, CurriculumSpec, KnowledgeClass, ReplayBase, Split, Strategy,
};

pub const DEFAULT_REPLAY_RATIO: f64 = 0.2;

fn rng_for(seed: u64, parts: &[&str]) -> ChaCha8Rng {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    for p in parts {
        h.update(p.as_bytes());
        h.update([0u8]);
    }
    ChaCha8Rng::from_seed(h.finalize().into())
}

/// Train-split ids in id order, each with its label in `snap`.
fn labelled_train_ids<'a>(
    snap: &'a ClassificationSnapshot,
    corpus: &'a Corpus,
) -> Result<Vec<(&'a str, KnowledgeClass)>> {
    let mut ids: Vec<&str> = corpus
        .pairs()
        .iter()
        .filter(|p| p.split == Split::Train)
        .map(|p| p.id.as_str())
        .collect();
    ids.sort_unstable();
    ids.into_iter()
        .map(|id| Ok((id, snap.label(id)?)))
        .collect()
}

fn shuffled(mut ids: Vec<String>, seed: u64, strategy: Strategy) -> Vec<String> {
    ids.sort();
    ids.shuffle(&mut rng_for(seed, &["members", strategy.as_str()]));
    ids
}

/// Every train pair labelled MaybeKnown in the initial snapshot.
pub fn stage1_dataset(
    snap0: &ClassificationSnapshot,
    corpus: &Corpus,
    seed: u64,
) -> Result<CurriculumSpec> {
    let members: Vec<String> = labelled_train_ids(snap0, corpus)?
        .into_iter()
        .filter(|(_, c)| *c == KnowledgeClass::MaybeKnown)
        .map(|(id, _)| id.to_string())
        .collect();
    if members.is_empty() {
        return Err(Error::EmptySelection("no MaybeKnown pairs in the initial snapshot".into()));
    }
    Ok(CurriculumSpec {
        strategy: Strategy::Stage1MaybeKnown,
        replay_ratio: 0.0,
        replay_base: ReplayBase::Pool,
        seed,
        member_ids: shuffled(members, seed, Strategy::Stage1MaybeKnown),
        replay_pool_ids: Vec::new(),
        snapshot_digests: vec![snapshot_digest(snap0)?],
    })
}

/// Whether a pair still MaybeKnown after stage 1 joins the stage-2 set, given its initial label.
pub fn admits(strategy: Strategy, initial: KnowledgeClass) -> bool {
    use KnowledgeClass::*;
    match strategy {
        Strategy::Stage1MaybeKnown => false,
        Strategy::S1 => matches!(initial, HighlyKnown | MaybeKnown | WeaklyKnown),
        Strategy::S2 => matches!(initial, HighlyKnown | MaybeKnown),
        Strategy::S3 => matches!(initial, MaybeKnown | WeaklyKnown),
        Strategy::S4 | Strategy::S5 => true,
    }
}

/// Members are train pairs MaybeKnown after stage 1 whose initial label the
/// strategy admits. S5 adds every pair HighlyKnown after stage 1 as replay pool.
pub fn stage2_dataset(
    strategy: Strategy,
    snap0: &ClassificationSnapshot,
    snap1: &ClassificationSnapshot,
    corpus: &Corpus,
    seed: u64,
    replay_ratio: f64,
) -> Result<CurriculumSpec> {
    if strategy == Strategy::Stage1MaybeKnown {
        return Err(Error::UnknownStrategy(
            "stage1 is not a second-stage strategy".into(),
        ));
    }
    let mut members = Vec::new();
    let mut pool = Vec::new();
    for (id, after) in labelled_train_ids(snap1, corpus)? {
        match after {
            KnowledgeClass::MaybeKnown if admits(strategy, snap0.label(id)?) => {
                members.push(id.to_string())
            }
            KnowledgeClass::HighlyKnown if strategy == Strategy::S5 => pool.push(id.to_string()),
            _ => {}
        }
    }
    let spec = CurriculumSpec {
        strategy,
        replay_ratio: if strategy == Strategy::S5 { replay_ratio } else { 0.0 },
        replay_base: ReplayBase::Pool,
        seed,
        member_ids: shuffled(members, seed, strategy),
        replay_pool_ids: pool,
        snapshot_digests: vec![snapshot_digest(snap0)?, snapshot_digest(snap1)?],
    };
    spec.validate()?;
    Ok(spec)
}

/// Number of replayed pairs per epoch: `floor(ratio * |base|)`, capped at the pool size.
pub fn replay_count(spec: &CurriculumSpec) -> usize {
    let base = match spec.replay_base {
        ReplayBase::Pool => spec.replay_pool_ids.len(),
        ReplayBase::Members => spec.member_ids.len(),
    };
    // the epsilon absorbs binary representation error, e.g. 0.29 * 100
    let count = (spec.replay_ratio * base as f64 + 1e-9).floor() as usize;
    count.min(spec.replay_pool_ids.len())
}

/// Training order for one epoch: members plus a fresh replay sample, shuffled.
/// Deterministic in `(spec.seed, epoch)`.
pub fn replay_epoch_mix(spec: &CurriculumSpec, epoch: u32) -> Vec<String> {
    let mut rng = rng_for(spec.seed, &["epoch", &epoch.to_string()]);
    let mut mix = spec.member_ids.clone();
    if spec.replay_ratio > 0.0 && spec.replay_pool_ids.is_empty() {
        tracing::warn!("replay ratio {} with an empty replay pool", spec.replay_ratio);
    }
    let count = replay_count(spec);
    if count > 0 {
        let picks = rand::seq::index::sample(&mut rng, spec.replay_pool_ids.len(), count);
        mix.extend(picks.into_iter().map(|i| spec.replay_pool_ids[i].clone()));
    }
    mix.shuffle(&mut rng);
    mix
}

pub fn snapshot_digest(snap: &ClassificationSnapshot) -> Result<String> {
    Ok(io::sha256_hex(snap.to_jsonl()?.as_bytes()))
}

#[derive(Serialize, Deserialize)]
struct CurriculumHeader {
    strategy: Strategy,
    replay_ratio: f64,
    replay_base: ReplayBase,
    seed: u64,
    snapshot_digests: Vec<String>,
}

#[derive(Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
enum Role {
    Member,
    Replay,
}

#[derive(Serialize, Deserialize)]
struct CurriculumRecord {
    id: String,
    role: Role,
}

/// Header line, then one `{id, role}` line per member (in order) and per replay-pool id.
pub fn to_jsonl(spec: &CurriculumSpec) -> Result<String> {
    let mut out = io::to_jsonl([CurriculumHeader {
        strategy: spec.strategy,
        replay_ratio: spec.replay_ratio,
        replay_base: spec.replay_base,
        seed: spec.seed,
        snapshot_digests: spec.snapshot_digests.clone(),
    }])?;
    let members = spec.member_ids.iter().map(|id| CurriculumRecord {
        id: id.clone(),
        role: Role::Member,
    });
    let replay = spec.replay_pool_ids.iter().map(|id| CurriculumRecord {
        id: id.clone(),
        role: Role::Replay,
    });
    out.push_str(&io::to_jsonl(members.chain(replay))?);
    Ok(out)
}

pub fn from_jsonl(text: &str) -> Result<CurriculumSpec> {
    let mut lines = io::jsonl_lines(text);
    let (n, first) = lines.next().ok_or(Error::Parse {
        what: "curriculum header",
        line: 1,
        message: "empty file".into(),
    })?;
    let header: CurriculumHeader = io::parse_line("curriculum header", n, first)?;
    let mut spec = CurriculumSpec {
        strategy: header.strategy,
        replay_ratio: header.replay_ratio,
        replay_base: header.replay_base,
        seed: header.seed,
        member_ids: Vec::new(),
        replay_pool_ids: Vec::new(),
        snapshot_digests: header.snapshot_digests,
    };
    for (n, line) in lines {
        let rec: CurriculumRecord = io::parse_line("curriculum record", n, line)?;
        match rec.role {
            Role::Member => spec.member_ids.push(rec.id),
            Role::Replay => spec.replay_pool_ids.push(rec.id),
        }
    }
    spec.validate()?;
    Ok(spec)
}

pub fn save(spec: &CurriculumSpec, path: &std::path::Path) -> Result<()> {
    io::write_atomic(path, to_jsonl(spec)?.as_bytes())
}

pub fn load(path: &std::path::Path) -> Result<CurriculumSpec> {
    from_jsonl(&io::read_to_string(path)?)
}

/// Ids appearing in a set of epoch orderings, de-duplicated and sorted.
pub fn ids_in_plan(plan: &[Vec<String>]) -> BTreeSet<&str> {
    plan.iter().flatten().map(String::as_str).collect()
}
