//! Shared domain types: QA pairs, decoding settings, probe tallies, knowledge
//! labels, snapshots, transition matrices, curricula and trainer settings.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use num_rational::Ratio;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

/// One question with its ordered answers. `answers[0]` is the canonical answer.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QaPair {
    pub id: String,
    pub question: String,
    pub answers: Vec<String>,
    pub split: Split,
    #[serde(default)]
    pub meta: BTreeMap<String, String>,
}

/// Meta key naming the question pattern a pair was generated from.
pub const PATTERN_TAG: &str = "pattern";

impl QaPair {
    pub fn new(id: impl Into<String>, question: impl Into<String>, answers: &[&str]) -> Self {
        QaPair {
            id: id.into(),
            question: question.into(),
            answers: answers.iter().map(|a| a.to_string()).collect(),
            split: Split::Train,
            meta: BTreeMap::new(),
        }
    }

    pub fn with_split(mut self, split: Split) -> Self {
        self.split = split;
        self
    }

    pub fn with_meta(mut self, key: &str, value: &str) -> Self {
        self.meta.insert(key.to_string(), value.to_string());
        self
    }

    pub fn canonical_answer(&self) -> &str {
        &self.answers[0]
    }

    pub fn pattern(&self) -> Option<&str> {
        self.meta.get(PATTERN_TAG).map(String::as_str)
    }
}

/// A validated collection of QA pairs with unique ids, in input order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Corpus {
    pairs: Vec<QaPair>,
    index: HashMap<String, usize>,
}

/// Checks every pair invariant and id uniqueness.
pub fn validate_corpus(pairs: Vec<QaPair>) -> Result<Corpus> {
    let mut index = HashMap::with_capacity(pairs.len());
    for (i, pair) in pairs.iter().enumerate() {
        if pair.question.trim().is_empty() {
            return Err(Error::EmptyQuestion(pair.id.clone()));
        }
        if pair.answers.is_empty() || pair.answers.iter().any(|a| a.trim().is_empty()) {
            return Err(Error::EmptyAnswer(pair.id.clone()));
        }
        if index.insert(pair.id.clone(), i).is_some() {
            return Err(Error::DuplicateId(pair.id.clone()));
        }
    }
    Ok(Corpus { pairs, index })
}

impl Corpus {
    pub fn pairs(&self) -> &[QaPair] {
        &self.pairs
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&QaPair> {
        self.index.get(id).map(|&i| &self.pairs[i])
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.pairs.iter().map(|p| p.id.as_str())
    }

    pub fn split(&self, split: Split) -> Corpus {
        let pairs = self
            .pairs
            .iter()
            .filter(|p| p.split == split)
            .cloned()
            .collect();
        validate_corpus(pairs).expect("subset of a valid corpus is valid")
    }

    pub fn from_jsonl(text: &str) -> Result<Corpus> {
        let pairs = io::jsonl_lines(text)
            .map(|(n, line)| io::parse_line("corpus record", n, line))
            .collect::<Result<Vec<QaPair>>>()?;
        validate_corpus(pairs)
    }

    pub fn to_jsonl(&self) -> Result<String> {
        io::to_jsonl(&self.pairs)
    }

    pub fn load(path: &Path) -> Result<Corpus> {
        Corpus::from_jsonl(&io::read_to_string(path)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        io::write_atomic(path, self.to_jsonl()?.as_bytes())
    }
}

/// Generation settings for one probe mode.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecodingSpec {
    pub temperature: f64,
    pub samples_per_round: u32,
    /// `None` means no top-k truncation.
    pub top_k: Option<u32>,
    pub rounds: u32,
    pub max_new_tokens: u32,
}

impl DecodingSpec {
    pub const DEFAULT_ROUNDS: u32 = 10;
    pub const DEFAULT_MAX_NEW_TOKENS: u32 = 32;

    /// Temperature 0, one generation per round, ten rounds.
    pub fn greedy() -> Self {
        DecodingSpec {
            temperature: 0.0,
            samples_per_round: 1,
            top_k: None,
            rounds: Self::DEFAULT_ROUNDS,
            max_new_tokens: Self::DEFAULT_MAX_NEW_TOKENS,
        }
    }

    /// Temperature 0.5, top-k 40, sixteen samples per round, ten rounds.
    pub fn sampled() -> Self {
        DecodingSpec {
            temperature: 0.5,
            samples_per_round: 16,
            top_k: Some(40),
            rounds: Self::DEFAULT_ROUNDS,
            max_new_tokens: Self::DEFAULT_MAX_NEW_TOKENS,
        }
    }

    pub fn is_greedy(&self) -> bool {
        self.temperature == 0.0
    }

    pub fn total_generations(&self) -> u32 {
        self.rounds * self.samples_per_round
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidDecoding(m.to_string()));
        if !(self.temperature >= 0.0 && self.temperature.is_finite()) {
            return bad("temperature must be a non-negative finite number");
        }
        if self.samples_per_round == 0 {
            return bad("samples_per_round must be positive");
        }
        if self.is_greedy() && self.samples_per_round != 1 {
            return bad("greedy decoding takes exactly one sample per round");
        }
        if self.top_k == Some(0) {
            return bad("top_k must be positive");
        }
        if self.rounds == 0 {
            return bad("rounds must be at least 1");
        }
        if self.max_new_tokens == 0 {
            return bad("max_new_tokens must be positive");
        }
        Ok(())
    }
}

/// Raw correctness tallies for one QA pair.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProbeOutcome {
    pub qa_id: String,
    pub greedy_correct: u32,
    pub greedy_total: u32,
    pub sampled_correct: u32,
    pub sampled_total: u32,
}

impl ProbeOutcome {
    pub fn new(qa_id: impl Into<String>, greedy: (u32, u32), sampled: (u32, u32)) -> Self {
        ProbeOutcome {
            qa_id: qa_id.into(),
            greedy_correct: greedy.0,
            greedy_total: greedy.1,
            sampled_correct: sampled.0,
            sampled_total: sampled.1,
        }
    }
}

/// Exact correctness probabilities under greedy and sampled decoding.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProbeEstimate {
    pub p_greedy: Ratio<u64>,
    pub p_sampled: Ratio<u64>,
}

impl ProbeEstimate {
    /// Panics if either denominator is zero or a numerator exceeds its denominator.
    pub fn new(greedy: (u64, u64), sampled: (u64, u64)) -> Self {
        assert!(greedy.0 <= greedy.1 && sampled.0 <= sampled.1);
        ProbeEstimate {
            p_greedy: Ratio::new(greedy.0, greedy.1),
            p_sampled: Ratio::new(sampled.0, sampled.1),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum KnowledgeClass {
    HighlyKnown,
    MaybeKnown,
    WeaklyKnown,
    Unknown,
}

impl KnowledgeClass {
    pub const ALL: [KnowledgeClass; 4] = [
        KnowledgeClass::HighlyKnown,
        KnowledgeClass::MaybeKnown,
        KnowledgeClass::WeaklyKnown,
        KnowledgeClass::Unknown,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            KnowledgeClass::HighlyKnown => "HighlyKnown",
            KnowledgeClass::MaybeKnown => "MaybeKnown",
            KnowledgeClass::WeaklyKnown => "WeaklyKnown",
            KnowledgeClass::Unknown => "Unknown",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn coarse(self) -> CoarseClass {
        crate::classify::coarsen(self)
    }
}

impl fmt::Display for KnowledgeClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for KnowledgeClass {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        KnowledgeClass::ALL
            .into_iter()
            .find(|c| c.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown knowledge class {s:?}")))
    }
}

/// Three-way label where WeaklyKnown and Unknown are merged.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum CoarseClass {
    HighlyKnown,
    MaybeKnown,
    Residual,
}

impl CoarseClass {
    pub const ALL: [CoarseClass; 3] = [
        CoarseClass::HighlyKnown,
        CoarseClass::MaybeKnown,
        CoarseClass::Residual,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            CoarseClass::HighlyKnown => "HighlyKnown",
            CoarseClass::MaybeKnown => "MaybeKnown",
            CoarseClass::Residual => "Residual",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for CoarseClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Knowledge labels for every pair of a corpus at one point in a run.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClassificationSnapshot {
    pub model_ref: String,
    pub probe_config_digest: String,
    pub labels: BTreeMap<String, KnowledgeClass>,
    /// Unix seconds. Persisted in a sidecar so the snapshot file itself stays reproducible.
    pub created_at: Option<u64>,
    pub seed: u64,
}

#[derive(Serialize, Deserialize)]
struct SnapshotHeader {
    model_ref: String,
    digest: String,
    seed: u64,
}

#[derive(Serialize, Deserialize)]
struct SnapshotRecord {
    id: String,
    class: KnowledgeClass,
}

#[derive(Serialize, Deserialize)]
struct SnapshotMeta {
    created_at: u64,
}

impl ClassificationSnapshot {
    pub fn new(
        model_ref: impl Into<String>,
        digest: impl Into<String>,
        seed: u64,
        labels: BTreeMap<String, KnowledgeClass>,
    ) -> Self {
        ClassificationSnapshot {
            model_ref: model_ref.into(),
            probe_config_digest: digest.into(),
            labels,
            created_at: None,
            seed,
        }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<KnowledgeClass> {
        self.labels.get(id).copied()
    }

    pub fn label(&self, id: &str) -> Result<KnowledgeClass> {
        self.get(id).ok_or_else(|| Error::MissingLabel(id.to_string()))
    }

    pub fn ids_with(&self, class: KnowledgeClass) -> impl Iterator<Item = &str> {
        self.labels
            .iter()
            .filter(move |(_, c)| **c == class)
            .map(|(id, _)| id.as_str())
    }

    pub fn id_set(&self) -> BTreeSet<&str> {
        self.labels.keys().map(String::as_str).collect()
    }

    /// Header line followed by one `{id, class}` line per pair, sorted by id.
    pub fn to_jsonl(&self) -> Result<String> {
        let mut out = io::to_jsonl([SnapshotHeader {
            model_ref: self.model_ref.clone(),
            digest: self.probe_config_digest.clone(),
            seed: self.seed,
        }])?;
        out.push_str(&io::to_jsonl(self.labels.iter().map(|(id, class)| {
            SnapshotRecord {
                id: id.clone(),
                class: *class,
            }
        }))?);
        Ok(out)
    }

    pub fn from_jsonl(text: &str) -> Result<Self> {
        let mut lines = io::jsonl_lines(text);
        let (n, first) = lines.next().ok_or(Error::Parse {
            what: "snapshot header",
            line: 1,
            message: "empty file".into(),
        })?;
        let header: SnapshotHeader = io::parse_line("snapshot header", n, first)?;
        let mut labels = BTreeMap::new();
        for (n, line) in lines {
            let rec: SnapshotRecord = io::parse_line("snapshot record", n, line)?;
            if labels.insert(rec.id.clone(), rec.class).is_some() {
                return Err(Error::DuplicateId(rec.id));
            }
        }
        Ok(ClassificationSnapshot::new(
            header.model_ref,
            header.digest,
            header.seed,
            labels,
        ))
    }

    pub fn meta_path(path: &Path) -> std::path::PathBuf {
        let mut name = path.file_name().unwrap_or_default().to_os_string();
        name.push(".meta.json");
        path.with_file_name(name)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        io::write_atomic(path, self.to_jsonl()?.as_bytes())?;
        if let Some(created_at) = self.created_at {
            let meta = serde_json::to_vec(&SnapshotMeta { created_at })?;
            io::write_atomic(&Self::meta_path(path), &meta)?;
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut snap = Self::from_jsonl(&io::read_to_string(path)?)?;
        let meta_path = Self::meta_path(path);
        if meta_path.exists() {
            let meta: SnapshotMeta = serde_json::from_str(&io::read_to_string(&meta_path)?)?;
            snap.created_at = Some(meta.created_at);
        }
        Ok(snap)
    }
}

/// Counts of pairs moving from a row label to a column label between two snapshots.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TransitionMatrix {
    pub row_labels: Vec<String>,
    pub col_labels: Vec<String>,
    pub counts: Vec<Vec<u64>>,
}

impl TransitionMatrix {
    pub fn zeros(row_labels: Vec<String>, col_labels: Vec<String>) -> Self {
        let counts = vec![vec![0; col_labels.len()]; row_labels.len()];
        TransitionMatrix {
            row_labels,
            col_labels,
            counts,
        }
    }

    pub fn row_sums(&self) -> Vec<u64> {
        self.counts.iter().map(|r| r.iter().sum()).collect()
    }

    pub fn col_sums(&self) -> Vec<u64> {
        (0..self.col_labels.len())
            .map(|j| self.counts.iter().map(|r| r[j]).sum())
            .collect()
    }

    pub fn total(&self) -> u64 {
        self.row_sums().iter().sum()
    }

    /// Sum of cells whose row and column carry different labels.
    pub fn off_diagonal(&self) -> u64 {
        let mut sum = 0;
        for (i, row) in self.counts.iter().enumerate() {
            for (j, &c) in row.iter().enumerate() {
                if self.row_labels[i] != self.col_labels[j] {
                    sum += c;
                }
            }
        }
        sum
    }

    pub fn get(&self, row: &str, col: &str) -> Option<u64> {
        let i = self.row_labels.iter().position(|l| l == row)?;
        let j = self.col_labels.iter().position(|l| l == col)?;
        Some(self.counts[i][j])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    #[serde(rename = "stage1")]
    Stage1MaybeKnown,
    S1,
    S2,
    S3,
    S4,
    S5,
}

impl Strategy {
    pub fn as_str(self) -> &'static str {
        match self {
            Strategy::Stage1MaybeKnown => "stage1",
            Strategy::S1 => "s1",
            Strategy::S2 => "s2",
            Strategy::S3 => "s3",
            Strategy::S4 => "s4",
            Strategy::S5 => "s5",
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "stage1" | "stage1maybeknown" => Ok(Strategy::Stage1MaybeKnown),
            "s1" => Ok(Strategy::S1),
            "s2" => Ok(Strategy::S2),
            "s3" => Ok(Strategy::S3),
            "s4" => Ok(Strategy::S4),
            "s5" => Ok(Strategy::S5),
            _ => Err(Error::UnknownStrategy(s.to_string())),
        }
    }
}

/// What the replay ratio is a fraction of.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReplayBase {
    #[default]
    Pool,
    Members,
}

/// The training set of one stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurriculumSpec {
    pub strategy: Strategy,
    pub replay_ratio: f64,
    #[serde(default)]
    pub replay_base: ReplayBase,
    pub seed: u64,
    pub member_ids: Vec<String>,
    pub replay_pool_ids: Vec<String>,
    #[serde(default)]
    pub snapshot_digests: Vec<String>,
}

impl CurriculumSpec {
    pub fn validate(&self) -> Result<()> {
        let members: BTreeSet<&str> = self.member_ids.iter().map(String::as_str).collect();
        if members.len() != self.member_ids.len() {
            return Err(Error::Config("curriculum members contain duplicates".into()));
        }
        if self
            .replay_pool_ids
            .iter()
            .any(|id| members.contains(id.as_str()))
        {
            return Err(Error::Config(
                "replay pool overlaps curriculum members".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.replay_ratio) {
            return Err(Error::Config("replay ratio must lie in [0, 1]".into()));
        }
        if self.replay_ratio > 0.0 && self.strategy != Strategy::S5 {
            return Err(Error::Config(format!(
                "replay is only defined for s5, not {}",
                self.strategy
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Schedule {
    Cosine,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Optimizer {
    Adamw,
}

/// Hyperparameters handed to the external trainer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainerConfig {
    pub adapter_rank: u32,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub batch_size: u32,
    pub max_epochs: u32,
    pub schedule: Schedule,
    pub optimizer: Optimizer,
}

impl TrainerConfig {
    /// Rank 64, lr 3e-4, no weight decay, batch 32, ten epochs.
    pub fn stage1() -> Self {
        TrainerConfig {
            adapter_rank: 64,
            learning_rate: 3e-4,
            weight_decay: 0.0,
            batch_size: 32,
            max_epochs: 10,
            schedule: Schedule::Cosine,
            optimizer: Optimizer::Adamw,
        }
    }

    /// Continued fine-tuning: lr 1.5e-4, weight decay 0.01, three epochs.
    pub fn stage2() -> Self {
        TrainerConfig {
            learning_rate: 1.5e-4,
            weight_decay: 0.01,
            max_epochs: 3,
            ..Self::stage1()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.adapter_rank == 0 || self.batch_size == 0 || self.max_epochs == 0 {
            return Err(Error::Config(
                "adapter_rank, batch_size and max_epochs must be positive".into(),
            ));
        }
        // negated so that NaN is rejected too
        #[allow(clippy::neg_cmp_op_on_partial_ord)]
        if !(self.learning_rate > 0.0) || !(self.weight_decay >= 0.0) {
            return Err(Error::Config(
                "learning_rate must be positive and weight_decay non-negative".into(),
            ));
        }
        Ok(())
    }
}
