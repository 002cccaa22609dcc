//! Probe, curate, train, re-probe: the full two-stage and multi-round runs.
//!
//! Every step writes its product into the run directory under a name derived
//! from its inputs, so a rerun after a crash skips finished work:
//!
//! ```text
//! run.lock                    held while a run is active
//! config.json                 resolved pipeline configuration
//! eval/prompts.jsonl          fixed evaluation prompts
//! eval/<key>.json             per-checkpoint evaluation results
//! probes/<key>.jsonl          probe campaign outcomes, keyed by probe inputs
//! snapshots/<name>.jsonl      classification snapshots
//! curricula/<stage>.jsonl     training sets
//! stages/<stage>/             trainer directory and record.json
//! reports/<name>.txt|.json    transition reports
//! ledger.json                 the run record
//! timings.json                wall-clock seconds per step
//! ```

pub mod eval;
pub mod ledger;
pub mod trainer;
pub mod world;

use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::analytics::{aggregate_counts, accuracy_by_class, gain_report, render_gain, TransitionReport};
use crate::classify;
use crate::curriculum::{self, replay_count, snapshot_digest};
use crate::error::{Error, Result};
use crate::io;
use crate::model::{
    ClassificationSnapshot, Corpus, CurriculumSpec, DecodingSpec, ReplayBase, Split, Strategy,
    TrainerConfig,
};
use crate::probe::{run_campaign, Backend, CampaignOptions, ProbeConfig, RetryPolicy, SampleMode};
use crate::prompt::{MatcherPolicy, DEFAULT_EXEMPLARS};

pub use eval::{evaluate, evaluate_accuracy, format_accuracy, EvalOptions, EvalResult, FixedPrompts, EVAL_SEED};
pub use ledger::{stop_decision, RunLedger, RunLock, RunStatus, StageRecord, StageStatus, StopReason};
pub use trainer::{
    train_stage, ExternalTrainer, ScriptedTrainer, StageScript, Trainer, TrainerManifest,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub run_id: String,
    pub base_model: String,
    pub seed: u64,
    pub eval_seed: u64,
    pub parallelism: usize,
    pub greedy: DecodingSpec,
    pub sampled: DecodingSpec,
    pub exemplars: usize,
    pub matcher: MatcherPolicy,
    pub sample_mode: SampleMode,
    pub retry: RetryPolicy,
    pub strategy: Strategy,
    pub replay_ratio: f64,
    pub replay_base: ReplayBase,
    pub stage1: TrainerConfig,
    pub stage2: TrainerConfig,
    /// Start every second-stage round from a fresh adapter instead of the previous best checkpoint.
    pub fresh_adapter: bool,
    /// Second-stage rounds; 1 is the plain two-stage run.
    pub max_rounds: u32,
    /// Percentage points of max accuracy a round must add for another round to follow.
    pub min_improvement: f64,
    /// Re-probe the untuned model with another seed for a noise baseline.
    pub noise_baseline: bool,
    /// Probe the test split with the untuned model to break accuracy down by label.
    pub origin_breakdown: bool,
    pub poll_interval_ms: u64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            run_id: "run".into(),
            base_model: "base".into(),
            seed: 42,
            eval_seed: EVAL_SEED,
            parallelism: 8,
            greedy: DecodingSpec::greedy(),
            sampled: DecodingSpec::sampled(),
            exemplars: DEFAULT_EXEMPLARS,
            matcher: MatcherPolicy::default(),
            sample_mode: SampleMode::SingleCall,
            retry: RetryPolicy::default(),
            strategy: Strategy::S5,
            replay_ratio: curriculum::DEFAULT_REPLAY_RATIO,
            replay_base: ReplayBase::Pool,
            stage1: TrainerConfig::stage1(),
            stage2: TrainerConfig::stage2(),
            fresh_adapter: false,
            max_rounds: 1,
            min_improvement: 0.05,
            noise_baseline: false,
            origin_breakdown: false,
            poll_interval_ms: 20,
        }
    }
}

impl PipelineConfig {
    pub fn probe_config(&self, model: &str, seed: u64) -> ProbeConfig {
        ProbeConfig {
            model: model.to_string(),
            greedy: self.greedy,
            sampled: self.sampled,
            exemplars: self.exemplars,
            matcher: self.matcher,
            sample_mode: self.sample_mode,
            seed,
            retry: self.retry,
        }
    }

    pub fn eval_options(&self) -> EvalOptions {
        EvalOptions {
            matcher: self.matcher,
            retry: self.retry,
            max_new_tokens: self.greedy.max_new_tokens,
            parallelism: self.parallelism,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.probe_config(&self.base_model, self.seed).validate()?;
        self.stage1.validate()?;
        self.stage2.validate()?;
        if self.parallelism == 0 {
            return Err(Error::Config("parallelism must be at least 1".into()));
        }
        if self.strategy == Strategy::Stage1MaybeKnown {
            return Err(Error::UnknownStrategy("stage1 is not a second-stage strategy".into()));
        }
        if !(0.0..=1.0).contains(&self.replay_ratio) {
            return Err(Error::Config("replay ratio must lie in [0, 1]".into()));
        }
        if self.max_rounds == 0 {
            return Err(Error::Config("max_rounds must be at least 1".into()));
        }
        #[allow(clippy::neg_cmp_op_on_partial_ord)] // rejects NaN
        if !(self.min_improvement >= 0.0) {
            return Err(Error::Config("min_improvement must be non-negative".into()));
        }
        if self.run_id.is_empty() || self.base_model.is_empty() {
            return Err(Error::Config("run_id and base_model must be set".into()));
        }
        Ok(())
    }

    /// Digest over everything that shapes results; parallelism and polling do not.
    pub fn digest(&self) -> Result<String> {
        let mut c = self.clone();
        c.parallelism = 0;
        c.poll_interval_ms = 0;
        io::digest_of(&c)
    }
}

/// Name of the second-stage training step for `round` (1-based).
pub fn stage2_name(round: u32) -> String {
    if round == 1 {
        "stage2".into()
    } else {
        format!("stage2-round{round}")
    }
}

/// Probes `targets` and labels them. `checkpoint` makes the campaign resumable.
pub fn probe_and_classify(
    targets: &Corpus,
    pool: &Corpus,
    config: &ProbeConfig,
    backend: &dyn Backend,
    parallelism: usize,
    checkpoint: Option<PathBuf>,
) -> Result<ClassificationSnapshot> {
    let options = CampaignOptions {
        parallelism,
        checkpoint,
        ..Default::default()
    };
    let outcomes = run_campaign(targets, pool, config, backend, &options)?;
    let digest = config.digest(pool, backend.wants_id_tag())?;
    let outcomes: HashMap<_, _> = outcomes.into_iter().collect();
    classify::snapshot(targets, &outcomes, &config.model, &digest, config.seed)
}

/// File name under `probes/` for a campaign: a digest of its inputs.
pub fn probe_cache_key(config: &ProbeConfig, targets: &Corpus, pool: &Corpus, id_tagged: bool) -> Result<String> {
    #[derive(Serialize)]
    struct Key<'a> {
        probe: String,
        model: &'a str,
        seed: u64,
        targets: String,
    }
    io::digest_of(&Key {
        probe: config.digest(pool, id_tagged)?,
        model: &config.model,
        seed: config.seed,
        targets: io::sha256_hex(targets.to_jsonl()?.as_bytes()),
    })
}

/// Builds the curriculum of a second-stage round.
pub fn stage2_curriculum(
    config: &PipelineConfig,
    corpus: &Corpus,
    origin: &ClassificationSnapshot,
    previous: &ClassificationSnapshot,
) -> Result<CurriculumSpec> {
    let mut spec = curriculum::stage2_dataset(
        config.strategy,
        origin,
        previous,
        corpus,
        config.seed,
        config.replay_ratio,
    )?;
    spec.replay_base = config.replay_base;
    Ok(spec)
}

/// Orchestrates one run in `run_dir`.
pub struct Pipeline<'a> {
    pub config: PipelineConfig,
    pub corpus: &'a Corpus,
    pub backend: &'a dyn Backend,
    pub trainer: &'a dyn Trainer,
    pub run_dir: PathBuf,
}

struct RunState {
    ledger: RunLedger,
    timings: BTreeMap<String, f64>,
    prompts: Option<FixedPrompts>,
    test: Corpus,
    train: Corpus,
    test_origin: Option<ClassificationSnapshot>,
}

impl<'a> Pipeline<'a> {
    pub fn new(
        config: PipelineConfig,
        corpus: &'a Corpus,
        backend: &'a dyn Backend,
        trainer: &'a dyn Trainer,
        run_dir: impl Into<PathBuf>,
    ) -> Self {
        Pipeline {
            config,
            corpus,
            backend,
            trainer,
            run_dir: run_dir.into(),
        }
    }

    pub fn ledger_path(&self) -> PathBuf {
        self.run_dir.join("ledger.json")
    }

    pub fn snapshot_path(&self, name: &str) -> PathBuf {
        self.run_dir.join("snapshots").join(format!("{name}.jsonl"))
    }

    pub fn curriculum_path(&self, stage: &str) -> PathBuf {
        self.run_dir.join("curricula").join(format!("{stage}.jsonl"))
    }

    pub fn stage_dir(&self, stage: &str) -> PathBuf {
        self.run_dir.join("stages").join(stage)
    }

    pub fn report_path(&self, name: &str) -> PathBuf {
        self.run_dir.join("reports").join(format!("{name}.txt"))
    }

    fn fresh_state(&self) -> Result<RunState> {
        Ok(RunState {
            ledger: RunLedger::new(&self.config.run_id, &self.config.digest()?),
            timings: BTreeMap::new(),
            prompts: None,
            test: self.corpus.split(Split::Test),
            train: self.corpus.split(Split::Train),
            test_origin: None,
        })
    }

    /// Probes one split with `model_ref` and writes `snapshots/<name>.jsonl`.
    /// Exemplars always come from the train split.
    pub fn probe_step(&self, name: &str, model_ref: &str, seed: u64, split: Split) -> Result<ClassificationSnapshot> {
        self.config.validate()?;
        let _lock = RunLock::acquire(&self.run_dir)?;
        let mut state = self.fresh_state()?;
        let targets = self.corpus.split(split);
        let pool = state.train.clone();
        self.snapshot_step(&mut state, name, model_ref, seed, &targets, &pool)
    }

    /// Trains one stage on `spec`, evaluating every epoch on the fixed prompt set.
    /// Uses `snapshots/test-origin.jsonl` for the per-label breakdown when present.
    pub fn train_step(
        &self,
        name: &str,
        spec: &CurriculumSpec,
        config: &TrainerConfig,
        resume_from: Option<String>,
    ) -> Result<StageRecord> {
        self.config.validate()?;
        let _lock = RunLock::acquire(&self.run_dir)?;
        let mut state = self.fresh_state()?;
        let prompts = self.eval_prompts(&mut state)?;
        state.ledger.eval_set = Some(prompts.digest()?);
        state.prompts = Some(prompts);
        let origin = self.snapshot_path("test-origin");
        if origin.exists() {
            state.test_origin = Some(ClassificationSnapshot::load(&origin)?);
        }
        self.stage_step(&mut state, name, spec, config, resume_from)
    }

    /// Runs to completion or to the first failure. The ledger is written either way.
    pub fn run(&self) -> Result<RunLedger> {
        self.config.validate()?;
        let _lock = RunLock::acquire(&self.run_dir)?;
        let mut state = self.fresh_state()?;
        let result = self.run_steps(&mut state);
        match &result {
            Ok(()) => state.ledger.status = RunStatus::Complete,
            Err(e) => {
                state.ledger.status = RunStatus::Failed;
                state.ledger.failure = Some(e.to_string());
            }
        }
        let saved = state.ledger.save(&self.ledger_path()).and_then(|_| self.save_timings(&state));
        result?;
        saved?;
        Ok(state.ledger)
    }

    fn save_timings(&self, state: &RunState) -> Result<()> {
        io::write_atomic(
            &self.run_dir.join("timings.json"),
            &serde_json::to_vec_pretty(&state.timings)?,
        )
    }

    fn timed<T>(&self, state: &mut RunState, step: &str, f: impl FnOnce(&mut RunState) -> Result<T>) -> Result<T> {
        let start = Instant::now();
        let out = f(state);
        state.timings.insert(step.to_string(), start.elapsed().as_secs_f64());
        out
    }

    fn run_steps(&self, state: &mut RunState) -> Result<()> {
        let cfg = &self.config;
        io::write_atomic(&self.run_dir.join("config.json"), &serde_json::to_vec_pretty(cfg)?)?;
        let prompts = self.timed(state, "eval prompts", |s| self.eval_prompts(s))?;
        state.ledger.eval_set = Some(prompts.digest()?);
        state.prompts = Some(prompts);

        let snap0 = self.timed(state, "probe origin", |s| {
            let (targets, pool) = (s.train.clone(), s.train.clone());
            self.snapshot_step(s, "origin", &cfg.base_model, cfg.seed, &targets, &pool)
        })?;
        let baseline = if cfg.noise_baseline {
            Some(self.timed(state, "probe origin-retest", |s| {
                let (targets, pool) = (s.train.clone(), s.train.clone());
                self.snapshot_step(s, "origin-retest", &cfg.base_model, cfg.seed.wrapping_add(1), &targets, &pool)
            })?)
        } else {
            None
        };
        if cfg.origin_breakdown {
            let test_origin = self.timed(state, "probe test-origin", |s| {
                let (targets, pool) = (s.test.clone(), s.train.clone());
                self.snapshot_step(s, "test-origin", &cfg.base_model, cfg.seed, &targets, &pool)
            })?;
            state.test_origin = Some(test_origin);
        }
        let origin_eval = self.timed(state, "eval origin", |s| self.eval_cached(s, &cfg.base_model))?;
        state.ledger.origin_accuracy = Some(origin_eval.accuracy);
        state.ledger.origin_accuracy_by_class = state
            .test_origin
            .as_ref()
            .map(|o| by_class(&origin_eval, o));

        let c1 = curriculum::stage1_dataset(&snap0, self.corpus, cfg.seed)?;
        let rec1 = self.timed(state, "train stage1", |s| {
            self.stage_step(s, "stage1", &c1, &cfg.stage1, None)
        })?;
        let ckpt1 = rec1.checkpoint.clone().expect("complete stage has a checkpoint");
        let snap1 = self.timed(state, "probe stage1", |s| {
            let (targets, pool) = (s.train.clone(), s.train.clone());
            self.snapshot_step(s, "stage1", &ckpt1, cfg.seed, &targets, &pool)
        })?;
        self.report_step(
            state,
            "stage1",
            ("origin", &snap0),
            ("stage1", &snap1),
            None,
            baseline.as_ref().map(|b| (&snap0, b)),
        )?;

        let mut previous = (String::from("stage1"), snap1.clone(), rec1);
        for round in 1..=cfg.max_rounds {
            let name = stage2_name(round);
            let spec = stage2_curriculum(cfg, self.corpus, &snap0, &previous.1)?;
            let resume = if cfg.fresh_adapter {
                None
            } else {
                previous.2.checkpoint.clone()
            };
            let rec = self.timed(state, &format!("train {name}"), |s| {
                self.stage_step(s, &name, &spec, &cfg.stage2, resume)
            })?;
            let ckpt = rec.checkpoint.clone().expect("complete stage has a checkpoint");
            let snap = self.timed(state, &format!("probe {name}"), |s| {
                let (targets, pool) = (s.train.clone(), s.train.clone());
                self.snapshot_step(s, &name, &ckpt, cfg.seed, &targets, &pool)
            })?;
            let origin = (round == 1).then_some(&snap0);
            self.report_step(state, &name, (&previous.0, &previous.1), (&name, &snap), origin, None)?;
            let stop = stop_decision(
                100.0 * previous.2.max_accuracy.unwrap_or(0.0),
                100.0 * rec.max_accuracy.unwrap_or(0.0),
                round,
                cfg.max_rounds,
                cfg.min_improvement,
            );
            previous = (name, snap, rec);
            if let Some(reason) = stop {
                state.ledger.stop_reason = Some(reason);
                break;
            }
        }

        let gain = gain_report(
            &aggregate_counts(&snap0, true),
            &aggregate_counts(&snap1, true),
            &aggregate_counts(&previous.1, true),
        )?;
        state.ledger.gain = Some(gain);
        io::write_atomic(&self.report_path("summary"), self.summary(state, &gain).as_bytes())?;
        Ok(())
    }

    fn summary(&self, state: &RunState, gain: &crate::analytics::GainReport) -> String {
        let mut out = String::new();
        if let Some(a) = state.ledger.origin_accuracy {
            out.push_str(&format!("{:<16} {}\n", self.config.base_model, format_accuracy(a)));
        }
        for s in &state.ledger.stages {
            out.push_str(&format!(
                "{:<16} max {} final {} best epoch {}\n",
                s.name,
                s.max_accuracy.map(format_accuracy).unwrap_or_default(),
                s.final_accuracy.map(format_accuracy).unwrap_or_default(),
                s.best_epoch.unwrap_or(0)
            ));
        }
        out.push_str(&render_gain(gain));
        if let Some(r) = state.ledger.stop_reason {
            out.push_str(&format!("stopped: {}\n", r.as_str()));
        }
        out
    }

    fn eval_prompts(&self, state: &mut RunState) -> Result<FixedPrompts> {
        let path = self.run_dir.join("eval").join("prompts.jsonl");
        let built = FixedPrompts::build(&state.test, &state.train, self.config.exemplars, self.config.eval_seed)?;
        if path.exists() && FixedPrompts::load(&path)? == built {
            return Ok(built);
        }
        built.save(&path)?;
        Ok(built)
    }

    fn eval_cached(&self, state: &RunState, model_ref: &str) -> Result<EvalResult> {
        let prompts = state.prompts.as_ref().expect("prompts built first");
        let options = self.config.eval_options();
        #[derive(Serialize)]
        struct Key<'k> {
            model: &'k str,
            prompts: String,
            matcher: MatcherPolicy,
            max_new_tokens: u32,
        }
        let key = io::digest_of(&Key {
            model: model_ref,
            prompts: prompts.digest()?,
            matcher: options.matcher,
            max_new_tokens: options.max_new_tokens,
        })?;
        let path = self.run_dir.join("eval").join(format!("{key}.json"));
        if path.exists() {
            return Ok(serde_json::from_str(&io::read_to_string(&path)?)?);
        }
        let result = evaluate(model_ref, &state.test, prompts, self.backend, &options)?;
        io::write_atomic(&path, &serde_json::to_vec(&result)?)?;
        Ok(result)
    }

    fn snapshot_step(
        &self,
        state: &mut RunState,
        name: &str,
        model_ref: &str,
        seed: u64,
        targets: &Corpus,
        pool: &Corpus,
    ) -> Result<ClassificationSnapshot> {
        let config = self.config.probe_config(model_ref, seed);
        let key = probe_cache_key(&config, targets, pool, self.backend.wants_id_tag())?;
        let checkpoint = self.run_dir.join("probes").join(format!("{key}.jsonl"));
        let mut snap = probe_and_classify(
            targets,
            pool,
            &config,
            self.backend,
            self.config.parallelism,
            Some(checkpoint),
        )?;
        let path = self.snapshot_path(name);
        let unchanged = path.exists() && io::read_to_string(&path)? == snap.to_jsonl()?;
        if !unchanged {
            snap.created_at = Some(io::now_unix());
            snap.save(&path)?;
        }
        state.ledger.snapshots.push(ledger::SnapshotEntry {
            name: name.to_string(),
            model_ref: model_ref.to_string(),
            digest: snapshot_digest(&snap)?,
            probe_digest: snap.probe_config_digest.clone(),
            seed,
            counts: aggregate_counts(&snap, false),
        });
        snap.created_at = None;
        Ok(snap)
    }

    fn stage_step(
        &self,
        state: &mut RunState,
        name: &str,
        spec: &CurriculumSpec,
        config: &TrainerConfig,
        resume_from: Option<String>,
    ) -> Result<StageRecord> {
        let curriculum_text = curriculum::to_jsonl(spec)?;
        io::write_atomic(&self.curriculum_path(name), curriculum_text.as_bytes())?;
        let mut record = StageRecord {
            name: name.to_string(),
            strategy: spec.strategy,
            status: StageStatus::Failed,
            snapshot_digests: spec.snapshot_digests.clone(),
            curriculum_digest: io::sha256_hex(curriculum_text.as_bytes()),
            members: spec.member_ids.len(),
            replay_per_epoch: replay_count(spec),
            resume_from: resume_from.clone(),
            epochs: Vec::new(),
            best_epoch: None,
            checkpoint: None,
            max_accuracy: None,
            final_accuracy: None,
            accuracy_by_origin: None,
            failure: None,
        };
        let dir = self.stage_dir(name);
        let record_path = dir.join("record.json");
        if record_path.exists() {
            let done: StageRecord = serde_json::from_str(&io::read_to_string(&record_path)?)?;
            if done.status == StageStatus::Complete
                && done.curriculum_digest == record.curriculum_digest
                && done.resume_from == record.resume_from
            {
                tracing::info!(stage = name, "reusing finished stage");
                state.ledger.stages.push(done.clone());
                return Ok(done);
            }
        }
        let eval_ref = state.ledger.eval_set.clone().unwrap_or_default();
        let manifest = TrainerManifest::build(spec, self.corpus, config.clone(), resume_from, &eval_ref)?;
        let poll = Duration::from_millis(self.config.poll_interval_ms.max(1));
        let trained = {
            let state_ref: &RunState = state;
            let mut hook = |_epoch: u32, checkpoint: &str| {
                self.eval_cached(state_ref, checkpoint).map(|r| r.accuracy)
            };
            train_stage(&dir, &manifest, self.trainer, &mut hook, poll)
        };
        match trained {
            Ok(t) => {
                let best = self.eval_cached(state, &t.checkpoint)?;
                record.status = StageStatus::Complete;
                record.best_epoch = Some(t.best_epoch);
                record.max_accuracy = Some(t.max_accuracy());
                record.final_accuracy = Some(t.final_accuracy());
                record.checkpoint = Some(t.checkpoint.clone());
                record.accuracy_by_origin = state.test_origin.as_ref().map(|o| by_class(&best, o));
                record.epochs = t.epochs;
                io::write_atomic(&record_path, &serde_json::to_vec_pretty(&record)?)?;
                state.ledger.stages.push(record.clone());
                Ok(record)
            }
            Err(failure) => {
                record.epochs = failure.completed;
                record.failure = Some(failure.error.to_string());
                io::write_atomic(&record_path, &serde_json::to_vec_pretty(&record)?)?;
                state.ledger.stages.push(record);
                Err(failure.error)
            }
        }
    }

    fn report_step(
        &self,
        state: &mut RunState,
        name: &str,
        before: (&str, &ClassificationSnapshot),
        after: (&str, &ClassificationSnapshot),
        origin: Option<&ClassificationSnapshot>,
        baseline: Option<(&ClassificationSnapshot, &ClassificationSnapshot)>,
    ) -> Result<()> {
        let report = TransitionReport::build(before.1, after.1, origin, baseline)?;
        let digest = write_report(&self.report_path(name), &report)?;
        state.ledger.reports.push(ledger::ReportEntry {
            name: name.to_string(),
            before: before.0.to_string(),
            after: after.0.to_string(),
            digest,
        });
        Ok(())
    }
}

/// Writes the rendered report to `path` and its JSON form next to it; returns the JSON digest.
pub fn write_report(path: &Path, report: &TransitionReport) -> Result<String> {
    let json = serde_json::to_string_pretty(report)?;
    io::write_atomic(path, report.render().as_bytes())?;
    io::write_atomic(&path.with_extension("json"), json.as_bytes())?;
    Ok(io::sha256_hex(json.as_bytes()))
}

fn by_class(result: &EvalResult, origin: &ClassificationSnapshot) -> BTreeMap<String, f64> {
    accuracy_by_class(&result.correct, origin)
        .into_iter()
        .map(|(c, a)| (c.as_str().to_string(), a))
        .collect()
}

/// Reads a ledger from a run directory.
pub fn load_ledger(run_dir: &Path) -> Result<RunLedger> {
    RunLedger::load(&run_dir.join("ledger.json"))
}
