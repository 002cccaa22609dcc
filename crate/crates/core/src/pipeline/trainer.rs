//! The file-and-sentinel contract with the external trainer.
//!
//! A stage directory holds:
//!
//! ```text
//! train.jsonl            {id, prompt_text, target_text} per line
//! epochs/epoch_<k>.ids   one id per line, the training order of epoch k (1-based)
//! hparams.json           adapter_rank, learning_rate, weight_decay, batch_size,
//!                        max_epochs, schedule, optimizer, resume_from
//! manifest.json          eval_set_ref and record/epoch counts
//! ```
//!
//! The trainer is run with the directory as its only argument. After epoch `k`
//! it writes the checkpoint reference to `checkpoint_epoch_<k>` and then creates
//! `epoch_<k>.done`; it exits 0 after the last epoch.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::Read;
use std::path::{Path, PathBuf};
use std::process::{Child, Command, Stdio};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::curriculum::replay_epoch_mix;
use crate::error::{Error, Result};
use crate::io;
use crate::model::{Corpus, CurriculumSpec, TrainerConfig};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrainRecord {
    pub id: String,
    pub prompt_text: String,
    pub target_text: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainerManifest {
    pub train_records: Vec<TrainRecord>,
    pub config: TrainerConfig,
    pub resume_from: Option<String>,
    pub epoch_plan: Vec<Vec<String>>,
    pub eval_set_ref: String,
}

#[derive(Serialize, Deserialize)]
struct HParams {
    #[serde(flatten)]
    config: TrainerConfig,
    resume_from: Option<String>,
}

#[derive(Serialize, Deserialize)]
struct ManifestSummary {
    eval_set_ref: String,
    records: usize,
    epochs: usize,
}

pub const HPARAMS_FILE: &str = "hparams.json";
pub const TRAIN_FILE: &str = "train.jsonl";

pub fn epoch_ids_path(dir: &Path, epoch: u32) -> PathBuf {
    dir.join("epochs").join(format!("epoch_{epoch}.ids"))
}

pub fn sentinel_path(dir: &Path, epoch: u32) -> PathBuf {
    dir.join(format!("epoch_{epoch}.done"))
}

pub fn checkpoint_path(dir: &Path, epoch: u32) -> PathBuf {
    dir.join(format!("checkpoint_epoch_{epoch}"))
}

impl TrainerManifest {
    /// One epoch ordering per `config.max_epochs` from the curriculum's replay mix;
    /// records cover every id in the plan, sorted by id.
    pub fn build(
        curriculum: &CurriculumSpec,
        corpus: &Corpus,
        config: TrainerConfig,
        resume_from: Option<String>,
        eval_set_ref: &str,
    ) -> Result<Self> {
        config.validate()?;
        let epoch_plan: Vec<Vec<String>> = (1..=config.max_epochs)
            .map(|epoch| replay_epoch_mix(curriculum, epoch))
            .collect();
        let ids: BTreeSet<&str> = epoch_plan.iter().flatten().map(String::as_str).collect();
        let train_records = ids
            .into_iter()
            .map(|id| {
                let pair = corpus
                    .get(id)
                    .ok_or_else(|| Error::InvalidManifest(format!("id {id:?} not in corpus")))?;
                Ok(TrainRecord {
                    id: id.to_string(),
                    prompt_text: format!("Q: {}\nA:", pair.question),
                    target_text: format!(" {}", pair.canonical_answer()),
                })
            })
            .collect::<Result<_>>()?;
        let manifest = TrainerManifest {
            train_records,
            config,
            resume_from,
            epoch_plan,
            eval_set_ref: eval_set_ref.to_string(),
        };
        manifest.validate()?;
        Ok(manifest)
    }

    pub fn validate(&self) -> Result<()> {
        self.config.validate()?;
        if self.epoch_plan.len() != self.config.max_epochs as usize {
            return Err(Error::InvalidManifest(format!(
                "{} epoch orderings for {} epochs",
                self.epoch_plan.len(),
                self.config.max_epochs
            )));
        }
        let known: BTreeSet<&str> = self.train_records.iter().map(|r| r.id.as_str()).collect();
        if let Some(id) = self.epoch_plan.iter().flatten().find(|id| !known.contains(id.as_str())) {
            return Err(Error::InvalidManifest(format!("epoch plan id {id:?} has no record")));
        }
        Ok(())
    }

    /// Writes the stage directory, clearing sentinels and checkpoints of an earlier attempt.
    pub fn write(&self, dir: &Path) -> Result<()> {
        io::create_dir_all(&dir.join("epochs"))?;
        clear_epoch_files(dir)?;
        io::write_atomic(&dir.join(TRAIN_FILE), io::to_jsonl(&self.train_records)?.as_bytes())?;
        for (k, ids) in self.epoch_plan.iter().enumerate() {
            let mut text = ids.join("\n");
            text.push('\n');
            io::write_atomic(&epoch_ids_path(dir, k as u32 + 1), text.as_bytes())?;
        }
        let hparams = HParams {
            config: self.config.clone(),
            resume_from: self.resume_from.clone(),
        };
        io::write_atomic(&dir.join(HPARAMS_FILE), &serde_json::to_vec_pretty(&hparams)?)?;
        let summary = ManifestSummary {
            eval_set_ref: self.eval_set_ref.clone(),
            records: self.train_records.len(),
            epochs: self.epoch_plan.len(),
        };
        io::write_atomic(&dir.join("manifest.json"), &serde_json::to_vec_pretty(&summary)?)
    }
}

fn clear_epoch_files(dir: &Path) -> Result<()> {
    let entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    for entry in entries {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        let name = entry.file_name().to_string_lossy().into_owned();
        if (name.starts_with("epoch_") && name.ends_with(".done")) || name.starts_with("checkpoint_epoch_") {
            fs::remove_file(entry.path()).map_err(|e| Error::io(entry.path(), e))?;
        }
    }
    Ok(())
}

/// Reads back the hyperparameters a trainer sees.
pub fn read_hparams(dir: &Path) -> Result<(TrainerConfig, Option<String>)> {
    let path = dir.join(HPARAMS_FILE);
    let h: HParams = serde_json::from_str(&io::read_to_string(&path)?)
        .map_err(|e| Error::InvalidManifest(format!("{}: {e}", path.display())))?;
    Ok((h.config, h.resume_from))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TrainerExit {
    pub code: Option<i32>,
    pub stderr: String,
}

impl TrainerExit {
    pub fn success(&self) -> bool {
        self.code == Some(0)
    }
}

pub trait TrainerProcess: Send {
    /// `Some` once the trainer has exited.
    fn poll(&mut self) -> Result<Option<TrainerExit>>;
}

pub trait Trainer: Send + Sync {
    fn launch(&self, stage_dir: &Path) -> Result<Box<dyn TrainerProcess>>;
}

/// Runs a configured command with the stage directory as its only argument.
#[derive(Debug, Clone)]
pub struct ExternalTrainer {
    pub program: String,
    pub args: Vec<String>,
}

impl ExternalTrainer {
    /// Splits a command line on whitespace.
    pub fn from_command_line(command: &str) -> Result<Self> {
        let mut parts = command.split_whitespace().map(String::from);
        let program = parts
            .next()
            .ok_or_else(|| Error::Config("trainer command is empty".into()))?;
        Ok(ExternalTrainer {
            program,
            args: parts.collect(),
        })
    }
}

struct ChildProcess {
    child: Child,
    stderr: Arc<Mutex<String>>,
    reader: Option<JoinHandle<()>>,
}

const STDERR_EXCERPT: usize = 4000;

impl TrainerProcess for ChildProcess {
    fn poll(&mut self) -> Result<Option<TrainerExit>> {
        let status = self
            .child
            .try_wait()
            .map_err(|e| Error::io("trainer process", e))?;
        Ok(status.map(|s| {
            if let Some(r) = self.reader.take() {
                let _ = r.join();
            }
            let stderr = self.stderr.lock().expect("stderr lock").clone();
            let excerpt = if stderr.len() > STDERR_EXCERPT {
                let mut start = stderr.len() - STDERR_EXCERPT;
                while !stderr.is_char_boundary(start) {
                    start += 1;
                }
                stderr[start..].to_string()
            } else {
                stderr
            };
            TrainerExit {
                code: s.code(),
                stderr: excerpt,
            }
        }))
    }
}

impl Trainer for ExternalTrainer {
    fn launch(&self, stage_dir: &Path) -> Result<Box<dyn TrainerProcess>> {
        let log = stage_dir.join("trainer.stdout.log");
        let stdout = fs::File::create(&log).map_err(|e| Error::io(&log, e))?;
        let mut child = Command::new(&self.program)
            .args(&self.args)
            .arg(stage_dir)
            .stdin(Stdio::null())
            .stdout(stdout)
            .stderr(Stdio::piped())
            .spawn()
            .map_err(|e| Error::TrainerFailed {
                code: None,
                stderr: format!("cannot start {}: {e}", self.program),
            })?;
        let stderr = Arc::new(Mutex::new(String::new()));
        let mut pipe = child.stderr.take().expect("piped stderr");
        let sink = Arc::clone(&stderr);
        let reader = std::thread::spawn(move || {
            let mut buf = String::new();
            let _ = pipe.read_to_string(&mut buf);
            sink.lock().expect("stderr lock").push_str(&buf);
        });
        Ok(Box::new(ChildProcess {
            child,
            stderr,
            reader: Some(reader),
        }))
    }
}

/// Script for one stage of the in-process trainer.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StageScript {
    /// Model skill reached after each epoch; later epochs repeat the last value.
    pub skills: Vec<f64>,
    /// Exit with code 1 right after writing this many epochs.
    #[serde(default)]
    pub fail_after: Option<u32>,
}

/// In-process trainer that honors the stage-directory contract without learning anything.
///
/// Checkpoint references are `{stage}/epoch{k}` where `stage` is the stage
/// directory name; [`ScriptedTrainer::skill_table`] maps each to its scripted
/// skill so a latent-rule mock can answer as that checkpoint would.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ScriptedTrainer {
    pub stages: BTreeMap<String, StageScript>,
    /// Delay between epochs, to exercise sentinel polling.
    #[serde(default)]
    pub epoch_delay_ms: u64,
}

impl ScriptedTrainer {
    pub fn checkpoint_ref(stage: &str, epoch: u32) -> String {
        format!("{stage}/epoch{epoch}")
    }

    /// Skill for every checkpoint reference this trainer can emit within `max_epochs`.
    pub fn skill_table(&self, max_epochs: u32) -> BTreeMap<String, f64> {
        let mut table = BTreeMap::new();
        for (stage, script) in &self.stages {
            for epoch in 1..=max_epochs {
                if let Some(skill) = script.skill(epoch) {
                    table.insert(Self::checkpoint_ref(stage, epoch), skill);
                }
            }
        }
        table
    }
}

impl StageScript {
    fn skill(&self, epoch: u32) -> Option<f64> {
        let i = (epoch as usize).saturating_sub(1).min(self.skills.len().checked_sub(1)?);
        self.skills.get(i).copied()
    }
}

struct ThreadProcess {
    handle: Option<JoinHandle<TrainerExit>>,
}

impl TrainerProcess for ThreadProcess {
    fn poll(&mut self) -> Result<Option<TrainerExit>> {
        match &self.handle {
            Some(h) if h.is_finished() => {
                let exit = self
                    .handle
                    .take()
                    .expect("handle present")
                    .join()
                    .unwrap_or_else(|_| TrainerExit {
                        code: Some(101),
                        stderr: "scripted trainer panicked".into(),
                    });
                Ok(Some(exit))
            }
            Some(_) => Ok(None),
            None => Err(Error::Config("trainer process polled after exit".into())),
        }
    }
}

fn run_script(dir: &Path, script: Option<StageScript>, delay: Duration) -> TrainerExit {
    let fail = |code: i32, msg: String| TrainerExit {
        code: Some(code),
        stderr: msg,
    };
    let stage = dir
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    let Some(script) = script else {
        return fail(2, format!("no script for stage {stage:?}"));
    };
    let (config, _resume) = match read_hparams(dir) {
        Ok(h) => h,
        Err(e) => return fail(2, e.to_string()),
    };
    let records = match io::read_to_string(&dir.join(TRAIN_FILE)) {
        Ok(text) => text
            .lines()
            .filter_map(|l| serde_json::from_str::<TrainRecord>(l).ok())
            .map(|r| r.id)
            .collect::<BTreeSet<_>>(),
        Err(e) => return fail(2, e.to_string()),
    };
    for epoch in 1..=config.max_epochs {
        let ids = match io::read_to_string(&epoch_ids_path(dir, epoch)) {
            Ok(text) => text,
            Err(e) => return fail(2, e.to_string()),
        };
        if let Some(id) = ids.lines().find(|id| !records.contains(*id)) {
            return fail(2, format!("epoch {epoch} lists unknown id {id:?}"));
        }
        std::thread::sleep(delay);
        let reference = ScriptedTrainer::checkpoint_ref(&stage, epoch);
        if let Err(e) = io::write_atomic(&checkpoint_path(dir, epoch), reference.as_bytes())
            .and_then(|_| io::write_atomic(&sentinel_path(dir, epoch), b""))
        {
            return fail(3, e.to_string());
        }
        if script.fail_after == Some(epoch) {
            return fail(1, format!("scripted failure after epoch {epoch}"));
        }
    }
    TrainerExit {
        code: Some(0),
        stderr: String::new(),
    }
}

impl Trainer for ScriptedTrainer {
    fn launch(&self, stage_dir: &Path) -> Result<Box<dyn TrainerProcess>> {
        let stage = stage_dir
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_default();
        let script = self.stages.get(&stage).cloned();
        let dir = stage_dir.to_path_buf();
        let delay = Duration::from_millis(self.epoch_delay_ms);
        let handle = std::thread::spawn(move || run_script(&dir, script, delay));
        Ok(Box::new(ThreadProcess {
            handle: Some(handle),
        }))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochResult {
    pub epoch: u32,
    pub checkpoint: String,
    pub accuracy: f64,
}

/// Index of the first maximum.
pub fn argmax_earliest(values: &[f64]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, v) in values.iter().enumerate() {
        if best.is_none_or(|b| *v > values[b]) {
            best = Some(i);
        }
    }
    best
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainedStage {
    pub epochs: Vec<EpochResult>,
    /// 1-based epoch with the highest accuracy, earliest on ties.
    pub best_epoch: u32,
    pub checkpoint: String,
}

impl TrainedStage {
    pub fn max_accuracy(&self) -> f64 {
        self.epochs[self.best_epoch as usize - 1].accuracy
    }

    pub fn final_accuracy(&self) -> f64 {
        self.epochs.last().map_or(0.0, |e| e.accuracy)
    }
}

/// A stage that stopped early, with the epochs it did complete.
#[derive(Debug)]
pub struct StageFailure {
    pub error: Error,
    pub completed: Vec<EpochResult>,
}

impl From<StageFailure> for Error {
    fn from(f: StageFailure) -> Self {
        f.error
    }
}

/// Writes the manifest, runs the trainer, evaluates every finished epoch as its
/// sentinel appears, and picks the epoch with the highest accuracy.
pub fn train_stage(
    stage_dir: &Path,
    manifest: &TrainerManifest,
    trainer: &dyn Trainer,
    eval_hook: &mut dyn FnMut(u32, &str) -> Result<f64>,
    poll_interval: Duration,
) -> std::result::Result<TrainedStage, StageFailure> {
    let mut completed: Vec<EpochResult> = Vec::new();
    let fail = |error: Error, completed: Vec<EpochResult>| StageFailure { error, completed };
    if let Err(e) = manifest.validate().and_then(|_| manifest.write(stage_dir)) {
        return Err(fail(e, completed));
    }
    let mut process = match trainer.launch(stage_dir) {
        Ok(p) => p,
        Err(e) => return Err(fail(e, completed)),
    };
    let max_epochs = manifest.config.max_epochs;
    let mut exit: Option<TrainerExit> = None;
    loop {
        let next = completed.len() as u32 + 1;
        if next <= max_epochs && sentinel_path(stage_dir, next).exists() {
            let reference = match io::read_to_string(&checkpoint_path(stage_dir, next)) {
                Ok(r) => r.trim().to_string(),
                Err(e) => return Err(fail(e, completed)),
            };
            match eval_hook(next, &reference) {
                Ok(accuracy) => completed.push(EpochResult {
                    epoch: next,
                    checkpoint: reference,
                    accuracy,
                }),
                Err(e) => return Err(fail(e, completed)),
            }
            continue;
        }
        if let Some(exit) = &exit {
            if !exit.success() {
                let error = Error::TrainerFailed {
                    code: exit.code,
                    stderr: exit.stderr.clone(),
                };
                return Err(fail(error, completed));
            }
            break;
        }
        match process.poll() {
            Ok(Some(e)) => exit = Some(e),
            Ok(None) => std::thread::sleep(poll_interval),
            Err(e) => return Err(fail(e, completed)),
        }
    }
    if completed.len() < max_epochs as usize {
        let error = Error::TrainerFailed {
            code: Some(0),
            stderr: format!(
                "trainer exited after {} of {max_epochs} epochs",
                completed.len()
            ),
        };
        return Err(fail(error, completed));
    }
    let accuracies: Vec<f64> = completed.iter().map(|e| e.accuracy).collect();
    let best = argmax_earliest(&accuracies).expect("at least one epoch");
    Ok(TrainedStage {
        best_epoch: best as u32 + 1,
        checkpoint: completed[best].checkpoint.clone(),
        epochs: completed,
    })
}
