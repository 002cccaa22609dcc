//! The per-run record of what was probed, trained and chosen.

use std::collections::BTreeMap;
use std::fs::OpenOptions;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::analytics::{GainReport, LabelCounts};
use crate::error::{Error, Result};
use crate::io;
use crate::model::Strategy;
use crate::pipeline::trainer::EpochResult;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Running,
    Complete,
    Failed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    /// A round improved max accuracy by less than the configured margin.
    NoImprovement,
    MaxRounds,
}

impl StopReason {
    pub fn as_str(self) -> &'static str {
        match self {
            StopReason::NoImprovement => "no improvement",
            StopReason::MaxRounds => "max rounds",
        }
    }
}

/// Whether multi-round training stops after a round whose max accuracy is
/// `current`, given the previous round's `previous` (both percent).
pub fn stop_decision(previous: f64, current: f64, round: u32, max_rounds: u32, min_improvement: f64) -> Option<StopReason> {
    // rounding to 1e-9 keeps an improvement of exactly the margin from failing on float noise
    let gain = ((current - previous) * 1e9).round() / 1e9;
    if gain < min_improvement {
        Some(StopReason::NoImprovement)
    } else if round >= max_rounds {
        Some(StopReason::MaxRounds)
    } else {
        None
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SnapshotEntry {
    pub name: String,
    pub model_ref: String,
    pub digest: String,
    pub probe_digest: String,
    pub seed: u64,
    pub counts: LabelCounts,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportEntry {
    pub name: String,
    pub before: String,
    pub after: String,
    pub digest: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StageStatus {
    Complete,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub name: String,
    pub strategy: Strategy,
    pub status: StageStatus,
    pub snapshot_digests: Vec<String>,
    pub curriculum_digest: String,
    pub members: usize,
    pub replay_per_epoch: usize,
    pub resume_from: Option<String>,
    /// Accuracies are fractions of the test split.
    pub epochs: Vec<EpochResult>,
    pub best_epoch: Option<u32>,
    pub checkpoint: Option<String>,
    pub max_accuracy: Option<f64>,
    pub final_accuracy: Option<f64>,
    /// Accuracy on test pairs grouped by the untuned model's label.
    pub accuracy_by_origin: Option<BTreeMap<String, f64>>,
    pub failure: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunLedger {
    pub run_id: String,
    pub status: RunStatus,
    pub config_digest: String,
    pub eval_set: Option<String>,
    pub origin_accuracy: Option<f64>,
    pub origin_accuracy_by_class: Option<BTreeMap<String, f64>>,
    pub snapshots: Vec<SnapshotEntry>,
    pub stages: Vec<StageRecord>,
    pub reports: Vec<ReportEntry>,
    pub gain: Option<GainReport>,
    pub stop_reason: Option<StopReason>,
    pub failure: Option<String>,
}

impl RunLedger {
    pub fn new(run_id: &str, config_digest: &str) -> Self {
        RunLedger {
            run_id: run_id.to_string(),
            status: RunStatus::Running,
            config_digest: config_digest.to_string(),
            eval_set: None,
            origin_accuracy: None,
            origin_accuracy_by_class: None,
            snapshots: Vec::new(),
            stages: Vec::new(),
            reports: Vec::new(),
            gain: None,
            stop_reason: None,
            failure: None,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        io::write_atomic(path, self.to_json()?.as_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Ok(serde_json::from_str(&io::read_to_string(path)?)?)
    }

    pub fn stage(&self, name: &str) -> Option<&StageRecord> {
        self.stages.iter().find(|s| s.name == name)
    }

    /// Max accuracy (percent) of each completed stage, in order.
    pub fn accuracy_trajectory(&self) -> Vec<f64> {
        self.stages
            .iter()
            .filter_map(|s| s.max_accuracy)
            .map(|a| 100.0 * a)
            .collect()
    }
}

/// Exclusive claim on a run directory, released on drop.
#[derive(Debug)]
pub struct RunLock {
    path: PathBuf,
}

impl RunLock {
    pub const FILE: &'static str = "run.lock";

    pub fn acquire(run_dir: &Path) -> Result<Self> {
        io::create_dir_all(run_dir)?;
        let path = run_dir.join(Self::FILE);
        match OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(mut f) => {
                let _ = writeln!(f, "{}", std::process::id());
                Ok(RunLock { path })
            }
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => Err(Error::RunLocked(path)),
            Err(e) => Err(Error::io(&path, e)),
        }
    }
}

impl Drop for RunLock {
    fn drop(&mut self) {
        let _ = std::fs::remove_file(&self.path);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn converges_when_gain_vanishes() {
        let trajectory = [32.98, 33.80, 33.79];
        let mut stopped = None;
        for round in 1..trajectory.len() {
            if let Some(r) = stop_decision(trajectory[round - 1], trajectory[round], round as u32, 10, 0.05) {
                stopped = Some((round, r));
                break;
            }
        }
        assert_eq!(stopped, Some((2, StopReason::NoImprovement)));
    }

    #[test]
    fn margin_is_inclusive_and_rounds_cap() {
        assert_eq!(stop_decision(33.80, 33.85, 1, 3, 0.05), None);
        assert_eq!(stop_decision(33.80, 33.84, 1, 3, 0.05), Some(StopReason::NoImprovement));
        assert_eq!(stop_decision(30.0, 31.0, 3, 3, 0.05), Some(StopReason::MaxRounds));
    }

    #[test]
    fn lock_is_exclusive() {
        let dir = tempfile::tempdir().unwrap();
        let lock = RunLock::acquire(dir.path()).unwrap();
        assert!(matches!(RunLock::acquire(dir.path()), Err(Error::RunLocked(_))));
        drop(lock);
        RunLock::acquire(dir.path()).unwrap();
    }
}
