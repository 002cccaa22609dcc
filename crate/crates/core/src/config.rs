//! Versioned TOML run configuration.
//!
//! ```toml
//! version = 1
//! corpus = "corpus.jsonl"
//! out_dir = "run"
//!
//! [backend]
//! url = "http://localhost:8000/v1"
//!
//! [trainer]
//! command = "python -m lora_trainer_adapter"
//!
//! [pipeline]
//! base_model = "qwen2-7b"
//! max_rounds = 3
//! ```
//!
//! Relative paths resolve against the file's directory. Command-line flags
//! override the file. The auth token is read from `KNOWPROBE_AUTH_TOKEN`, which
//! beats any value in the file.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io;
use crate::mock::{AnswerPolicy, QaRule};
use crate::pipeline::{PipelineConfig, ScriptedTrainer};

pub const CONFIG_VERSION: u32 = 1;
pub const AUTH_TOKEN_ENV: &str = "KNOWPROBE_AUTH_TOKEN";

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BackendSection {
    pub url: Option<String>,
    pub auth_token: Option<String>,
    /// Put the request id in the prompt, as the scripted mock server expects.
    pub tag_requests: bool,
    /// Serve generations in-process from this policy instead of over HTTP.
    pub mock: Option<AnswerPolicy>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainerSection {
    /// Program and arguments; the stage directory is appended.
    pub command: Option<String>,
    pub scripted: Option<ScriptedTrainer>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FileConfig {
    pub version: u32,
    pub corpus: Option<PathBuf>,
    pub out_dir: Option<PathBuf>,
    pub backend: BackendSection,
    pub trainer: TrainerSection,
    pub pipeline: PipelineConfig,
}

impl FileConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: FileConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        if cfg.version != CONFIG_VERSION {
            return Err(Error::Config(format!(
                "config version {} is not supported (expected {CONFIG_VERSION})",
                cfg.version
            )));
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut cfg = Self::from_toml(&io::read_to_string(path)?)?;
        let base = path.parent().unwrap_or(Path::new(""));
        let resolve = |p: &mut Option<PathBuf>| {
            if let Some(p) = p.as_mut().filter(|p| p.is_relative()) {
                *p = base.join(&*p);
            }
        };
        resolve(&mut cfg.corpus);
        resolve(&mut cfg.out_dir);
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }
}

/// Reads an answer policy or a scripted trainer from a `.json` or `.toml` file.
pub fn load_structured<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = io::read_to_string(path)?;
    if path.extension().is_some_and(|e| e == "toml") {
        toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    } else {
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }
}

/// The token from the environment if set, else from the file.
pub fn auth_token(file_value: Option<String>) -> Option<String> {
    std::env::var(AUTH_TOKEN_ENV)
        .ok()
        .filter(|t| !t.is_empty())
        .or(file_value)
}

/// Gives every checkpoint a scripted trainer can emit a latent skill, unless the
/// policy already names one. Only latent-rule policies are touched.
pub fn link_scripted_world(policy: &mut AnswerPolicy, trainer: &ScriptedTrainer, max_epochs: u32) {
    let uses_latent = policy.default_rule == QaRule::Latent
        || policy.rules.values().any(|r| *r == QaRule::Latent);
    if !uses_latent {
        return;
    }
    for (reference, skill) in trainer.skill_table(max_epochs) {
        policy.latent.skills.entry(reference).or_insert(skill);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Strategy;

    #[test]
    fn parses_sections_and_defaults() {
        let cfg = FileConfig::from_toml(
            r#"
version = 1
corpus = "c.jsonl"

[backend.mock]
seed = 3
default_rule = { rule = "latent" }

[trainer.scripted.stages.stage1]
skills = [0.5, 0.6]

[pipeline]
base_model = "m"
strategy = "s3"
max_rounds = 2
"#,
        )
        .unwrap();
        assert_eq!(cfg.pipeline.strategy, Strategy::S3);
        assert_eq!(cfg.pipeline.seed, 42);
        assert_eq!(cfg.pipeline.replay_ratio, 0.2);
        let mut policy = cfg.backend.mock.clone().unwrap();
        link_scripted_world(&mut policy, cfg.trainer.scripted.as_ref().unwrap(), 3);
        assert_eq!(policy.latent.skills["stage1/epoch3"], 0.6);
        let again = FileConfig::from_toml(&cfg.to_toml().unwrap()).unwrap();
        assert_eq!(again, cfg);
    }

    #[test]
    fn rejects_unknown_keys_and_versions() {
        assert!(FileConfig::from_toml("version = 2").is_err());
        assert!(FileConfig::from_toml("corpus = 'x'").is_err());
        assert!(FileConfig::from_toml("version = 1\n[pipeline]\nsed = 4").is_err());
    }

    #[test]
    fn relative_paths_follow_the_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.toml");
        std::fs::write(&path, "version = 1\ncorpus = 'data/c.jsonl'\nout_dir = '/abs/out'\n").unwrap();
        let cfg = FileConfig::load(&path).unwrap();
        assert_eq!(cfg.corpus.unwrap(), dir.path().join("data/c.jsonl"));
        assert_eq!(cfg.out_dir.unwrap(), PathBuf::from("/abs/out"));
    }
}
