use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io;
use crate::model::{Corpus, ProbeOutcome};

/// Completed outcomes of a (possibly partial) campaign.
///
/// On disk: a `{digest, seed, model}` header line, then one outcome per completed
/// id in id order. A finished campaign's checkpoint doubles as its outcome file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CampaignCheckpoint {
    pub digest: String,
    pub seed: u64,
    pub model: String,
    pub completed: BTreeMap<String, ProbeOutcome>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    digest: String,
    seed: u64,
    model: String,
}

impl CampaignCheckpoint {
    pub fn new(digest: impl Into<String>, seed: u64, model: impl Into<String>) -> Self {
        CampaignCheckpoint {
            digest: digest.into(),
            seed,
            model: model.into(),
            completed: BTreeMap::new(),
        }
    }

    /// Corpus ids without an outcome, in corpus order.
    pub fn pending<'a>(&self, corpus: &'a Corpus) -> Vec<&'a str> {
        corpus
            .ids()
            .filter(|id| !self.completed.contains_key(*id))
            .collect()
    }

    pub fn to_jsonl(&self) -> Result<String> {
        let mut out = io::to_jsonl([Header {
            digest: self.digest.clone(),
            seed: self.seed,
            model: self.model.clone(),
        }])?;
        out.push_str(&io::to_jsonl(self.completed.values())?);
        Ok(out)
    }

    pub fn from_jsonl(text: &str) -> Result<Self> {
        let mut lines = io::jsonl_lines(text);
        let (n, first) = lines.next().ok_or(Error::Parse {
            what: "checkpoint header",
            line: 1,
            message: "empty file".into(),
        })?;
        let header: Header = io::parse_line("checkpoint header", n, first)?;
        let mut cp = CampaignCheckpoint::new(header.digest, header.seed, header.model);
        for (n, line) in lines {
            let outcome: ProbeOutcome = io::parse_line("outcome record", n, line)?;
            cp.completed.insert(outcome.qa_id.clone(), outcome);
        }
        Ok(cp)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        io::write_atomic(path, self.to_jsonl()?.as_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_jsonl(&io::read_to_string(path)?)
    }

    pub fn check_matches(&self, digest: &str, seed: u64, model: &str) -> Result<()> {
        if self.digest != digest || self.seed != seed || self.model != model {
            return Err(Error::CheckpointMismatch {
                expected: format!("{digest}/seed {seed}/{model}"),
                found: format!("{}/seed {}/{}", self.digest, self.seed, self.model),
            });
        }
        Ok(())
    }
}
