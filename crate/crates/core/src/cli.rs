//! The `knowprobe` command line.
//!
//! Primary outputs go to files under `--out-dir` and to stdout; logs go to
//! stderr. A failing command prints one JSON error record on stderr and exits
//! with 2 (validation), 3 (backend), 4 (trainer) or 5 (internal).

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::analytics::{aggregate_counts, render_counts, TransitionReport};
use crate::classify;
use crate::config::{self, FileConfig};
use crate::curriculum;
use crate::error::{Error, Result};
use crate::graph::{build_graph, label_nodes, PairRoles, RuleSet};
use crate::io;
use crate::mock::MockBackend;
use crate::model::{ClassificationSnapshot, Corpus, ReplayBase, Split, Strategy};
use crate::pipeline::{
    format_accuracy, stage2_curriculum, write_report, ExternalTrainer, Pipeline, Trainer,
};
use crate::probe::{run_campaign, Backend, CampaignCheckpoint, CampaignOptions, HttpBackend};

#[derive(Debug, Parser)]
#[command(name = "knowprobe", version, about = "Probe what a model knows, curate fine-tuning stages, and track label transitions")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct GlobalArgs {
    /// TOML run configuration; flags override its values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// QA corpus, one JSON pair per line.
    #[arg(long, global = true)]
    pub corpus: Option<PathBuf>,
    /// Directory for every output file [default: knowprobe-out].
    #[arg(long, global = true)]
    pub out_dir: Option<PathBuf>,
    /// Base URL of an HTTP completion endpoint.
    #[arg(long, global = true, env = "KNOWPROBE_BACKEND_URL")]
    pub backend_url: Option<String>,
    /// Answer in-process from this mock policy (.json or .toml).
    #[arg(long, global = true)]
    pub mock_policy: Option<PathBuf>,
    /// Tag prompts with request ids, for mock HTTP servers.
    #[arg(long, global = true)]
    pub tag_requests: bool,
    /// Model to probe; the base model of a pipeline run.
    #[arg(long, global = true)]
    pub model: Option<String>,
    /// [default: 42]
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Pairs probed concurrently [default: 8].
    #[arg(long, global = true)]
    pub parallelism: Option<usize>,
    /// Probe rounds per mode [default: 10].
    #[arg(long, global = true)]
    pub rounds: Option<u32>,
    /// Sampled generations per round [default: 16].
    #[arg(long, global = true)]
    pub samples: Option<u32>,
    /// Sampling top-k [default: 40].
    #[arg(long, global = true)]
    pub top_k: Option<u32>,
    /// Sampling temperature [default: 0.5].
    #[arg(long, global = true)]
    pub temperature: Option<f64>,
    /// [default: 32]
    #[arg(long, global = true)]
    pub max_new_tokens: Option<u32>,
    /// Few-shot exemplars per prompt [default: 4].
    #[arg(long, global = true)]
    pub exemplars: Option<usize>,
    /// Second-stage strategy, s1 to s5 [default: s5].
    #[arg(long, global = true)]
    pub strategy: Option<String>,
    /// Replay ratio for s5 [default: 0.2].
    #[arg(long, global = true)]
    pub replay_ratio: Option<f64>,
    /// What the replay ratio is a fraction of [default: pool].
    #[arg(long, global = true, value_enum)]
    pub replay_base: Option<ReplayBaseArg>,
    /// Trainer program; the stage directory is passed as its only argument.
    #[arg(long, global = true, env = "KNOWPROBE_TRAINER_COMMAND")]
    pub trainer_command: Option<String>,
    /// Use the in-process scripted trainer described in this file (.json or .toml).
    #[arg(long, global = true)]
    pub scripted_trainer: Option<PathBuf>,
    /// Log filter for stderr, e.g. `info` or `knowprobe=debug`.
    #[arg(long, global = true, default_value = "warn")]
    pub log: String,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ReplayBaseArg {
    Pool,
    Members,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SplitArg {
    Train,
    Test,
}

impl From<SplitArg> for Split {
    fn from(s: SplitArg) -> Split {
        match s {
            SplitArg::Train => Split::Train,
            SplitArg::Test => Split::Test,
        }
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Probe one model over a corpus split; writes probes/<name>.jsonl (resumable).
    Probe {
        #[arg(long, default_value = "origin")]
        name: String,
        #[arg(long, value_enum, default_value = "train")]
        split: SplitArg,
    },
    /// Label pairs from a probe file; writes snapshots/<name>.jsonl.
    Classify {
        #[arg(long)]
        probes: PathBuf,
        /// [default: the probe file's stem]
        #[arg(long)]
        name: Option<String>,
        #[arg(long, value_enum, default_value = "train")]
        split: SplitArg,
    },
    /// Build a training set; writes curricula/<name>.jsonl.
    Curate {
        /// Snapshot of the untuned model.
        #[arg(long)]
        origin: PathBuf,
        /// Snapshot after the previous stage; omit for the first stage.
        #[arg(long)]
        previous: Option<PathBuf>,
        /// [default: stage1, or stage2 with --previous]
        #[arg(long)]
        name: Option<String>,
    },
    /// Run the trainer on a curriculum and pick the best epoch; writes stages/<name>/.
    Train {
        #[arg(long)]
        curriculum: PathBuf,
        /// [default: the curriculum file's stem]
        #[arg(long)]
        name: Option<String>,
        /// Checkpoint to continue from.
        #[arg(long)]
        resume_from: Option<String>,
        /// Override the stage's epoch count.
        #[arg(long)]
        epochs: Option<u32>,
    },
    /// Probe, train stage 1, re-probe, train stage 2 (and further rounds), report.
    Pipeline {
        #[arg(long)]
        run_id: Option<String>,
        /// Second-stage rounds [default: 1].
        #[arg(long)]
        max_rounds: Option<u32>,
        /// Percentage points a round must add to continue [default: 0.05].
        #[arg(long)]
        min_improvement: Option<f64>,
        #[arg(long)]
        noise_baseline: bool,
        #[arg(long)]
        origin_breakdown: bool,
        #[arg(long)]
        fresh_adapter: bool,
    },
    /// Transition matrices, churn, counts and gains between snapshots.
    Analyze {
        #[arg(long)]
        before: PathBuf,
        #[arg(long)]
        after: PathBuf,
        /// Untuned snapshot; enables the gain report with `before` as the one-stage snapshot.
        #[arg(long)]
        origin: Option<PathBuf>,
        /// Two same-model snapshots for a noise baseline.
        #[arg(long, num_args = 2)]
        baseline: Vec<PathBuf>,
        /// Also write reports/<name>.txt and .json.
        #[arg(long)]
        name: Option<String>,
    },
    /// Entity co-occurrence graph with initial and reclassified node labels; writes graph/.
    Graph {
        #[arg(long)]
        origin: PathBuf,
        #[arg(long)]
        after: PathBuf,
        /// Extraction rules as a JSON list of {pattern, group}.
        #[arg(long)]
        rules: Option<PathBuf>,
    },
}

struct Context {
    file: FileConfig,
    out_dir: PathBuf,
}

impl Context {
    fn corpus(&self) -> Result<Corpus> {
        let path = self
            .file
            .corpus
            .as_deref()
            .ok_or_else(|| Error::Config("no corpus given (--corpus or config)".into()))?;
        Corpus::load(path)
    }

    fn max_epochs(&self) -> u32 {
        self.file.pipeline.stage1.max_epochs.max(self.file.pipeline.stage2.max_epochs)
    }

    fn backend(&self, corpus: &Corpus) -> Result<Box<dyn Backend>> {
        let b = &self.file.backend;
        match (&b.url, &b.mock) {
            (Some(_), Some(_)) => Err(Error::Config("configure either a backend url or a mock policy".into())),
            (None, Some(policy)) => {
                let mut policy = policy.clone();
                if let Some(t) = &self.file.trainer.scripted {
                    config::link_scripted_world(&mut policy, t, self.max_epochs());
                }
                Ok(Box::new(MockBackend::new(corpus, policy)?))
            }
            (Some(url), None) => {
                let http = HttpBackend::new(url.clone(), config::auth_token(b.auth_token.clone()));
                Ok(Box::new(if b.tag_requests { http.mock_endpoint() } else { http }))
            }
            (None, None) => Err(Error::Config("no backend configured (--backend-url or --mock-policy)".into())),
        }
    }

    fn trainer(&self) -> Result<Box<dyn Trainer>> {
        let t = &self.file.trainer;
        match (&t.command, &t.scripted) {
            (Some(_), Some(_)) => Err(Error::Config("configure either a trainer command or a scripted trainer".into())),
            (Some(cmd), None) => Ok(Box::new(ExternalTrainer::from_command_line(cmd)?)),
            (None, Some(s)) => Ok(Box::new(s.clone())),
            (None, None) => Err(Error::Config("no trainer configured (--trainer-command or --scripted-trainer)".into())),
        }
    }
}

fn resolve(g: &GlobalArgs) -> Result<Context> {
    let mut file = match &g.config {
        Some(path) => FileConfig::load(path)?,
        None => FileConfig {
            version: config::CONFIG_VERSION,
            ..Default::default()
        },
    };
    if let Some(c) = &g.corpus {
        file.corpus = Some(c.clone());
    }
    if let Some(o) = &g.out_dir {
        file.out_dir = Some(o.clone());
    }
    if let Some(path) = &g.mock_policy {
        file.backend.mock = Some(config::load_structured(path)?);
        file.backend.url = None;
    } else if let Some(url) = &g.backend_url {
        file.backend.url = Some(url.clone());
        file.backend.mock = None;
    }
    file.backend.tag_requests |= g.tag_requests;
    if let Some(path) = &g.scripted_trainer {
        file.trainer.scripted = Some(config::load_structured(path)?);
        file.trainer.command = None;
    } else if let Some(cmd) = &g.trainer_command {
        file.trainer.command = Some(cmd.clone());
        file.trainer.scripted = None;
    }
    let p = &mut file.pipeline;
    if let Some(m) = &g.model {
        p.base_model = m.clone();
    }
    if let Some(s) = g.seed {
        p.seed = s;
    }
    if let Some(n) = g.parallelism {
        p.parallelism = n;
    }
    if let Some(r) = g.rounds {
        p.greedy.rounds = r;
        p.sampled.rounds = r;
    }
    if let Some(n) = g.samples {
        p.sampled.samples_per_round = n;
    }
    if let Some(k) = g.top_k {
        p.sampled.top_k = Some(k);
    }
    if let Some(t) = g.temperature {
        p.sampled.temperature = t;
    }
    if let Some(m) = g.max_new_tokens {
        p.greedy.max_new_tokens = m;
        p.sampled.max_new_tokens = m;
    }
    if let Some(k) = g.exemplars {
        p.exemplars = k;
    }
    if let Some(s) = &g.strategy {
        p.strategy = s.parse()?;
    }
    if let Some(r) = g.replay_ratio {
        p.replay_ratio = r;
    }
    if let Some(b) = g.replay_base {
        p.replay_base = match b {
            ReplayBaseArg::Pool => ReplayBase::Pool,
            ReplayBaseArg::Members => ReplayBase::Members,
        };
    }
    let out_dir = file.out_dir.clone().unwrap_or_else(|| PathBuf::from("knowprobe-out"));
    Ok(Context { file, out_dir })
}

fn stem(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "output".into())
}

/// Runs one parsed command; returns what it prints on stdout.
pub fn execute(cli: &Cli) -> Result<String> {
    let ctx = resolve(&cli.global)?;
    let cfg = &ctx.file.pipeline;
    let out = &ctx.out_dir;
    match &cli.command {
        Command::Probe { name, split } => {
            cfg.validate()?;
            let corpus = ctx.corpus()?;
            let backend = ctx.backend(&corpus)?;
            let targets = corpus.split((*split).into());
            let pool = corpus.split(Split::Train);
            let path = out.join("probes").join(format!("{name}.jsonl"));
            let options = CampaignOptions {
                parallelism: cfg.parallelism,
                checkpoint: Some(path.clone()),
                ..Default::default()
            };
            let probe = cfg.probe_config(&cfg.base_model, cfg.seed);
            let outcomes = run_campaign(&targets, &pool, &probe, &*backend, &options)?;
            Ok(format!("probed {} pairs with {}: {}\n", outcomes.len(), probe.model, path.display()))
        }
        Command::Classify { probes, name, split } => {
            let corpus = ctx.corpus()?;
            let cp = CampaignCheckpoint::load(probes)?;
            let targets = corpus.split((*split).into());
            let outcomes: HashMap<_, _> = cp.completed.into_iter().collect();
            let mut snap = classify::snapshot(&targets, &outcomes, &cp.model, &cp.digest, cp.seed)?;
            snap.created_at = Some(io::now_unix());
            let name = name.clone().unwrap_or_else(|| stem(probes));
            snap.save(&out.join("snapshots").join(format!("{name}.jsonl")))?;
            Ok(render_counts(&aggregate_counts(&snap, false)))
        }
        Command::Curate { origin, previous, name } => {
            let corpus = ctx.corpus()?;
            let snap0 = ClassificationSnapshot::load(origin)?;
            let (spec, default_name) = match previous {
                None => (curriculum::stage1_dataset(&snap0, &corpus, cfg.seed)?, "stage1"),
                Some(prev) => {
                    let prev = ClassificationSnapshot::load(prev)?;
                    (stage2_curriculum(cfg, &corpus, &snap0, &prev)?, "stage2")
                }
            };
            let name = name.clone().unwrap_or_else(|| default_name.to_string());
            curriculum::save(&spec, &out.join("curricula").join(format!("{name}.jsonl")))?;
            Ok(format!(
                "strategy {} members {} replay pool {} replay per epoch {}\n",
                spec.strategy,
                spec.member_ids.len(),
                spec.replay_pool_ids.len(),
                curriculum::replay_count(&spec)
            ))
        }
        Command::Train { curriculum: path, name, resume_from, epochs } => {
            let corpus = ctx.corpus()?;
            let backend = ctx.backend(&corpus)?;
            let trainer = ctx.trainer()?;
            let spec = curriculum::load(path)?;
            let mut tconfig = if spec.strategy == Strategy::Stage1MaybeKnown {
                cfg.stage1.clone()
            } else {
                cfg.stage2.clone()
            };
            if let Some(e) = epochs {
                tconfig.max_epochs = *e;
            }
            let name = name.clone().unwrap_or_else(|| stem(path));
            let pipeline = Pipeline::new(cfg.clone(), &corpus, &*backend, &*trainer, out);
            let record = pipeline.train_step(&name, &spec, &tconfig, resume_from.clone())?;
            let mut text = String::new();
            for e in &record.epochs {
                text.push_str(&format!("epoch {} {} {}\n", e.epoch, e.checkpoint, format_accuracy(e.accuracy)));
            }
            text.push_str(&format!(
                "best epoch {} checkpoint {} max {} final {}\n",
                record.best_epoch.unwrap_or(0),
                record.checkpoint.clone().unwrap_or_default(),
                record.max_accuracy.map(format_accuracy).unwrap_or_default(),
                record.final_accuracy.map(format_accuracy).unwrap_or_default()
            ));
            Ok(text)
        }
        Command::Pipeline {
            run_id,
            max_rounds,
            min_improvement,
            noise_baseline,
            origin_breakdown,
            fresh_adapter,
        } => {
            let mut cfg = cfg.clone();
            if let Some(r) = run_id {
                cfg.run_id = r.clone();
            }
            if let Some(r) = max_rounds {
                cfg.max_rounds = *r;
            }
            if let Some(m) = min_improvement {
                cfg.min_improvement = *m;
            }
            cfg.noise_baseline |= noise_baseline;
            cfg.origin_breakdown |= origin_breakdown;
            cfg.fresh_adapter |= fresh_adapter;
            let corpus = ctx.corpus()?;
            let backend = ctx.backend(&corpus)?;
            let trainer = ctx.trainer()?;
            let pipeline = Pipeline::new(cfg, &corpus, &*backend, &*trainer, out);
            pipeline.run()?;
            io::read_to_string(&pipeline.report_path("summary"))
        }
        Command::Analyze { before, after, origin, baseline, name } => {
            let before = ClassificationSnapshot::load(before)?;
            let after = ClassificationSnapshot::load(after)?;
            let origin = origin.as_deref().map(ClassificationSnapshot::load).transpose()?;
            let baseline = match baseline.as_slice() {
                [] => None,
                [a, b] => Some((ClassificationSnapshot::load(a)?, ClassificationSnapshot::load(b)?)),
                _ => return Err(Error::Config("--baseline takes two snapshots".into())),
            };
            let report = TransitionReport::build(
                &before,
                &after,
                origin.as_ref(),
                baseline.as_ref().map(|(a, b)| (a, b)),
            )?;
            if let Some(name) = name {
                write_report(&out.join("reports").join(format!("{name}.txt")), &report)?;
            }
            Ok(report.render())
        }
        Command::Graph { origin, after, rules } => {
            let corpus = ctx.corpus()?;
            let snap0 = ClassificationSnapshot::load(origin)?;
            let snap1 = ClassificationSnapshot::load(after)?;
            let rules = match rules {
                Some(path) => RuleSet::from_json(&io::read_to_string(path)?)?,
                None => RuleSet::default(),
            };
            let pairs: Vec<_> = corpus
                .pairs()
                .iter()
                .filter(|p| snap0.get(&p.id).is_some())
                .cloned()
                .collect();
            let built = build_graph(&pairs, &rules);
            if built.skipped() > 0 {
                tracing::warn!(
                    no_entity = built.no_entity.len(),
                    self_loops = built.self_loops.len(),
                    "pairs left out of the graph"
                );
            }
            let labels = label_nodes(&built.graph, &PairRoles::from_snapshots(&snap0, &snap1));
            let dir = out.join("graph");
            io::write_atomic(&dir.join("edges.tsv"), built.graph.edge_list().as_bytes())?;
            io::write_atomic(&dir.join("nodes.tsv"), labels.sidecar().as_bytes())?;
            Ok(labels.render_counts())
        }
    }
}

fn init_logging(filter: &str) {
    let filter = tracing_subscriber::EnvFilter::try_new(filter)
        .unwrap_or_else(|_| tracing_subscriber::EnvFilter::new("warn"));
    let _ = tracing_subscriber::fmt()
        .with_env_filter(filter)
        .with_writer(std::io::stderr)
        .try_init();
}

/// Error record printed on stderr.
pub fn error_record(e: &Error) -> String {
    serde_json::json!({
        "error": e.kind().as_str(),
        "exit_code": e.kind().exit_code(),
        "message": e.to_string(),
    })
    .to_string()
}

pub fn main() -> ExitCode {
    let cli = Cli::parse();
    init_logging(&cli.global.log);
    match execute(&cli) {
        Ok(text) => {
            print!("{text}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("{}", error_record(&e));
            ExitCode::from(e.kind().exit_code() as u8)
        }
    }
}
