//! The self-play iteration loop and its on-disk run format.
//!
//! Each iteration samples `B` documents. Per document the challenger makes
//! attempts in rounds of `G` (a format-selection request, then one task
//! request per chosen format) until a valid task exists and at least `G`
//! attempts have been made, or `N` attempts are spent. `G` attempts are
//! subsampled preserving the valid:invalid ratio, every valid task among them
//! is answered `G` times by the reasoner, and one valid task is selected whose
//! answers become the reasoner group.
//!
//! All randomness is keyed by `(seed, iteration, slot, ...)`, so a batch is a
//! pure function of the configuration and the iteration index regardless of
//! completion order.
//!
//! Run directory layout:
//!
//! ```text
//! out/config.json                 config snapshot
//! out/batches/000001.jsonl        trajectories of iteration 1
//! out/batches/000001.manifest.json  written last; marks iteration 1 complete
//! out/metrics.jsonl               one metrics record per completed iteration
//! ```

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;

use rand::seq::index::sample as sample_indices;
use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;
use tokio::sync::Semaphore;

use crate::config::{ConfigError, EngineConfig};
use crate::corpus::{CorpusError, CorpusStore, Document};
use crate::policy::{render_prompt, Clients, GenerationRequest, PolicyError};
use crate::rewards::{
    challenger_reward, compute_advantages, reasoner_reward, AdvantageError, GroupStats, Role,
    Trajectory,
};
use crate::seed;
use crate::taskgen::{
    build_format_prompt, build_task_prompt, parse_format_decision, parse_task, AnswerType,
    FormatDecision, FormatError, InvalidReason, InvalidTask, Task, TemplateError, TemplateSet,
};
use crate::verifier::label_completion;

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("generation failed for document {doc_id}: {source}")]
    Policy {
        doc_id: String,
        #[source]
        source: PolicyError,
    },
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Template(#[from] TemplateError),
    #[error(transparent)]
    Advantage(#[from] AdvantageError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(
        "run directory was created with config hash {found}, current config hashes to {expected}"
    )]
    ConfigMismatch { expected: String, found: String },
    #[error("run directory is inconsistent: {0}")]
    Corrupt(String),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> EngineError + '_ {
    move |source| EngineError::Io {
        path: path.to_owned(),
        source,
    }
}

/// One challenger attempt: the request it answered and its parse outcome.
#[derive(Debug, Clone)]
pub struct Attempt {
    pub prompt: String,
    pub completion: String,
    pub decision: Option<FormatDecision>,
    pub outcome: Result<Task, InvalidTask>,
}

impl Attempt {
    pub fn is_valid(&self) -> bool {
        self.outcome.is_ok()
    }

    pub fn answer_type(&self) -> Option<AnswerType> {
        match &self.outcome {
            Ok(t) => Some(t.answer_type),
            Err(_) => self.decision.as_ref().map(FormatDecision::answer_type),
        }
    }
}

fn format_failure(e: FormatError) -> InvalidTask {
    let reason = match e {
        FormatError::InvalidGeneration => InvalidReason::NoObject,
        FormatError::SchemaViolation(_) => InvalidReason::SchemaViolation,
    };
    InvalidTask {
        reason,
        detail: format!("format selection: {e}"),
    }
}

/// Number of valid attempts kept when drawing `g` of `total` attempts of
/// which `valid` are valid: the ratio rounded half up, at least one when any
/// valid attempt exists, and never more than either class can supply.
pub fn valid_quota(valid: usize, total: usize, g: usize) -> usize {
    assert!(valid <= total && g <= total);
    if total == 0 {
        return 0;
    }
    let invalid = total - valid;
    let mut kv = (2 * valid * g + total) / (2 * total);
    if valid > 0 {
        kv = kv.max(1);
    }
    kv.min(valid).min(g).max(g.saturating_sub(invalid))
}

/// Seeded ratio-preserving subsample of `min(g, pool)` attempt indices,
/// returned in pool order.
pub fn subsample(valid_mask: &[bool], g: usize, rng: &mut impl Rng) -> Vec<usize> {
    let total = valid_mask.len();
    let g = g.min(total);
    let valid: Vec<usize> = (0..total).filter(|&i| valid_mask[i]).collect();
    let invalid: Vec<usize> = (0..total).filter(|&i| !valid_mask[i]).collect();
    let kv = valid_quota(valid.len(), total, g);
    let mut picked: Vec<usize> = sample_indices(rng, valid.len(), kv)
        .into_iter()
        .map(|i| valid[i])
        .chain(
            sample_indices(rng, invalid.len(), g - kv)
                .into_iter()
                .map(|i| invalid[i]),
        )
        .collect();
    picked.sort_unstable();
    picked
}

/// Everything one document contributes to an iteration.
#[derive(Debug, Clone)]
pub struct DocOutcome {
    pub doc_id: String,
    pub attempts: usize,
    pub valid_attempts: usize,
    pub invalid_reasons: BTreeMap<InvalidReason, usize>,
    pub challenger: Vec<Trajectory>,
    pub reasoner: Vec<Trajectory>,
    pub selected: Option<(Task, GroupStats)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationMetrics {
    pub iter: u64,
    pub documents: usize,
    pub attempts: usize,
    pub valid_attempts: usize,
    /// Valid share of all attempts made.
    pub valid_rate: f64,
    pub tasks: usize,
    /// Mean pass rate of the selected tasks; `None` when no task survived.
    pub mean_pass_rate: Option<f64>,
    pub challenger_trajectories: usize,
    pub reasoner_trajectories: usize,
    pub challenger_reward_mean: f64,
    pub reasoner_reward_mean: Option<f64>,
    pub invalid_reasons: BTreeMap<InvalidReason, usize>,
}

#[derive(Debug, Clone)]
pub struct IterationBatch {
    pub iter: u64,
    pub challenger: Vec<Trajectory>,
    pub reasoner: Vec<Trajectory>,
    pub metrics: IterationMetrics,
}

impl IterationBatch {
    /// The batch as export lines: challenger records, then reasoner records.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for t in self.challenger.iter().chain(&self.reasoner) {
            out.push_str(&serde_json::to_string(t).expect("trajectory serializes"));
            out.push('\n');
        }
        out
    }
}

fn mean(xs: impl IntoIterator<Item = f64>) -> Option<f64> {
    let (s, n) = xs
        .into_iter()
        .fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    (n > 0).then(|| s / n as f64)
}

const TAG_REASONER: &str = "engine.reasoner";
const TAG_SUBSAMPLE: &str = "engine.subsample";

pub struct Engine {
    cfg: EngineConfig,
    store: CorpusStore,
    clients: Clients,
    templates: TemplateSet,
    limiter: Arc<Semaphore>,
}

impl Engine {
    /// The store's sampling seed and source mix are taken from `cfg`.
    pub fn new(
        cfg: EngineConfig,
        mut store: CorpusStore,
        clients: Clients,
    ) -> Result<Self, EngineError> {
        cfg.validate()?;
        store.set_seed(cfg.seed);
        store.set_source_mix(cfg.source_mix.clone())?;
        let templates = TemplateSet::select(&cfg.templates)?;
        let limiter = Arc::new(Semaphore::new(cfg.concurrency));
        Ok(Self {
            cfg,
            store,
            clients,
            templates,
            limiter,
        })
    }

    pub fn config(&self) -> &EngineConfig {
        &self.cfg
    }

    pub fn store(&self) -> &CorpusStore {
        &self.store
    }

    pub fn templates(&self) -> &TemplateSet {
        &self.templates
    }

    async fn call(
        &self,
        role: Role,
        prompt: &str,
        n: usize,
        seed: u64,
        doc_id: &str,
    ) -> Result<Vec<String>, EngineError> {
        let req = GenerationRequest {
            prompt: prompt.to_owned(),
            n,
            temperature: match role {
                Role::Challenger => self.cfg.temperature.challenger,
                Role::Reasoner => self.cfg.temperature.reasoner,
            },
            max_tokens: match role {
                Role::Challenger => self.cfg.max_tokens.challenger,
                Role::Reasoner => self.cfg.max_tokens.reasoner,
            },
            role,
            seed: Some(seed),
        };
        let _permit = self
            .limiter
            .acquire()
            .await
            .expect("semaphore never closed");
        let out = self
            .clients
            .for_role(role)
            .generate(&req)
            .await
            .map_err(|source| EngineError::Policy {
                doc_id: doc_id.to_owned(),
                source,
            })?;
        if out.len() != n {
            return Err(EngineError::Policy {
                doc_id: doc_id.to_owned(),
                source: PolicyError::Protocol(format!(
                    "asked for {n} completions, got {}",
                    out.len()
                )),
            });
        }
        Ok(out)
    }

    /// Challenger attempts on `doc` in rounds of `G`, stopping at the first
    /// valid attempt once `min_pool` attempts exist, or after `budget`.
    /// `key` namespaces the seeds (iteration and slot for training runs).
    pub async fn attempts(
        &self,
        doc: &Document,
        key: [u64; 2],
        min_pool: usize,
        budget: usize,
    ) -> Result<Vec<Attempt>, EngineError> {
        let g = self.cfg.group_size;
        let min_pool = min_pool.min(budget).max(1);
        let format_prompt = build_format_prompt(&self.templates, doc);
        let mut pool: Vec<Attempt> = Vec::new();
        let mut round = 0u64;
        while pool.len() < budget {
            let r = g.min(budget - pool.len());
            let fseed = seed::derive(self.cfg.seed, &[key[0], key[1], round, 0]);
            let replies = self
                .call(Role::Challenger, &format_prompt, r, fseed, &doc.id)
                .await?;
            let mut slots: Vec<Option<Attempt>> = vec![None; r];
            let mut groups: Vec<(AnswerType, FormatDecision, Vec<usize>)> = Vec::new();
            for (i, reply) in replies.into_iter().enumerate() {
                match parse_format_decision(&reply) {
                    Ok(d) => {
                        let t = d.answer_type();
                        match groups.iter_mut().find(|(k, _, _)| *k == t) {
                            Some((_, _, idx)) => idx.push(i),
                            None => groups.push((t, d.clone(), vec![i])),
                        }
                        slots[i] = Some(Attempt {
                            prompt: String::new(),
                            completion: reply,
                            decision: Some(d),
                            outcome: Err(format_failure(FormatError::InvalidGeneration)),
                        });
                    }
                    Err(e) => {
                        slots[i] = Some(Attempt {
                            prompt: format_prompt.clone(),
                            completion: reply,
                            decision: None,
                            outcome: Err(format_failure(e)),
                        })
                    }
                }
            }
            for (gi, (_, decision, idx)) in groups.iter().enumerate() {
                let prompt = build_task_prompt(&self.templates, doc, decision);
                let tseed = seed::derive(self.cfg.seed, &[key[0], key[1], round, 1 + gi as u64]);
                let gens = self
                    .call(Role::Challenger, &prompt, idx.len(), tseed, &doc.id)
                    .await?;
                for (&i, generation) in idx.iter().zip(gens) {
                    let slot = slots[i].as_mut().expect("decision slot filled");
                    let d = slot.decision.clone().expect("decision present");
                    slot.outcome = parse_task(&generation, &d, &doc.id);
                    slot.prompt = prompt.clone();
                    slot.completion = generation;
                }
            }
            pool.extend(slots.into_iter().map(|s| s.expect("every slot filled")));
            round += 1;
            if let Some(first) = pool.iter().position(Attempt::is_valid) {
                if pool.len() >= min_pool {
                    pool.truncate(min_pool.max(first + 1));
                    break;
                }
            }
        }
        Ok(pool)
    }

    /// `G` reasoner completions for `task` and their labels.
    pub async fn answer(
        &self,
        task: &Task,
        seed: u64,
    ) -> Result<(String, Vec<String>, GroupStats), EngineError> {
        let prompt = render_prompt(&self.templates, self.cfg.template_family, &task.question);
        let completions = self
            .call(
                Role::Reasoner,
                &prompt,
                self.cfg.group_size,
                seed,
                &task.source_doc,
            )
            .await?;
        let labels = completions
            .iter()
            .map(|c| label_completion(&task.gold, c))
            .collect();
        Ok((prompt, completions, GroupStats::new(labels)))
    }

    /// Plays document `doc` in batch position `slot` of iteration `t`.
    pub async fn run_document(
        &self,
        t: u64,
        slot: u64,
        doc: &Document,
    ) -> Result<DocOutcome, EngineError> {
        let g = self.cfg.group_size;
        let pool = self
            .attempts(doc, [t, slot], g, self.cfg.max_attempts)
            .await?;
        let mut invalid_reasons = BTreeMap::new();
        for a in &pool {
            if let Err(e) = &a.outcome {
                *invalid_reasons.entry(e.reason).or_insert(0) += 1;
            }
        }
        let mask: Vec<bool> = pool.iter().map(Attempt::is_valid).collect();
        let mut rng = seed::rng(self.cfg.seed, &[t, slot, seed::hash_str(TAG_SUBSAMPLE)]);
        let picked = subsample(&mask, g, &mut rng);
        let valid_picked: Vec<usize> = picked.iter().copied().filter(|&i| mask[i]).collect();
        let selected = (!valid_picked.is_empty())
            .then(|| valid_picked[rng.random_range(0..valid_picked.len())]);

        let answers = futures::future::try_join_all(valid_picked.iter().map(|&i| {
            let task = pool[i].outcome.as_ref().expect("valid attempt");
            let s = seed::derive(
                self.cfg.seed,
                &[t, slot, seed::hash_str(TAG_REASONER), i as u64],
            );
            async move { self.answer(task, s).await.map(|a| (i, a)) }
        }))
        .await?;
        let answers: BTreeMap<usize, _> = answers.into_iter().collect();

        let gid = format!("{t:06}-{slot:04}");
        let mut challenger: Vec<Trajectory> = picked
            .iter()
            .map(|&i| {
                let a = &pool[i];
                let stats = answers.get(&i).map(|(_, _, s)| s);
                Trajectory {
                    iter: t,
                    role: Role::Challenger,
                    group_id: format!("{gid}-c"),
                    doc_id: doc.id.clone(),
                    prompt: a.prompt.clone(),
                    completion: a.completion.clone(),
                    reward: challenger_reward(stats, &self.cfg.reward),
                    advantage: 0.0,
                    valid: Some(a.is_valid()),
                    answer_type: a.answer_type(),
                }
            })
            .collect();
        compute_advantages(&mut challenger, Role::Challenger)?;

        let mut reasoner = Vec::new();
        let mut chosen = None;
        if let Some(i) = selected {
            let task = pool[i].outcome.clone().expect("valid attempt");
            let (prompt, completions, stats) = answers[&i].clone();
            reasoner = completions
                .into_iter()
                .zip(stats.labels())
                .map(|(completion, &l)| Trajectory {
                    iter: t,
                    role: Role::Reasoner,
                    group_id: format!("{gid}-r"),
                    doc_id: doc.id.clone(),
                    prompt: prompt.clone(),
                    completion,
                    reward: reasoner_reward(l),
                    advantage: 0.0,
                    valid: None,
                    answer_type: Some(task.answer_type),
                })
                .collect();
            compute_advantages(&mut reasoner, Role::Reasoner)?;
            chosen = Some((task, stats));
        }
        Ok(DocOutcome {
            doc_id: doc.id.clone(),
            attempts: pool.len(),
            valid_attempts: mask.iter().filter(|&&v| v).count(),
            invalid_reasons,
            challenger,
            reasoner,
            selected: chosen,
        })
    }

    /// Per-document outcomes of iteration `t` (1-based), in batch order.
    pub async fn run_documents(&self, t: u64) -> Result<Vec<DocOutcome>, EngineError> {
        let docs = self.store.sample(self.cfg.batch_size, t)?;
        futures::future::try_join_all(
            docs.iter()
                .enumerate()
                .map(|(slot, doc)| self.run_document(t, slot as u64, doc)),
        )
        .await
    }

    /// Runs iteration `t` (1-based) and returns its batch.
    pub async fn run_iteration(&self, t: u64) -> Result<IterationBatch, EngineError> {
        Ok(IterationBatch::assemble(t, self.run_documents(t).await?))
    }

    /// Runs iterations into `out`, resuming after the last completed one.
    pub async fn run(&self, out: &Path, control: &RunControl) -> Result<RunSummary, EngineError> {
        let dir = RunDir::open(out, &self.cfg)?;
        let first = dir.first_incomplete(self.cfg.iterations)?;
        dir.rebuild_metrics(first)?;
        let mut summary = RunSummary {
            resumed_from: first,
            completed: Vec::new(),
            stopped_early: false,
        };
        for t in first..=self.cfg.iterations {
            if control.stop.load(Ordering::SeqCst) {
                summary.stopped_early = true;
                break;
            }
            let batch = self.run_iteration(t).await?;
            dir.commit(&batch, &self.cfg.hash())?;
            tracing::info!(
                iter = t,
                tasks = batch.metrics.tasks,
                valid_rate = batch.metrics.valid_rate,
                mean_pass_rate = ?batch.metrics.mean_pass_rate,
                "iteration complete"
            );
            summary.completed.push(t);
            if control.stop_after.is_some_and(|s| t >= s) && t < self.cfg.iterations {
                summary.stopped_early = true;
                break;
            }
        }
        Ok(summary)
    }
}

impl IterationBatch {
    /// Concatenates document outcomes and computes the iteration metrics.
    pub fn assemble(t: u64, outcomes: Vec<DocOutcome>) -> IterationBatch {
        let mut challenger = Vec::new();
        let mut reasoner = Vec::new();
        let mut reasons = BTreeMap::new();
        let mut attempts = 0;
        let mut valid = 0;
        let mut pass_rates = Vec::new();
        let documents = outcomes.len();
        for o in outcomes {
            attempts += o.attempts;
            valid += o.valid_attempts;
            for (r, c) in o.invalid_reasons {
                *reasons.entry(r).or_insert(0) += c;
            }
            if let Some((_, s)) = &o.selected {
                pass_rates.push(s.pass_rate());
            }
            challenger.extend(o.challenger);
            reasoner.extend(o.reasoner);
        }
        let metrics = IterationMetrics {
            iter: t,
            documents,
            attempts,
            valid_attempts: valid,
            valid_rate: if attempts == 0 {
                0.0
            } else {
                valid as f64 / attempts as f64
            },
            tasks: pass_rates.len(),
            mean_pass_rate: mean(pass_rates.iter().copied()),
            challenger_trajectories: challenger.len(),
            reasoner_trajectories: reasoner.len(),
            challenger_reward_mean: mean(challenger.iter().map(|t| t.reward)).unwrap_or(0.0),
            reasoner_reward_mean: mean(reasoner.iter().map(|t| t.reward)),
            invalid_reasons: reasons,
        };
        IterationBatch {
            iter: t,
            challenger,
            reasoner,
            metrics,
        }
    }
}

/// Stop conditions checked at iteration boundaries.
#[derive(Debug, Clone, Default)]
pub struct RunControl {
    /// Stop once this iteration index has completed.
    pub stop_after: Option<u64>,
    pub stop: Arc<AtomicBool>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct RunSummary {
    pub resumed_from: u64,
    pub completed: Vec<u64>,
    pub stopped_early: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub iter: u64,
    pub config_hash: String,
    pub challenger_count: usize,
    pub reasoner_count: usize,
    pub batch_sha256: String,
    pub metrics: IterationMetrics,
}

/// A run output directory.
#[derive(Debug, Clone)]
pub struct RunDir {
    root: PathBuf,
}

impl RunDir {
    pub const CONFIG: &'static str = "config.json";
    pub const METRICS: &'static str = "metrics.jsonl";

    /// Creates or reopens `root` for `cfg`. An existing snapshot must hash
    /// equal to `cfg`; the snapshot is then refreshed.
    pub fn open(root: &Path, cfg: &EngineConfig) -> Result<Self, EngineError> {
        let dir = Self {
            root: root.to_owned(),
        };
        let batches = dir.batches_dir();
        std::fs::create_dir_all(&batches).map_err(io_err(&batches))?;
        let snap = dir.root.join(Self::CONFIG);
        if snap.exists() {
            let found = Self::snapshot_hash(&snap)?;
            if found != cfg.hash() {
                return Err(EngineError::ConfigMismatch {
                    expected: cfg.hash(),
                    found,
                });
            }
        }
        write_atomic(&snap, cfg.to_json_pretty().as_bytes())?;
        Ok(dir)
    }

    /// Opens an existing directory without a config, for readers.
    pub fn existing(root: &Path) -> Self {
        Self {
            root: root.to_owned(),
        }
    }

    pub fn snapshot_hash(path: &Path) -> Result<String, EngineError> {
        let text = std::fs::read_to_string(path).map_err(io_err(path))?;
        let v: serde_json::Value = serde_json::from_str(&text)
            .map_err(|e| EngineError::Corrupt(format!("config snapshot: {e}")))?;
        Ok(EngineConfig::from_value(v)?.hash())
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn batches_dir(&self) -> PathBuf {
        self.root.join("batches")
    }

    pub fn batch_path(&self, t: u64) -> PathBuf {
        self.batches_dir().join(format!("{t:06}.jsonl"))
    }

    pub fn manifest_path(&self, t: u64) -> PathBuf {
        self.batches_dir().join(format!("{t:06}.manifest.json"))
    }

    pub fn metrics_path(&self) -> PathBuf {
        self.root.join(Self::METRICS)
    }

    pub fn read_manifest(&self, t: u64) -> Result<Option<Manifest>, EngineError> {
        let p = self.manifest_path(t);
        if !p.exists() {
            return Ok(None);
        }
        let text = std::fs::read_to_string(&p).map_err(io_err(&p))?;
        serde_json::from_str(&text)
            .map(Some)
            .map_err(|e| EngineError::Corrupt(format!("{}: {e}", p.display())))
    }

    /// Indices of completed iterations, ascending and contiguous from 1.
    pub fn completed(&self) -> Result<Vec<u64>, EngineError> {
        let mut out = Vec::new();
        let mut t = 1;
        while self.manifest_path(t).exists() {
            out.push(t);
            t += 1;
        }
        Ok(out)
    }

    fn first_incomplete(&self, iterations: u64) -> Result<u64, EngineError> {
        let done = self.completed()?;
        let next = done.last().map_or(1, |t| t + 1);
        let stray = std::fs::read_dir(self.batches_dir())
            .map_err(io_err(&self.batches_dir()))?
            .filter_map(Result::ok)
            .filter_map(|e| {
                let name = e.file_name().into_string().ok()?;
                let idx: u64 = name.strip_suffix(".manifest.json")?.parse().ok()?;
                (idx > next).then_some(idx)
            })
            .min();
        if let Some(idx) = stray {
            return Err(EngineError::Corrupt(format!(
                "manifest for iteration {idx} exists but iteration {next} is incomplete"
            )));
        }
        Ok(next.min(iterations + 1))
    }

    fn rebuild_metrics(&self, first_incomplete: u64) -> Result<(), EngineError> {
        let mut text = String::new();
        for t in 1..first_incomplete {
            let m = self
                .read_manifest(t)?
                .ok_or_else(|| EngineError::Corrupt(format!("missing manifest {t}")))?;
            text.push_str(&serde_json::to_string(&m.metrics).expect("metrics serialize"));
            text.push('\n');
        }
        write_atomic(&self.metrics_path(), text.as_bytes())
    }

    /// Batch file, then manifest, then the metrics line.
    fn commit(&self, batch: &IterationBatch, config_hash: &str) -> Result<(), EngineError> {
        let body = batch.to_jsonl();
        write_atomic(&self.batch_path(batch.iter), body.as_bytes())?;
        let manifest = Manifest {
            iter: batch.iter,
            config_hash: config_hash.to_owned(),
            challenger_count: batch.challenger.len(),
            reasoner_count: batch.reasoner.len(),
            batch_sha256: hex::encode(Sha256::digest(body.as_bytes())),
            metrics: batch.metrics.clone(),
        };
        let mut mtext = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
        mtext.push('\n');
        write_atomic(&self.manifest_path(batch.iter), mtext.as_bytes())?;
        let mp = self.metrics_path();
        let mut f = std::fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(&mp)
            .map_err(io_err(&mp))?;
        let line = serde_json::to_string(&batch.metrics).expect("metrics serialize");
        writeln!(f, "{line}").map_err(io_err(&mp))
    }

    /// Concatenated batch files of completed iterations `>= from`.
    pub fn stream(&self, from: u64) -> Result<Vec<u8>, EngineError> {
        let mut out = Vec::new();
        for t in self.completed()? {
            if t >= from {
                let p = self.batch_path(t);
                out.extend(std::fs::read(&p).map_err(io_err(&p))?);
            }
        }
        Ok(out)
    }
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), EngineError> {
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, bytes).map_err(io_err(&tmp))?;
    std::fs::rename(&tmp, path).map_err(io_err(path))
}
