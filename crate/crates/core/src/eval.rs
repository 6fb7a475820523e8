//! Crossplay evaluation and the co-evolution simulator.

use std::io::Write;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::engine::{Engine, EngineError};
use crate::policy::solve_probability;
use crate::rewards::{reward_at_pass_rate, GroupStats, RewardConfig, RewardScheme};
use crate::seed;
use crate::taskgen::AnswerType;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error("no valid task was produced for any of {0} documents")]
    NoValidTasks(usize),
    #[error("invalid simulator config: {0}")]
    InvalidSim(String),
    #[error("csv output: {0}")]
    Csv(#[from] csv::Error),
    #[error("{0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossplayConfig {
    pub challenger_id: String,
    pub reasoner_id: String,
    pub n_docs: usize,
    pub attempts_per_doc: usize,
}

impl Default for CrossplayConfig {
    fn default() -> Self {
        Self {
            challenger_id: "challenger".into(),
            reasoner_id: "reasoner".into(),
            n_docs: 128,
            attempts_per_doc: 128,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskRecord {
    pub doc_id: String,
    pub pass_rate: f64,
    pub answer_type: AnswerType,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossplayReport {
    pub challenger_id: String,
    pub reasoner_id: String,
    pub documents_used: usize,
    pub pass_rate: f64,
    pub tasks: Vec<TaskRecord>,
}

impl CrossplayReport {
    pub fn recomputed_pass_rate(&self) -> f64 {
        self.tasks.iter().map(|t| t.pass_rate).sum::<f64>() / self.tasks.len() as f64
    }

    pub fn write_csv(&self, w: impl Write) -> Result<(), EvalError> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["doc_id", "pass_rate", "answer_type"])?;
        for t in &self.tasks {
            out.write_record([
                t.doc_id.as_str(),
                &t.pass_rate.to_string(),
                t.answer_type.as_str(),
            ])?;
        }
        out.flush()?;
        Ok(())
    }
}

const TAG_CROSSPLAY: &str = "eval.crossplay";
const TAG_CROSSPLAY_REASONER: &str = "eval.crossplay.reasoner";

/// Pits the engine's challenger client against its reasoner client.
///
/// Each sampled document gets up to `attempts_per_doc` challenger attempts;
/// the first valid task is answered `G` times. Documents without a valid
/// task contribute no record.
pub async fn crossplay(
    engine: &Engine,
    cfg: &CrossplayConfig,
) -> Result<CrossplayReport, EvalError> {
    let tag = seed::hash_str(TAG_CROSSPLAY);
    let docs = engine
        .store()
        .sample(cfg.n_docs, tag)
        .map_err(EngineError::from)?;
    let base = engine.config().seed;
    let records =
        futures::future::try_join_all(docs.iter().enumerate().map(|(slot, doc)| async move {
            let pool = engine
                .attempts(doc, [tag, slot as u64], 1, cfg.attempts_per_doc.max(1))
                .await?;
            let Some(task) = pool.iter().find_map(|a| a.outcome.as_ref().ok()) else {
                return Ok::<_, EngineError>(None);
            };
            let s = seed::derive(base, &[seed::hash_str(TAG_CROSSPLAY_REASONER), slot as u64]);
            let (_, _, stats) = engine.answer(task, s).await?;
            Ok(Some(TaskRecord {
                doc_id: doc.id.clone(),
                pass_rate: stats.pass_rate(),
                answer_type: task.answer_type,
            }))
        }))
        .await?;
    let tasks: Vec<TaskRecord> = records.into_iter().flatten().collect();
    if tasks.is_empty() {
        return Err(EvalError::NoValidTasks(cfg.n_docs));
    }
    let mut report = CrossplayReport {
        challenger_id: cfg.challenger_id.clone(),
        reasoner_id: cfg.reasoner_id.clone(),
        documents_used: docs.len(),
        pass_rate: 0.0,
        tasks,
    };
    report.pass_rate = report.recomputed_pass_rate();
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub steps: usize,
    pub reward: RewardConfig,
    pub lr: f64,
    pub initial_skill: f64,
    /// Candidate difficulties, ascending.
    pub grid: Vec<f64>,
    /// Reasoner samples per task.
    pub k: usize,
    pub sharpness: f64,
    pub seed: u64,
    /// Step at which a frozen copy of the reasoner is taken for the
    /// fixed-role trends.
    pub freeze_at: Option<usize>,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            steps: 2000,
            reward: RewardConfig::default(),
            lr: 0.0015,
            initial_skill: 0.1,
            grid: (0..=100).map(|i| i as f64 / 100.0).collect(),
            k: 8,
            sharpness: 10.0,
            seed: 0,
            freeze_at: None,
        }
    }
}

impl SimConfig {
    pub fn with_scheme(mut self, scheme: RewardScheme) -> Self {
        self.reward.scheme = scheme;
        self
    }

    pub fn validate(&self) -> Result<(), EvalError> {
        let bad = |m: &str| Err(EvalError::InvalidSim(m.into()));
        if self.steps == 0 {
            return bad("steps must be at least 1");
        }
        if self.k == 0 {
            return bad("k must be at least 1");
        }
        if self.grid.is_empty() || self.grid.iter().any(|d| !(0.0..=1.0).contains(d)) {
            return bad("grid must be non-empty and within [0, 1]");
        }
        if self.grid.windows(2).any(|w| w[0] >= w[1]) {
            return bad("grid must be strictly ascending");
        }
        if self.lr.is_nan() || self.lr < 0.0 {
            return bad("lr must be non-negative");
        }
        self.reward.validate().map_err(EvalError::InvalidSim)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimRow {
    pub step: usize,
    pub difficulty: f64,
    /// Solve probability of the chosen task for the current reasoner.
    pub pass_rate: f64,
    pub skill: f64,
    /// Reward earned on the sampled labels.
    pub reward: f64,
    pub expected_reward: f64,
    pub observed_pass_rate: f64,
    /// Frozen reasoner against the current challenger.
    pub frozen_reasoner_pass_rate: Option<f64>,
    /// Current reasoner against the frozen challenger's difficulty.
    pub frozen_challenger_pass_rate: Option<f64>,
}

fn binomial_pmf(k: usize, p: f64) -> Vec<f64> {
    let mut c = 1.0f64;
    (0..=k)
        .map(|x| {
            if x > 0 {
                c = c * (k - x + 1) as f64 / x as f64;
            }
            c * p.powi(x as i32) * (1.0 - p).powi((k - x) as i32)
        })
        .collect()
}

/// Expected challenger reward when `k` labels are drawn at solve rate `p`.
pub fn expected_reward(p: f64, k: usize, reward: &RewardConfig) -> f64 {
    binomial_pmf(k, p)
        .iter()
        .enumerate()
        .map(|(x, w)| w * reward_at_pass_rate(x as f64 / k as f64, reward))
        .sum()
}

/// Grid difficulty with the highest expected reward; ties go to the lowest.
pub fn choose_difficulty(cfg: &SimConfig, skill: f64) -> (f64, f64) {
    let mut best = (cfg.grid[0], f64::NEG_INFINITY);
    for &d in &cfg.grid {
        let e = expected_reward(
            solve_probability(skill, d, cfg.sharpness),
            cfg.k,
            &cfg.reward,
        );
        if e > best.1 + 1e-12 {
            best = (d, e);
        }
    }
    best
}

/// Runs the simulated challenger/reasoner pair for `cfg.steps` steps.
pub fn simulate_coevolution(cfg: &SimConfig) -> Result<Vec<SimRow>, EvalError> {
    cfg.validate()?;
    let mut rng = seed::rng(cfg.seed, &[seed::hash_str("eval.simulate")]);
    let mut skill = cfg.initial_skill;
    let mut frozen: Option<(f64, f64)> = None;
    let mut rows = Vec::with_capacity(cfg.steps);
    for step in 0..cfg.steps {
        if cfg.freeze_at == Some(step) {
            frozen = Some((skill, choose_difficulty(cfg, skill).0));
        }
        let (difficulty, expected) = choose_difficulty(cfg, skill);
        let p = solve_probability(skill, difficulty, cfg.sharpness);
        let labels: Vec<u8> = (0..cfg.k)
            .map(|_| u8::from(rng.random::<f64>() < p))
            .collect();
        let stats = GroupStats::new(labels);
        rows.push(SimRow {
            step,
            difficulty,
            pass_rate: p,
            skill,
            reward: reward_at_pass_rate(stats.pass_rate(), &cfg.reward),
            expected_reward: expected,
            observed_pass_rate: stats.pass_rate(),
            frozen_reasoner_pass_rate: frozen
                .map(|(s, _)| solve_probability(s, difficulty, cfg.sharpness)),
            frozen_challenger_pass_rate: frozen
                .map(|(_, d)| solve_probability(skill, d, cfg.sharpness)),
        });
        skill += cfg.lr * p * (1.0 - p);
    }
    Ok(rows)
}

pub fn write_series_csv(rows: &[SimRow], w: impl Write) -> Result<(), EvalError> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record([
        "step",
        "difficulty",
        "pass_rate",
        "skill",
        "reward",
        "expected_reward",
        "observed_pass_rate",
        "frozen_reasoner_pass_rate",
        "frozen_challenger_pass_rate",
    ])?;
    let opt = |x: Option<f64>| x.map(|v| v.to_string()).unwrap_or_default();
    for r in rows {
        out.write_record([
            r.step.to_string(),
            r.difficulty.to_string(),
            r.pass_rate.to_string(),
            r.skill.to_string(),
            r.reward.to_string(),
            r.expected_reward.to_string(),
            r.observed_pass_rate.to_string(),
            opt(r.frozen_reasoner_pass_rate),
            opt(r.frozen_challenger_pass_rate),
        ])?;
    }
    out.flush()?;
    Ok(())
}

/// Reward of every scheme on a pass-rate grid `0, 0.01, ..., 1`.
pub fn write_reward_curve_csv(base: &RewardConfig, w: impl Write) -> Result<(), EvalError> {
    let mut out = csv::Writer::from_writer(w);
    let mut header = vec!["p".to_string()];
    header.extend(RewardScheme::ALL.iter().map(|s| s.as_str().to_string()));
    out.write_record(&header)?;
    for i in 0..=100 {
        let p = i as f64 / 100.0;
        let mut row = vec![p.to_string()];
        row.extend(
            RewardScheme::ALL
                .iter()
                .map(|&s| reward_at_pass_rate(p, &base.with_scheme(s)).to_string()),
        );
        out.write_record(&row)?;
    }
    out.flush()?;
    Ok(())
}

/// Mann-Kendall trend statistic `S = sum_{i<j} sign(x_j - x_i)`.
pub fn mann_kendall_s(xs: &[f64]) -> i64 {
    let mut s = 0i64;
    for i in 0..xs.len() {
        for j in i + 1..xs.len() {
            s += match xs[j].partial_cmp(&xs[i]) {
                Some(std::cmp::Ordering::Greater) => 1,
                Some(std::cmp::Ordering::Less) => -1,
                _ => 0,
            };
        }
    }
    s
}

/// Mean of `|pass_rate - 0.5|` over the last `window` rows.
pub fn tail_balance(rows: &[SimRow], window: usize) -> f64 {
    let tail = &rows[rows.len().saturating_sub(window)..];
    tail.iter().map(|r| (r.pass_rate - 0.5).abs()).sum::<f64>() / tail.len() as f64
}

pub fn tail_mean_pass_rate(rows: &[SimRow], window: usize) -> f64 {
    let tail = &rows[rows.len().saturating_sub(window)..];
    tail.iter().map(|r| r.pass_rate).sum::<f64>() / tail.len() as f64
}

pub fn save_series(rows: &[SimRow], path: &Path) -> Result<(), EvalError> {
    write_series_csv(rows, std::fs::File::create(path)?)
}
