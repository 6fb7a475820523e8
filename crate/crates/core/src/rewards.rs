//! Challenger and reasoner rewards, and mean-centred group advantages.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::taskgen::AnswerType;

/// Correctness labels of one reasoner response group.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupStats {
    labels: Vec<u8>,
    pass_rate: f64,
}

impl GroupStats {
    /// Panics on an empty group or a label outside `{0, 1}`.
    pub fn new(labels: Vec<u8>) -> Self {
        assert!(
            !labels.is_empty(),
            "a response group has at least one label"
        );
        assert!(labels.iter().all(|&l| l <= 1), "labels are binary");
        let correct: u32 = labels.iter().map(|&l| u32::from(l)).sum();
        let pass_rate = f64::from(correct) / labels.len() as f64;
        Self { labels, pass_rate }
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn k(&self) -> usize {
        self.labels.len()
    }

    pub fn correct(&self) -> usize {
        self.labels.iter().filter(|&&l| l == 1).count()
    }

    pub fn pass_rate(&self) -> f64 {
        self.pass_rate
    }

    /// Population variance `p(1-p)`.
    pub fn variance(&self) -> f64 {
        self.pass_rate * (1.0 - self.pass_rate)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub enum RewardScheme {
    #[default]
    Variance,
    AbsoluteZero,
    Threshold,
    RZero,
}

impl RewardScheme {
    pub const ALL: [RewardScheme; 4] = [
        RewardScheme::Variance,
        RewardScheme::AbsoluteZero,
        RewardScheme::Threshold,
        RewardScheme::RZero,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            RewardScheme::Variance => "Variance",
            RewardScheme::AbsoluteZero => "AbsoluteZero",
            RewardScheme::Threshold => "Threshold",
            RewardScheme::RZero => "RZero",
        }
    }
}

impl std::str::FromStr for RewardScheme {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        RewardScheme::ALL
            .into_iter()
            .find(|r| r.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| format!("unknown reward scheme `{s}`"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RewardConfig {
    pub sigma2_opt: f64,
    pub tau: f64,
    pub rho: f64,
    pub scheme: RewardScheme,
}

impl Default for RewardConfig {
    fn default() -> Self {
        Self {
            sigma2_opt: 0.25,
            tau: 0.01,
            rho: -0.1,
            scheme: RewardScheme::Variance,
        }
    }
}

impl RewardConfig {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return Err(format!("reward.tau must be positive, got {}", self.tau));
        }
        if !(self.sigma2_opt > 0.0 && self.sigma2_opt <= 0.25) {
            return Err(format!(
                "reward.sigma2_opt must lie in (0, 0.25], got {}",
                self.sigma2_opt
            ));
        }
        if !self.rho.is_finite() {
            return Err("reward.rho must be finite".into());
        }
        Ok(())
    }

    pub fn with_scheme(self, scheme: RewardScheme) -> Self {
        Self { scheme, ..self }
    }
}

/// Challenger reward as a function of the reasoner pass rate.
pub fn reward_at_pass_rate(p: f64, cfg: &RewardConfig) -> f64 {
    let interior = p > 0.0 && p < 1.0;
    match cfg.scheme {
        RewardScheme::Variance => {
            let var = p * (1.0 - p);
            let d = var - cfg.sigma2_opt;
            (-(d * d) / (2.0 * cfg.tau)).exp()
        }
        RewardScheme::AbsoluteZero => {
            if interior {
                1.0 - p
            } else {
                0.0
            }
        }
        RewardScheme::Threshold => {
            if interior {
                1.0
            } else {
                0.0
            }
        }
        RewardScheme::RZero => 1.0 - 2.0 * (p - 0.5).abs(),
    }
}

/// `None` marks an invalid task, which earns `rho` under every scheme.
pub fn challenger_reward(stats: Option<&GroupStats>, cfg: &RewardConfig) -> f64 {
    match stats {
        None => cfg.rho,
        Some(s) => reward_at_pass_rate(s.pass_rate(), cfg),
    }
}

pub fn reasoner_reward(label: u8) -> f64 {
    assert!(label <= 1, "labels are binary");
    f64::from(label)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Challenger,
    Reasoner,
}

impl Role {
    pub fn as_str(self) -> &'static str {
        match self {
            Role::Challenger => "challenger",
            Role::Reasoner => "reasoner",
        }
    }
}

impl std::str::FromStr for Role {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "challenger" => Ok(Role::Challenger),
            "reasoner" => Ok(Role::Reasoner),
            _ => Err(format!("unknown role `{s}`")),
        }
    }
}

/// One exported record. Field order is the export order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub iter: u64,
    pub role: Role,
    pub group_id: String,
    pub doc_id: String,
    pub prompt: String,
    pub completion: String,
    pub reward: f64,
    pub advantage: f64,
    /// Challenger validity; `None` for reasoner records.
    pub valid: Option<bool>,
    pub answer_type: Option<AnswerType>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AdvantageError {
    #[error("advantage group is empty")]
    Empty,
    #[error("group mixes roles")]
    MixedRoles,
    #[error("group mixes group ids `{0}` and `{1}`")]
    MixedGroups(String, String),
    #[error("group role is {found:?}, expected {expected:?}")]
    WrongRole { expected: Role, found: Role },
    #[error("non-finite reward in group `{0}`")]
    NonFinite(String),
}

/// Mean-centres the rewards of one group: `A_i = r_i - mean(r)`.
pub fn compute_advantages(group: &mut [Trajectory], role: Role) -> Result<(), AdvantageError> {
    let first = group.first().ok_or(AdvantageError::Empty)?;
    let gid = first.group_id.clone();
    for t in group.iter() {
        if t.role != first.role {
            return Err(AdvantageError::MixedRoles);
        }
        if t.group_id != gid {
            return Err(AdvantageError::MixedGroups(gid, t.group_id.clone()));
        }
        if !t.reward.is_finite() {
            return Err(AdvantageError::NonFinite(gid));
        }
    }
    if first.role != role {
        return Err(AdvantageError::WrongRole {
            expected: role,
            found: first.role,
        });
    }
    let rewards: Vec<f64> = group.iter().map(|t| t.reward).collect();
    for (t, a) in group.iter_mut().zip(centre(&rewards)) {
        t.advantage = a;
    }
    Ok(())
}

/// `r_i - mean(r)`. The mean is taken over differences from the first
/// element so that shifting every reward by a constant leaves the result
/// unchanged up to rounding of the shifted inputs themselves.
pub fn centre(rewards: &[f64]) -> Vec<f64> {
    if rewards.is_empty() {
        return Vec::new();
    }
    let base = rewards[0];
    let diffs: Vec<f64> = rewards.iter().map(|r| r - base).collect();
    let mean = diffs.iter().sum::<f64>() / diffs.len() as f64;
    diffs.iter().map(|d| d - mean).collect()
}
