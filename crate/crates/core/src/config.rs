//! Engine configuration: one JSON document plus dotted `key=value` overrides.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::corpus::DEFAULT_SEGMENT_BUDGET;
use crate::rewards::RewardConfig;
use crate::taskgen::TemplateFamily;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid config: {0}")]
    Invalid(String),
    #[error("unknown config key `{0}`")]
    UnknownKey(String),
    #[error("malformed override `{0}`; expected key=value")]
    MalformedOverride(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PerRole<T> {
    pub challenger: T,
    pub reasoner: T,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum PolicyKind {
    #[default]
    Scripted,
    Remote,
}

/// Endpoint settings for one role; empty strings inherit the shared value.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct EndpointOverride {
    pub base_url: String,
    pub model: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RemoteConfig {
    pub base_url: String,
    pub api_key_env: String,
    pub model: String,
    pub timeout_secs: u64,
    pub max_attempts: u32,
    pub backoff_ms: u64,
    pub roles: PerRole<EndpointOverride>,
}

impl Default for RemoteConfig {
    fn default() -> Self {
        Self {
            base_url: "http://127.0.0.1:8000/v1".into(),
            api_key_env: "OPENAI_API_KEY".into(),
            model: "default".into(),
            timeout_secs: 120,
            max_attempts: 5,
            backoff_ms: 200,
            roles: PerRole {
                challenger: EndpointOverride::default(),
                reasoner: EndpointOverride::default(),
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScriptedChallengerConfig {
    /// Probability that a format reply selects a multiple-choice task.
    pub mcq_rate: f64,
    /// Probability that a task reply is invalid.
    pub invalid_rate: f64,
    pub difficulty_min: f64,
    pub difficulty_max: f64,
}

impl Default for ScriptedChallengerConfig {
    fn default() -> Self {
        Self {
            mcq_rate: 0.3,
            invalid_rate: 0.4,
            difficulty_min: 0.0,
            difficulty_max: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScriptedReasonerConfig {
    pub skill: f64,
    pub sharpness: f64,
    /// Probability that a wrong answer omits the box entirely.
    pub no_box_rate: f64,
}

impl Default for ScriptedReasonerConfig {
    fn default() -> Self {
        Self {
            skill: 0.5,
            sharpness: 10.0,
            no_box_rate: 0.2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct ScriptedConfig {
    pub challenger: ScriptedChallengerConfig,
    pub reasoner: ScriptedReasonerConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct PolicyConfig {
    pub kind: PolicyKind,
    pub remote: RemoteConfig,
    pub scripted: ScriptedConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EngineConfig {
    #[serde(rename = "B")]
    pub batch_size: usize,
    #[serde(rename = "G")]
    pub group_size: usize,
    #[serde(rename = "N")]
    pub max_attempts: usize,
    #[serde(rename = "T")]
    pub iterations: u64,
    pub seed: u64,
    pub reward: RewardConfig,
    pub template_family: TemplateFamily,
    /// `"builtin"` or a directory of template files.
    pub templates: String,
    pub concurrency: usize,
    pub temperature: PerRole<f64>,
    pub max_tokens: PerRole<u32>,
    pub segment_budget: usize,
    /// Path of a saved corpus store.
    pub corpus: String,
    pub source_mix: BTreeMap<String, f64>,
    pub policy: PolicyConfig,
}

impl Default for EngineConfig {
    fn default() -> Self {
        Self {
            batch_size: 128,
            group_size: 8,
            max_attempts: 1024,
            iterations: 640,
            seed: 0,
            reward: RewardConfig::default(),
            template_family: TemplateFamily::Qwen3,
            templates: "builtin".into(),
            concurrency: 32,
            temperature: PerRole {
                challenger: 1.0,
                reasoner: 1.0,
            },
            max_tokens: PerRole {
                challenger: 4096,
                reasoner: 4096,
            },
            segment_budget: DEFAULT_SEGMENT_BUDGET,
            corpus: String::new(),
            source_mix: BTreeMap::new(),
            policy: PolicyConfig::default(),
        }
    }
}

/// Keys excluded from the run hash: they change how long or how fast a run
/// goes, never what any iteration contains.
const UNHASHED_KEYS: [&str; 2] = ["T", "concurrency"];

impl EngineConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: String| Err(ConfigError::Invalid(m));
        for (name, v) in [
            ("B", self.batch_size),
            ("G", self.group_size),
            ("N", self.max_attempts),
            ("concurrency", self.concurrency),
            ("segment_budget", self.segment_budget),
        ] {
            if v == 0 {
                return bad(format!("{name} must be at least 1"));
            }
        }
        if self.iterations == 0 {
            return bad("T must be at least 1".into());
        }
        self.reward.validate().map_err(ConfigError::Invalid)?;
        for (role, t) in [
            ("challenger", self.temperature.challenger),
            ("reasoner", self.temperature.reasoner),
        ] {
            if !(t >= 0.0 && t.is_finite()) {
                return bad(format!("temperature.{role} must be non-negative"));
            }
        }
        if self.max_tokens.challenger == 0 || self.max_tokens.reasoner == 0 {
            return bad("max_tokens must be positive".into());
        }
        let sc = &self.policy.scripted.challenger;
        for (name, p) in [
            ("mcq_rate", sc.mcq_rate),
            ("invalid_rate", sc.invalid_rate),
            ("difficulty_min", sc.difficulty_min),
            ("difficulty_max", sc.difficulty_max),
            ("no_box_rate", self.policy.scripted.reasoner.no_box_rate),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return bad(format!("scripted {name} must lie in [0, 1]"));
            }
        }
        if sc.difficulty_min > sc.difficulty_max {
            return bad("scripted difficulty_min exceeds difficulty_max".into());
        }
        if self.policy.remote.max_attempts == 0 {
            return bad("policy.remote.max_attempts must be at least 1".into());
        }
        Ok(())
    }

    pub fn from_value(v: Value) -> Result<Self, ConfigError> {
        let cfg: Self =
            serde_json::from_value(v).map_err(|e| ConfigError::Invalid(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Loads `path` (or defaults when `None`) and applies `key=value`
    /// overrides in order.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self, ConfigError> {
        let mut v = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| ConfigError::Io {
                    path: p.display().to_string(),
                    source: e,
                })?;
                let file: Value =
                    serde_json::from_str(&text).map_err(|e| ConfigError::Invalid(e.to_string()))?;
                let mut base = serde_json::to_value(Self::default()).expect("config serializes");
                merge(&mut base, file);
                base
            }
            None => serde_json::to_value(Self::default()).expect("config serializes"),
        };
        for o in overrides {
            apply_override(&mut v, o)?;
        }
        Self::from_value(v)
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes") + "\n"
    }

    /// Hex SHA-256 of the canonical config with run-length keys removed.
    pub fn hash(&self) -> String {
        let mut v = serde_json::to_value(self).expect("config serializes");
        if let Value::Object(map) = &mut v {
            for k in UNHASHED_KEYS {
                map.remove(k);
            }
        }
        hex::encode(Sha256::digest(v.to_string().as_bytes()))
    }

    /// Every dotted leaf key with its default value.
    pub fn documented_keys() -> Vec<(String, String)> {
        let mut out = Vec::new();
        let v = serde_json::to_value(Self::default()).expect("config serializes");
        leaves("", &v, &mut out);
        out
    }
}

fn leaves(prefix: &str, v: &Value, out: &mut Vec<(String, String)>) {
    match v {
        Value::Object(map) if !map.is_empty() => {
            for (k, child) in map {
                let key = if prefix.is_empty() {
                    k.clone()
                } else {
                    format!("{prefix}.{k}")
                };
                leaves(&key, child, out);
            }
        }
        other => out.push((prefix.to_owned(), other.to_string())),
    }
}

fn merge(base: &mut Value, patch: Value) {
    match (base, patch) {
        (Value::Object(b), Value::Object(p)) => {
            for (k, v) in p {
                match b.get_mut(&k) {
                    Some(slot) if slot.is_object() && v.is_object() && k != "source_mix" => {
                        merge(slot, v)
                    }
                    _ => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (b, p) => *b = p,
    }
}

/// Applies one `a.b.c=value` override. The value is read as JSON when it
/// parses, otherwise as a bare string. Keys under `source_mix` are free-form.
pub fn apply_override(v: &mut Value, spec: &str) -> Result<(), ConfigError> {
    let (key, raw) = spec
        .split_once('=')
        .ok_or_else(|| ConfigError::MalformedOverride(spec.to_owned()))?;
    let key = key.trim();
    if key.is_empty() {
        return Err(ConfigError::MalformedOverride(spec.to_owned()));
    }
    let value =
        serde_json::from_str::<Value>(raw).unwrap_or_else(|_| Value::String(raw.to_owned()));
    let parts: Vec<&str> = key.split('.').collect();
    let mut cur = v;
    for (i, part) in parts.iter().enumerate() {
        let free_form = i == 1 && parts[0] == "source_mix";
        let map = cur
            .as_object_mut()
            .ok_or_else(|| ConfigError::UnknownKey(key.to_owned()))?;
        if !free_form && !map.contains_key(*part) {
            return Err(ConfigError::UnknownKey(key.to_owned()));
        }
        if i + 1 == parts.len() {
            if !free_form && map[*part].is_object() && part != &"source_mix" {
                return Err(ConfigError::Invalid(format!(
                    "`{key}` is a section, not a value"
                )));
            }
            map.insert((*part).to_owned(), value);
            return Ok(());
        }
        cur = map.get_mut(*part).expect("checked above");
    }
    unreachable!("split yields at least one part")
}
