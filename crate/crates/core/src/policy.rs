//! Text generators behind one interface.
//!
//! [`RemoteClient`] speaks the OpenAI-compatible chat-completions protocol.
//! The scripted policies are deterministic doubles keyed by the request seed:
//! a table lookup, a Bernoulli answerer, and a difficulty-parametric
//! challenger/reasoner pair that plays the full self-play protocol without a
//! model.

use std::collections::HashMap;
use std::sync::Arc;
use std::time::Duration;

use async_trait::async_trait;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::{
    EngineConfig, PolicyKind, RemoteConfig, ScriptedChallengerConfig, ScriptedReasonerConfig,
};
use crate::rewards::Role;
use crate::seed;
use crate::taskgen::{render, AnswerType, InvalidReason, TemplateFamily, TemplateSet};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GenerationRequest {
    pub prompt: String,
    pub n: usize,
    pub temperature: f64,
    pub max_tokens: u32,
    pub role: Role,
    /// Sampling seed; scripted policies are a pure function of it.
    pub seed: Option<u64>,
}

#[derive(Debug, Error)]
pub enum PolicyError {
    #[error("transport error after {attempts} attempt(s): {message}")]
    Transport { attempts: u32, message: String },
    #[error("protocol error: {0}")]
    Protocol(String),
    #[error("request rejected with status {status}: {body}")]
    Rejected { status: u16, body: String },
    #[error("invalid request: {0}")]
    InvalidRequest(String),
}

#[async_trait]
pub trait PolicyClient: Send + Sync {
    /// Returns exactly `req.n` completions.
    async fn generate(&self, req: &GenerationRequest) -> Result<Vec<String>, PolicyError>;

    fn label(&self) -> String {
        "policy".into()
    }
}

/// The client used for each role.
#[derive(Clone)]
pub struct Clients {
    pub challenger: Arc<dyn PolicyClient>,
    pub reasoner: Arc<dyn PolicyClient>,
}

impl Clients {
    pub fn new(challenger: Arc<dyn PolicyClient>, reasoner: Arc<dyn PolicyClient>) -> Self {
        Self {
            challenger,
            reasoner,
        }
    }

    pub fn for_role(&self, role: Role) -> &Arc<dyn PolicyClient> {
        match role {
            Role::Challenger => &self.challenger,
            Role::Reasoner => &self.reasoner,
        }
    }

    pub fn from_config(cfg: &EngineConfig) -> Result<Self, PolicyError> {
        match cfg.policy.kind {
            PolicyKind::Scripted => Ok(Self::new(
                Arc::new(ScriptedChallenger::new(
                    cfg.policy.scripted.challenger.clone(),
                )),
                Arc::new(ScriptedReasoner::new(cfg.policy.scripted.reasoner.clone())),
            )),
            PolicyKind::Remote => {
                let r = &cfg.policy.remote;
                let pick = |o: &str, base: &str| {
                    if o.is_empty() {
                        base.to_owned()
                    } else {
                        o.to_owned()
                    }
                };
                let c = &r.roles.challenger;
                let s = &r.roles.reasoner;
                Ok(Self::new(
                    Arc::new(RemoteClient::new(
                        r,
                        &pick(&c.base_url, &r.base_url),
                        &pick(&c.model, &r.model),
                    )?),
                    Arc::new(RemoteClient::new(
                        r,
                        &pick(&s.base_url, &r.base_url),
                        &pick(&s.model, &r.model),
                    )?),
                ))
            }
        }
    }
}

/// Wraps a question in the reasoner chat template.
pub fn render_prompt(templates: &TemplateSet, family: TemplateFamily, question: &str) -> String {
    render(templates.reasoner(family), &[("question", question)])
        .expect("reasoner template placeholders")
}

fn request_rng(req: &GenerationRequest) -> ChaCha8Rng {
    let s = req.seed.unwrap_or_else(|| seed::hash_str(&req.prompt));
    ChaCha8Rng::seed_from_u64(s)
}

fn check(req: &GenerationRequest) -> Result<(), PolicyError> {
    if req.n == 0 {
        return Err(PolicyError::InvalidRequest("n must be at least 1".into()));
    }
    Ok(())
}

/// Prompt → completions table; completions are cycled to fill `n`.
#[derive(Debug, Clone, Default)]
pub struct TablePolicy {
    table: HashMap<String, Vec<String>>,
    fallback: Option<Vec<String>>,
}

impl TablePolicy {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with(mut self, prompt: &str, completions: &[&str]) -> Self {
        self.table.insert(
            prompt.to_owned(),
            completions.iter().map(|s| s.to_string()).collect(),
        );
        self
    }

    pub fn with_fallback(mut self, completions: &[&str]) -> Self {
        self.fallback = Some(completions.iter().map(|s| s.to_string()).collect());
        self
    }
}

#[async_trait]
impl PolicyClient for TablePolicy {
    async fn generate(&self, req: &GenerationRequest) -> Result<Vec<String>, PolicyError> {
        check(req)?;
        let entries = self
            .table
            .get(&req.prompt)
            .or(self.fallback.as_ref())
            .filter(|e| !e.is_empty())
            .ok_or_else(|| PolicyError::Protocol("no scripted completions for prompt".into()))?;
        Ok(entries.iter().cycle().take(req.n).cloned().collect())
    }

    fn label(&self) -> String {
        "table".into()
    }
}

/// Answers correctly with a fixed probability, drawing one uniform per
/// completion from `ChaCha8(seed)`.
#[derive(Debug, Clone)]
pub struct BernoulliAnswerer {
    pub accuracy: f64,
    pub correct: String,
    pub wrong: String,
}

impl BernoulliAnswerer {
    pub fn labels(&self, req: &GenerationRequest) -> Vec<u8> {
        let mut rng = request_rng(req);
        (0..req.n)
            .map(|_| u8::from(rng.random::<f64>() < self.accuracy))
            .collect()
    }
}

#[async_trait]
impl PolicyClient for BernoulliAnswerer {
    async fn generate(&self, req: &GenerationRequest) -> Result<Vec<String>, PolicyError> {
        check(req)?;
        Ok(self
            .labels(req)
            .into_iter()
            .map(|l| {
                let a = if l == 1 { &self.correct } else { &self.wrong };
                format!("The answer is \\boxed{{{a}}}.")
            })
            .collect())
    }

    fn label(&self) -> String {
        format!("bernoulli-{}", self.accuracy)
    }
}

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Probability that a reasoner of `skill` solves a task of `difficulty`.
pub fn solve_probability(skill: f64, difficulty: f64, sharpness: f64) -> f64 {
    sigmoid(sharpness * (skill - difficulty))
}

const WORDS: [&str; 12] = [
    "amber", "basalt", "cobalt", "delta", "ember", "fjord", "garnet", "harbor", "indigo", "jasper",
    "kelp", "lumen",
];

fn difficulty_re() -> &'static Regex {
    static RE: std::sync::OnceLock<Regex> = std::sync::OnceLock::new();
    RE.get_or_init(|| Regex::new(r"\[difficulty=([0-9.]+)\]").unwrap())
}

fn answer_type_re() -> &'static Regex {
    static RE: std::sync::OnceLock<Regex> = std::sync::OnceLock::new();
    RE.get_or_init(|| Regex::new(r"answer type: (\w+)").unwrap())
}

/// Difficulty-parametric challenger.
///
/// Replies to the format-selection prompt with a decision and to task
/// prompts with arithmetic questions tagged `[difficulty=d]`. A configurable
/// share of task replies is invalid, spread over every invalid reason.
#[derive(Debug, Clone)]
pub struct ScriptedChallenger {
    cfg: ScriptedChallengerConfig,
}

impl ScriptedChallenger {
    pub fn new(cfg: ScriptedChallengerConfig) -> Self {
        Self { cfg }
    }

    fn format_reply(&self, rng: &mut ChaCha8Rng) -> String {
        if rng.random::<f64>() < self.cfg.invalid_rate / 4.0 {
            return "This document could support either format.".into();
        }
        if rng.random::<f64>() < self.cfg.mcq_rate {
            return r#"{"suitable_for_mcq": true, "suitable_for_free_form": false, "best_answer_type": null, "reason": "several related quantities"}"#.into();
        }
        let t = ["Integer", "Float", "Expression", "String", "Boolean"][rng.random_range(0..5)];
        format!(
            r#"{{"suitable_for_mcq": false, "suitable_for_free_form": true, "best_answer_type": "{t}", "reason": "a single checkable value"}}"#
        )
    }

    fn task_reply(&self, rng: &mut ChaCha8Rng, answer_type: AnswerType) -> String {
        if rng.random::<f64>() < self.cfg.invalid_rate {
            let reason = InvalidReason::ALL[rng.random_range(0..InvalidReason::ALL.len())];
            return invalid_reply(reason, answer_type);
        }
        let d = rng.random_range(self.cfg.difficulty_min..=self.cfg.difficulty_max);
        let tag = format!("[difficulty={d:.2}]");
        let a: i64 = rng.random_range(2..500);
        let b: i64 = rng.random_range(2..500);
        if answer_type == AnswerType::Mcq {
            let sum = a + b;
            let mut options = [sum, sum + 1, sum - 1, sum + 10];
            options.shuffle(rng);
            let letter = ["A", "B", "C", "D"][options.iter().position(|&o| o == sum).unwrap()];
            let q = format!(
                "Question: {tag} What is {a} + {b}?\nA) {}\nB) {}\nC) {}\nD) {}\nCorrect: {letter}",
                options[0], options[1], options[2], options[3]
            );
            return serde_json::json!({
                "hardening_process": "scripted",
                "multiple_choice_question": q,
                "multiple_choice_correct": letter,
            })
            .to_string();
        }
        let (question, answer) = match answer_type {
            AnswerType::Float => (
                format!("{tag} What is {a} / 8 as a decimal?"),
                format!("{}", a as f64 / 8.0),
            ),
            AnswerType::Expression => (
                format!("{tag} Expand (x + {a})(x + {b})."),
                format!("x^2 + {}*x + {}", a + b, a * b),
            ),
            AnswerType::String => {
                let k = rng.random_range(1..=4usize);
                let words: Vec<&str> = (0..4)
                    .map(|_| WORDS[rng.random_range(0..WORDS.len())])
                    .collect();
                (
                    format!(
                        "{tag} Which word is at position {k} in: {}?",
                        words.join(" ")
                    ),
                    words[k - 1].to_owned(),
                )
            }
            AnswerType::Boolean => {
                let c: i64 = rng.random_range(2..1000);
                (
                    format!("{tag} True or false: {a} + {b} > {c}."),
                    (a + b > c).to_string(),
                )
            }
            _ => (format!("{tag} What is {a} + {b}?"), (a + b).to_string()),
        };
        serde_json::json!({
            "identified_information": ["scripted"],
            "question": question,
            "answer": answer,
            "answer_type": answer_type.as_str(),
        })
        .to_string()
    }
}

fn invalid_reply(reason: InvalidReason, answer_type: AnswerType) -> String {
    let mcq = answer_type == AnswerType::Mcq;
    match reason {
        InvalidReason::NoObject => "I was unable to write a question for this passage.".into(),
        InvalidReason::SchemaViolation if mcq => serde_json::json!({
            "multiple_choice_question": "Question: Pick one.\nA) 1\nB) 2\nC) 3",
            "multiple_choice_correct": "A",
        })
        .to_string(),
        InvalidReason::SchemaViolation => serde_json::json!({
            "question": "How many?", "answer": [42], "answer_type": answer_type.as_str(),
        })
        .to_string(),
        InvalidReason::EmptyBailout if mcq => serde_json::json!({
            "multiple_choice_question": "", "multiple_choice_correct": "",
        })
        .to_string(),
        InvalidReason::EmptyBailout => serde_json::json!({
            "question": "", "answer": "", "answer_type": answer_type.as_str(),
        })
        .to_string(),
        // An MCQ object carries no answer type; fall back to a bad letter.
        InvalidReason::TypeMismatch | InvalidReason::UnparseableGold if mcq => serde_json::json!({
            "multiple_choice_question": "Question: Pick one.\nA) 1\nB) 2\nC) 3\nD) 4",
            "multiple_choice_correct": "E",
        })
        .to_string(),
        InvalidReason::TypeMismatch => {
            let other = if answer_type == AnswerType::String {
                "Integer"
            } else {
                "String"
            };
            serde_json::json!({"question": "Q?", "answer": "7", "answer_type": other}).to_string()
        }
        InvalidReason::UnparseableGold => {
            let bad = match answer_type {
                AnswerType::Expression => "x +* 2",
                AnswerType::Boolean => "maybe",
                AnswerType::String => "   .",
                _ => "many",
            };
            serde_json::json!({"question": "Q?", "answer": bad, "answer_type": answer_type.as_str()})
                .to_string()
        }
    }
}

#[async_trait]
impl PolicyClient for ScriptedChallenger {
    async fn generate(&self, req: &GenerationRequest) -> Result<Vec<String>, PolicyError> {
        check(req)?;
        let base = req.seed.unwrap_or_else(|| seed::hash_str(&req.prompt));
        let kind = if req.prompt.contains("suitable_for_mcq") {
            None
        } else if req.prompt.contains("multiple_choice_question") {
            Some(AnswerType::Mcq)
        } else {
            let t = answer_type_re()
                .captures(&req.prompt)
                .and_then(|c| c[1].parse().ok())
                .unwrap_or(AnswerType::Integer);
            Some(t)
        };
        Ok((0..req.n as u64)
            .map(|i| {
                let mut rng = seed::rng(base, &[i]);
                match kind {
                    None => self.format_reply(&mut rng),
                    Some(t) => self.task_reply(&mut rng, t),
                }
            })
            .collect())
    }

    fn label(&self) -> String {
        "scripted-challenger".into()
    }
}

/// The correct answer to a question written by [`ScriptedChallenger`].
pub fn solve_scripted_question(question: &str) -> Option<String> {
    static RE: std::sync::OnceLock<[Regex; 5]> = std::sync::OnceLock::new();
    let [sum, div, expand, word, cmp] = RE.get_or_init(|| {
        [
            Regex::new(r"What is (\d+) \+ (\d+)\?").unwrap(),
            Regex::new(r"What is (\d+) / 8 as a decimal\?").unwrap(),
            Regex::new(r"Expand \(x \+ (\d+)\)\(x \+ (\d+)\)").unwrap(),
            Regex::new(r"Which word is at position (\d) in: ([a-z ]+)\?").unwrap(),
            Regex::new(r"True or false: (\d+) \+ (\d+) > (\d+)\.").unwrap(),
        ]
    });
    let int = |s: &str| s.parse::<i64>().ok();
    if let Some(c) = sum.captures(question) {
        let total = int(&c[1])? + int(&c[2])?;
        // Multiple choice: answer with the option letter.
        for line in question.lines() {
            if let Some((letter, value)) = line.split_once(") ") {
                if letter.len() == 1 && int(value.trim()) == Some(total) {
                    return Some(letter.to_owned());
                }
            }
        }
        return Some(total.to_string());
    }
    if let Some(c) = div.captures(question) {
        return Some(format!("{}", int(&c[1])? as f64 / 8.0));
    }
    if let Some(c) = expand.captures(question) {
        let (a, b) = (int(&c[1])?, int(&c[2])?);
        return Some(format!("x^2 + {}x + {}", a + b, a * b));
    }
    if let Some(c) = word.captures(question) {
        let k: usize = c[1].parse().ok()?;
        return c[2]
            .split_whitespace()
            .nth(k.checked_sub(1)?)
            .map(str::to_owned);
    }
    if let Some(c) = cmp.captures(question) {
        return Some((int(&c[1])? + int(&c[2])? > int(&c[3])?).to_string());
    }
    None
}

fn wrong_answer(correct: &str) -> String {
    match correct {
        "A" | "B" | "C" | "D" => if correct == "A" { "B" } else { "A" }.into(),
        "true" => "false".into(),
        "false" => "true".into(),
        _ => {
            if let Ok(n) = correct.parse::<i64>() {
                (n + 1).to_string()
            } else if let Ok(x) = correct.parse::<f64>() {
                format!("{}", x + 1.0)
            } else if correct.starts_with("x^2") {
                format!("{correct} + 1")
            } else {
                format!("{correct}s")
            }
        }
    }
}

/// Solves scripted questions correctly with probability
/// `sigmoid(sharpness * (skill - difficulty))`.
#[derive(Debug, Clone)]
pub struct ScriptedReasoner {
    cfg: ScriptedReasonerConfig,
}

impl ScriptedReasoner {
    pub fn new(cfg: ScriptedReasonerConfig) -> Self {
        Self { cfg }
    }

    pub fn probability(&self, prompt: &str) -> f64 {
        let d = difficulty_re()
            .captures(prompt)
            .and_then(|c| c[1].parse::<f64>().ok())
            .unwrap_or(0.5);
        solve_probability(self.cfg.skill, d, self.cfg.sharpness)
    }
}

#[async_trait]
impl PolicyClient for ScriptedReasoner {
    async fn generate(&self, req: &GenerationRequest) -> Result<Vec<String>, PolicyError> {
        check(req)?;
        let p = self.probability(&req.prompt);
        let answer = solve_scripted_question(&req.prompt);
        let mut rng = request_rng(req);
        Ok((0..req.n)
            .map(|_| {
                let correct = rng.random::<f64>() < p;
                let no_box = rng.random::<f64>() < self.cfg.no_box_rate;
                match &answer {
                    Some(a) if correct => {
                        format!("Working through it step by step.\nThe answer is \\boxed{{{a}}}.")
                    }
                    Some(_) | None if no_box => "I am not sure how to finish this.".into(),
                    Some(a) => format!("A quick estimate gives \\boxed{{{}}}.", wrong_answer(a)),
                    None => "The answer is \\boxed{?}.".into(),
                }
            })
            .collect())
    }

    fn label(&self) -> String {
        format!("scripted-reasoner-{}", self.cfg.skill)
    }
}

#[derive(Serialize)]
struct ChatMessage<'a> {
    role: &'a str,
    content: &'a str,
}

#[derive(Serialize)]
struct ChatRequest<'a> {
    model: &'a str,
    messages: [ChatMessage<'a>; 1],
    n: usize,
    temperature: f64,
    max_tokens: u32,
    #[serde(skip_serializing_if = "Option::is_none")]
    seed: Option<u64>,
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<ChatChoice>,
}

#[derive(Deserialize)]
struct ChatChoice {
    #[serde(default)]
    index: Option<usize>,
    message: ChatChoiceMessage,
}

#[derive(Deserialize)]
struct ChatChoiceMessage {
    #[serde(default)]
    content: Option<String>,
}

/// OpenAI-compatible chat-completions client with bounded retries.
#[derive(Debug, Clone)]
pub struct RemoteClient {
    http: reqwest::Client,
    url: String,
    model: String,
    api_key: Option<String>,
    max_attempts: u32,
    backoff: Duration,
}

impl RemoteClient {
    pub fn new(cfg: &RemoteConfig, base_url: &str, model: &str) -> Result<Self, PolicyError> {
        let http = reqwest::Client::builder()
            .timeout(Duration::from_secs(cfg.timeout_secs))
            .build()
            .map_err(|e| PolicyError::InvalidRequest(e.to_string()))?;
        let api_key = if cfg.api_key_env.is_empty() {
            None
        } else {
            std::env::var(&cfg.api_key_env).ok()
        };
        Ok(Self {
            http,
            url: format!("{}/chat/completions", base_url.trim_end_matches('/')),
            model: model.to_owned(),
            api_key,
            max_attempts: cfg.max_attempts.max(1),
            backoff: Duration::from_millis(cfg.backoff_ms),
        })
    }

    pub fn url(&self) -> &str {
        &self.url
    }

    async fn attempt(&self, req: &GenerationRequest) -> Result<Vec<String>, Attempt> {
        let body = ChatRequest {
            model: &self.model,
            messages: [ChatMessage {
                role: "user",
                content: &req.prompt,
            }],
            n: req.n,
            temperature: req.temperature,
            max_tokens: req.max_tokens,
            seed: req.seed,
        };
        let mut builder = self.http.post(&self.url).json(&body);
        if let Some(key) = &self.api_key {
            builder = builder.bearer_auth(key);
        }
        let resp = builder
            .send()
            .await
            .map_err(|e| Attempt::Retry(e.to_string()))?;
        let status = resp.status();
        if status.is_server_error() {
            return Err(Attempt::Retry(format!("server returned {status}")));
        }
        if !status.is_success() {
            let body = resp.text().await.unwrap_or_default();
            return Err(Attempt::Fatal(PolicyError::Rejected {
                status: status.as_u16(),
                body,
            }));
        }
        let text = resp
            .text()
            .await
            .map_err(|e| Attempt::Retry(e.to_string()))?;
        let parsed: ChatResponse = serde_json::from_str(&text).map_err(|e| {
            Attempt::Fatal(PolicyError::Protocol(format!("bad response body: {e}")))
        })?;
        if parsed.choices.len() != req.n {
            return Err(Attempt::Fatal(PolicyError::Protocol(format!(
                "expected {} choices, got {}",
                req.n,
                parsed.choices.len()
            ))));
        }
        let mut choices: Vec<(usize, String)> = parsed
            .choices
            .into_iter()
            .enumerate()
            .map(|(i, c)| (c.index.unwrap_or(i), c.message.content.unwrap_or_default()))
            .collect();
        choices.sort_by_key(|(i, _)| *i);
        Ok(choices.into_iter().map(|(_, c)| c).collect())
    }
}

enum Attempt {
    Retry(String),
    Fatal(PolicyError),
}

#[async_trait]
impl PolicyClient for RemoteClient {
    async fn generate(&self, req: &GenerationRequest) -> Result<Vec<String>, PolicyError> {
        check(req)?;
        let mut last = String::new();
        for attempt in 1..=self.max_attempts {
            match self.attempt(req).await {
                Ok(out) => return Ok(out),
                Err(Attempt::Fatal(e)) => return Err(e),
                Err(Attempt::Retry(msg)) => {
                    tracing::warn!(attempt, url = %self.url, error = %msg, "generation attempt failed");
                    last = msg;
                    if attempt < self.max_attempts {
                        tokio::time::sleep(self.backoff * 2u32.pow(attempt - 1)).await;
                    }
                }
            }
        }
        Err(PolicyError::Transport {
            attempts: self.max_attempts,
            message: last,
        })
    }

    fn label(&self) -> String {
        format!("{}@{}", self.model, self.url)
    }
}
