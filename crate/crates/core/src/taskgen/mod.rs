//! Challenger side of task creation: prompt construction, format-selection
//! parsing, and validation of generated question/answer objects.
//!
//! Everything here is a pure function of its inputs. A generation either
//! yields a [`Task`] or an [`InvalidTask`] carrying exactly one
//! [`InvalidReason`].

pub mod template;

use std::fmt;
use std::str::FromStr;

use regex::Regex;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use thiserror::Error;

use crate::corpus::Document;
use crate::verifier::{self, Expr};
pub use template::{render, TemplateError, TemplateFamily, TemplateSet};

/// Answer formats a task may use.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum AnswerType {
    #[serde(rename = "MCQ")]
    Mcq,
    Integer,
    Float,
    Expression,
    String,
    Boolean,
}

impl AnswerType {
    pub const ALL: [AnswerType; 6] = [
        AnswerType::Mcq,
        AnswerType::Integer,
        AnswerType::Float,
        AnswerType::Expression,
        AnswerType::String,
        AnswerType::Boolean,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            AnswerType::Mcq => "MCQ",
            AnswerType::Integer => "Integer",
            AnswerType::Float => "Float",
            AnswerType::Expression => "Expression",
            AnswerType::String => "String",
            AnswerType::Boolean => "Boolean",
        }
    }

    pub fn is_free_form(self) -> bool {
        self != AnswerType::Mcq
    }
}

impl fmt::Display for AnswerType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for AnswerType {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        AnswerType::ALL
            .into_iter()
            .find(|t| t.as_str().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| format!("unknown answer type `{s}`"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum McqLetter {
    A,
    B,
    C,
    D,
}

impl McqLetter {
    pub const ALL: [McqLetter; 4] = [McqLetter::A, McqLetter::B, McqLetter::C, McqLetter::D];

    pub fn from_char(c: char) -> Option<Self> {
        match c {
            'A' => Some(Self::A),
            'B' => Some(Self::B),
            'C' => Some(Self::C),
            'D' => Some(Self::D),
            _ => None,
        }
    }

    pub fn as_char(self) -> char {
        match self {
            Self::A => 'A',
            Self::B => 'B',
            Self::C => 'C',
            Self::D => 'D',
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("gold answer `{value}` is not a valid {answer_type}")]
pub struct GoldError {
    pub answer_type: AnswerType,
    pub value: String,
}

/// A typed gold answer.
#[derive(Debug, Clone, PartialEq)]
pub enum Gold {
    Mcq(McqLetter),
    Integer(i128),
    Float(f64),
    Expression { source: String, ast: Expr },
    String(String),
    Boolean(bool),
}

impl Gold {
    pub fn parse(answer_type: AnswerType, raw: &str) -> Result<Gold, GoldError> {
        let err = || GoldError {
            answer_type,
            value: raw.to_owned(),
        };
        match answer_type {
            AnswerType::Mcq => verifier::parse_mcq_letter(raw).map(Gold::Mcq),
            AnswerType::Integer => verifier::parse_integer(raw).map(Gold::Integer),
            AnswerType::Float => {
                verifier::parse_number(raw.trim()).map(|n| Gold::Float(n.to_f64()))
            }
            AnswerType::Expression => {
                verifier::parse_expression(raw.trim())
                    .ok()
                    .map(|ast| Gold::Expression {
                        source: raw.trim().to_owned(),
                        ast,
                    })
            }
            AnswerType::String => {
                let t = raw.trim();
                (!verifier::normalize_string(t).is_empty()).then(|| Gold::String(t.to_owned()))
            }
            AnswerType::Boolean => verifier::parse_boolean(raw).map(Gold::Boolean),
        }
        .ok_or_else(err)
    }

    pub fn answer_type(&self) -> AnswerType {
        match self {
            Gold::Mcq(_) => AnswerType::Mcq,
            Gold::Integer(_) => AnswerType::Integer,
            Gold::Float(_) => AnswerType::Float,
            Gold::Expression { .. } => AnswerType::Expression,
            Gold::String(_) => AnswerType::String,
            Gold::Boolean(_) => AnswerType::Boolean,
        }
    }
}

impl fmt::Display for Gold {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Gold::Mcq(l) => write!(f, "{}", l.as_char()),
            Gold::Integer(n) => write!(f, "{n}"),
            Gold::Float(x) => write!(f, "{x}"),
            Gold::Expression { source, .. } => f.write_str(source),
            Gold::String(s) => f.write_str(s),
            Gold::Boolean(b) => write!(f, "{b}"),
        }
    }
}

/// A validated challenger task.
#[derive(Debug, Clone, PartialEq)]
pub struct Task {
    pub question: String,
    pub gold: Gold,
    pub answer_type: AnswerType,
    pub source_doc: String,
    pub raw_generation: String,
}

impl Task {
    /// Renders the task back into the object shape the challenger prompts
    /// ask for.
    pub fn to_generation(&self) -> String {
        let v = match &self.gold {
            Gold::Mcq(letter) => serde_json::json!({
                "multiple_choice_question": self.question,
                "multiple_choice_correct": letter.as_char().to_string(),
            }),
            gold => serde_json::json!({
                "question": self.question,
                "answer": gold.to_string(),
                "answer_type": self.answer_type.as_str(),
            }),
        };
        v.to_string()
    }
}

/// The challenger's choice between a multiple-choice and a free-form task.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FormatDecision {
    pub suitable_for_mcq: bool,
    pub suitable_for_free_form: bool,
    pub best_answer_type: Option<AnswerType>,
    pub reason: String,
}

impl FormatDecision {
    pub fn mcq() -> Self {
        Self {
            suitable_for_mcq: true,
            suitable_for_free_form: false,
            best_answer_type: None,
            reason: String::new(),
        }
    }

    pub fn free_form(t: AnswerType) -> Self {
        assert!(
            t.is_free_form(),
            "free-form decision needs a free-form type"
        );
        Self {
            suitable_for_mcq: false,
            suitable_for_free_form: true,
            best_answer_type: Some(t),
            reason: String::new(),
        }
    }

    /// The answer type this decision asks the challenger for.
    pub fn answer_type(&self) -> AnswerType {
        if self.suitable_for_mcq {
            AnswerType::Mcq
        } else {
            self.best_answer_type.unwrap_or(AnswerType::String)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum FormatError {
    #[error("no JSON object in generation")]
    InvalidGeneration,
    #[error("schema violation: {0}")]
    SchemaViolation(String),
}

/// Why a challenger generation did not yield a task.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum InvalidReason {
    NoObject,
    SchemaViolation,
    EmptyBailout,
    TypeMismatch,
    UnparseableGold,
}

impl InvalidReason {
    pub const ALL: [InvalidReason; 5] = [
        InvalidReason::NoObject,
        InvalidReason::SchemaViolation,
        InvalidReason::EmptyBailout,
        InvalidReason::TypeMismatch,
        InvalidReason::UnparseableGold,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            InvalidReason::NoObject => "NoObject",
            InvalidReason::SchemaViolation => "SchemaViolation",
            InvalidReason::EmptyBailout => "EmptyBailout",
            InvalidReason::TypeMismatch => "TypeMismatch",
            InvalidReason::UnparseableGold => "UnparseableGold",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("{reason:?}: {detail}")]
pub struct InvalidTask {
    pub reason: InvalidReason,
    pub detail: String,
}

impl InvalidTask {
    fn new(reason: InvalidReason, detail: impl Into<String>) -> Self {
        Self {
            reason,
            detail: detail.into(),
        }
    }
}

/// Finds the first balanced `{...}` span that parses as a JSON object.
///
/// Braces inside JSON string literals are ignored while scanning, so code
/// fences, prose and LaTeX around the object are tolerated.
pub fn first_json_object(text: &str) -> Option<Map<String, Value>> {
    let bytes = text.as_bytes();
    let mut start = 0;
    while let Some(off) = text[start..].find('{') {
        let open = start + off;
        let mut depth = 0usize;
        let mut in_str = false;
        let mut escaped = false;
        let mut end = None;
        for (i, &b) in bytes[open..].iter().enumerate() {
            if in_str {
                match b {
                    _ if escaped => escaped = false,
                    b'\\' => escaped = true,
                    b'"' => in_str = false,
                    _ => {}
                }
                continue;
            }
            match b {
                b'"' => in_str = true,
                b'{' => depth += 1,
                b'}' => {
                    depth -= 1;
                    if depth == 0 {
                        end = Some(open + i);
                        break;
                    }
                }
                _ => {}
            }
        }
        if let Some(end) = end {
            if let Ok(Value::Object(map)) = serde_json::from_str(&text[open..=end]) {
                return Some(map);
            }
        }
        start = open + 1;
    }
    None
}

pub fn build_format_prompt(templates: &TemplateSet, doc: &Document) -> String {
    render(&templates.format_selection, &[("document", &doc.text)])
        .expect("format-selection template placeholders")
}

fn schema(msg: impl Into<String>) -> FormatError {
    FormatError::SchemaViolation(msg.into())
}

/// Parses the challenger's format-selection reply.
pub fn parse_format_decision(generation: &str) -> Result<FormatDecision, FormatError> {
    let obj = first_json_object(generation).ok_or(FormatError::InvalidGeneration)?;
    let flag = |k: &str| match obj.get(k) {
        Some(Value::Bool(b)) => Ok(*b),
        Some(other) => Err(schema(format!("`{k}` must be a boolean, got {other}"))),
        None => Err(schema(format!("missing `{k}`"))),
    };
    let mcq = flag("suitable_for_mcq")?;
    let free = flag("suitable_for_free_form")?;
    if mcq == free {
        return Err(schema("exactly one of the suitability flags must be true"));
    }
    let reason = match obj.get("reason") {
        Some(Value::String(s)) => s.clone(),
        _ => String::new(),
    };
    if mcq {
        return Ok(FormatDecision {
            reason,
            ..FormatDecision::mcq()
        });
    }
    let best = match obj.get("best_answer_type") {
        Some(Value::String(s)) => s
            .parse::<AnswerType>()
            .ok()
            .filter(|t| t.is_free_form())
            .ok_or_else(|| schema(format!("unsupported answer type `{s}`")))?,
        _ => return Err(schema("free-form decision without best_answer_type")),
    };
    Ok(FormatDecision {
        reason,
        ..FormatDecision::free_form(best)
    })
}

pub fn build_task_prompt(
    templates: &TemplateSet,
    doc: &Document,
    decision: &FormatDecision,
) -> String {
    let rendered = if decision.suitable_for_mcq {
        render(&templates.mcq, &[("text", &doc.text)])
    } else {
        let t = decision.answer_type();
        render(
            &templates.free_form,
            &[("text", &doc.text), ("answer_type", t.as_str())],
        )
    };
    rendered.expect("task template placeholders")
}

fn option_line_re() -> &'static Regex {
    static RE: std::sync::OnceLock<Regex> = std::sync::OnceLock::new();
    RE.get_or_init(|| Regex::new(r"(?m)^[ \t]*\(?([A-Z])[\)\.:][ \t]*\S").unwrap())
}

fn option_inline_re() -> &'static Regex {
    static RE: std::sync::OnceLock<Regex> = std::sync::OnceLock::new();
    RE.get_or_init(|| Regex::new(r"(?:^|\s)\(?([A-Z])\)[ \t]*\S").unwrap())
}

fn correct_line_re() -> &'static Regex {
    static RE: std::sync::OnceLock<Regex> = std::sync::OnceLock::new();
    RE.get_or_init(|| Regex::new(r"(?mi)^[ \t]*(correct|answer)\s*:.*$").unwrap())
}

/// Strips any answer-key line and checks for exactly four options `A`–`D`.
fn validate_mcq_text(text: &str) -> Result<String, InvalidTask> {
    let cleaned = correct_line_re().replace_all(text, "");
    let cleaned = cleaned.trim().to_owned();
    let mut letters: Vec<char> = option_line_re()
        .captures_iter(&cleaned)
        .filter_map(|c| c[1].chars().next())
        .collect();
    if letters.is_empty() {
        letters = option_inline_re()
            .captures_iter(&cleaned)
            .filter_map(|c| c[1].chars().next())
            .collect();
    }
    if letters != ['A', 'B', 'C', 'D'] {
        return Err(InvalidTask::new(
            InvalidReason::SchemaViolation,
            format!("expected options A-D, found {letters:?}"),
        ));
    }
    Ok(cleaned)
}

fn scalar_answer(v: &Value) -> Option<String> {
    match v {
        Value::String(s) => Some(s.clone()),
        Value::Number(n) => Some(n.to_string()),
        Value::Bool(b) => Some(b.to_string()),
        _ => None,
    }
}

/// Validates a challenger generation against the requested format.
pub fn parse_task(
    generation: &str,
    decision: &FormatDecision,
    doc_id: &str,
) -> Result<Task, InvalidTask> {
    use InvalidReason::*;
    let obj = first_json_object(generation)
        .ok_or_else(|| InvalidTask::new(NoObject, "no JSON object found"))?;
    let task = |question: String, gold: Gold| Task {
        answer_type: gold.answer_type(),
        question,
        gold,
        source_doc: doc_id.to_owned(),
        raw_generation: generation.to_owned(),
    };

    if decision.suitable_for_mcq {
        let question = match obj.get("multiple_choice_question") {
            Some(Value::String(s)) => s,
            Some(_) => {
                return Err(InvalidTask::new(
                    SchemaViolation,
                    "multiple_choice_question must be a string",
                ))
            }
            None => {
                return Err(InvalidTask::new(
                    SchemaViolation,
                    "missing multiple_choice_question",
                ))
            }
        };
        let correct = match obj.get("multiple_choice_correct") {
            Some(Value::String(s)) => s,
            Some(_) => {
                return Err(InvalidTask::new(
                    SchemaViolation,
                    "multiple_choice_correct must be a string",
                ))
            }
            None => {
                return Err(InvalidTask::new(
                    SchemaViolation,
                    "missing multiple_choice_correct",
                ))
            }
        };
        if question.trim().is_empty() || correct.trim().is_empty() {
            return Err(InvalidTask::new(EmptyBailout, "empty question or answer"));
        }
        let text = validate_mcq_text(question)?;
        let letter = correct
            .trim()
            .to_ascii_uppercase()
            .chars()
            .collect::<Vec<_>>();
        let letter = match letter.as_slice() {
            [c] => McqLetter::from_char(*c),
            _ => None,
        }
        .ok_or_else(|| {
            InvalidTask::new(UnparseableGold, format!("bad option letter `{correct}`"))
        })?;
        return Ok(task(text, Gold::Mcq(letter)));
    }

    let requested = decision.answer_type();
    let question = match obj.get("question") {
        Some(Value::String(s)) => s,
        Some(_) => {
            return Err(InvalidTask::new(
                SchemaViolation,
                "question must be a single string",
            ))
        }
        None => return Err(InvalidTask::new(SchemaViolation, "missing question")),
    };
    let answer = match obj.get("answer") {
        Some(v) => scalar_answer(v)
            .ok_or_else(|| InvalidTask::new(SchemaViolation, "answer must be a plain value"))?,
        None => return Err(InvalidTask::new(SchemaViolation, "missing answer")),
    };
    if question.trim().is_empty() || answer.trim().is_empty() {
        return Err(InvalidTask::new(EmptyBailout, "empty question or answer"));
    }
    let declared = match obj.get("answer_type") {
        Some(Value::String(s)) => s,
        _ => return Err(InvalidTask::new(SchemaViolation, "missing answer_type")),
    };
    if declared.trim() != requested.as_str() {
        return Err(InvalidTask::new(
            TypeMismatch,
            format!("requested {requested}, got `{declared}`"),
        ));
    }
    let gold = Gold::parse(requested, &answer)
        .map_err(|e| InvalidTask::new(UnparseableGold, e.to_string()))?;
    Ok(task(question.trim().to_owned(), gold))
}
