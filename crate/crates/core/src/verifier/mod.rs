//! Final-answer extraction and typed equivalence checking.
//!
//! Reasoner completions end with `\boxed{...}`; the last balanced box is the
//! answer. Equivalence is decided per answer type: exact for integers,
//! relative tolerance for floats, randomized evaluation for expressions,
//! normalized comparison for strings, booleans and option letters.

pub mod expr;

use std::collections::HashMap;

use rand::Rng;
use serde::Serialize;

pub use expr::{parse_expression, parse_number, Expr, Number, ParseError};

use crate::seed;
use crate::taskgen::{AnswerType, Gold, McqLetter};

/// The payload of the last balanced `\boxed{...}` in a completion.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ExtractedAnswer {
    pub raw: String,
    /// Byte range of `raw` within the completion.
    pub span: (usize, usize),
}

const BOXED: &str = "\\boxed";

/// Returns the last balanced `\boxed{...}` payload, or `None`.
pub fn extract_boxed(completion: &str) -> Option<ExtractedAnswer> {
    let mut best = None;
    let mut from = 0;
    while let Some(off) = completion[from..].find(BOXED) {
        let start = from + off;
        from = start + BOXED.len();
        let after = &completion[from..];
        let ws = after.len() - after.trim_start().len();
        let open = from + ws;
        if !completion[open..].starts_with('{') {
            continue;
        }
        let mut depth = 0usize;
        let mut close = None;
        for (i, b) in completion.as_bytes()[open..].iter().enumerate() {
            match b {
                b'{' => depth += 1,
                b'}' => {
                    depth -= 1;
                    if depth == 0 {
                        close = Some(open + i);
                        break;
                    }
                }
                _ => {}
            }
        }
        if let Some(close) = close {
            best = Some(ExtractedAnswer {
                raw: completion[open + 1..close].to_owned(),
                span: (open + 1, close),
            });
        }
    }
    best
}

/// Result of comparing two expressions by randomized evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExprVerdict {
    Equivalent,
    NotEquivalent,
    /// Some draw hit a singularity on every retry.
    Indeterminate,
}

pub const EXPR_SAMPLE_POINTS: usize = 16;
pub const EXPR_SINGULAR_RETRIES: usize = 8;
const EXPR_SEED: u64 = 0x5eed_e9a1_u64;

/// Relative tolerance used for expression comparison.
pub fn close(a: f64, b: f64, rel: f64) -> bool {
    (a - b).abs() <= rel * 1f64.max(a.abs()).max(b.abs())
}

/// Compares two expressions: both must mention the same variables and agree
/// at 16 seeded random points drawn from `[-3, -0.1] ∪ [0.1, 3]`.
pub fn expr_compare(a: &Expr, b: &Expr) -> ExprVerdict {
    let vars = a.variables();
    if vars != b.variables() {
        return ExprVerdict::NotEquivalent;
    }
    let mut rng = seed::rng(EXPR_SEED, &[]);
    let mut env: HashMap<String, f64> = HashMap::with_capacity(vars.len());
    for _ in 0..EXPR_SAMPLE_POINTS {
        let mut resolved = false;
        for _ in 0..=EXPR_SINGULAR_RETRIES {
            for v in &vars {
                let magnitude = rng.random_range(0.1..=3.0);
                let x = if rng.random_bool(0.5) {
                    magnitude
                } else {
                    -magnitude
                };
                env.insert(v.clone(), x);
            }
            let (x, y) = (a.eval(&env), b.eval(&env));
            if !x.is_finite() || !y.is_finite() {
                continue;
            }
            if !close(x, y, 1e-9) {
                return ExprVerdict::NotEquivalent;
            }
            resolved = true;
            break;
        }
        if !resolved {
            return ExprVerdict::Indeterminate;
        }
    }
    ExprVerdict::Equivalent
}

pub fn expr_equivalent(a: &Expr, b: &Expr) -> bool {
    expr_compare(a, b) == ExprVerdict::Equivalent
}

fn strip_math_delims(s: &str) -> &str {
    let t = s.trim();
    let t = t
        .strip_prefix('$')
        .and_then(|x| x.strip_suffix('$'))
        .unwrap_or(t);
    t.trim()
}

/// Lower-cases, collapses whitespace, and strips surrounding quotes and
/// trailing punctuation.
pub fn normalize_string(s: &str) -> String {
    let collapsed = s
        .split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
        .to_lowercase();
    let mut t = collapsed.as_str();
    loop {
        let before = t;
        t = t.trim_end_matches(['.', ',', ';', ':', '!', '?']).trim();
        for q in ['"', '\'', '`'] {
            if t.len() >= 2 && t.starts_with(q) && t.ends_with(q) {
                t = t[1..t.len() - 1].trim();
            }
        }
        if t == before {
            break;
        }
    }
    t.to_owned()
}

pub fn parse_boolean(s: &str) -> Option<bool> {
    match normalize_string(strip_math_delims(s)).as_str() {
        "true" => Some(true),
        "false" => Some(false),
        _ => None,
    }
}

/// Integer value of a numeric literal with a zero fractional part.
pub fn parse_integer(s: &str) -> Option<i128> {
    let t = strip_math_delims(s).trim_end_matches('.');
    parse_number(t)?.as_integer()
}

/// A real value: a numeric literal or a variable-free expression.
pub fn parse_real(s: &str) -> Option<f64> {
    let t = strip_math_delims(s).trim_end_matches('.');
    if let Some(n) = parse_number(t) {
        return Some(n.to_f64());
    }
    let e = parse_expression(t).ok()?;
    if !e.variables().is_empty() {
        return None;
    }
    let v = e.eval(&HashMap::new());
    v.is_finite().then_some(v)
}

/// The option letter a candidate commits to: a leading `A`–`D`, optionally
/// parenthesised, followed by nothing, `)`, `.`, `:` or whitespace.
pub fn parse_mcq_letter(s: &str) -> Option<McqLetter> {
    let t = strip_math_delims(s);
    let t = t.strip_prefix('(').unwrap_or(t);
    let mut chars = t.chars();
    let letter = McqLetter::from_char(chars.next()?)?;
    match chars.next() {
        None => Some(letter),
        Some(c) if c == ')' || c == '.' || c == ':' || c.is_whitespace() => Some(letter),
        _ => None,
    }
}

pub fn floats_close(gold: f64, candidate: f64) -> bool {
    let scale = gold.abs().max(candidate.abs());
    (gold - candidate).abs() <= f64::max(1e-9, 1e-6 * scale)
}

/// Decides whether `candidate` (an extracted answer string) matches `gold`.
/// Unparseable candidates are simply not equivalent.
pub fn equivalent(gold: &Gold, candidate: &str) -> bool {
    match gold {
        Gold::Mcq(letter) => parse_mcq_letter(candidate) == Some(*letter),
        Gold::Integer(g) => parse_integer(candidate) == Some(*g),
        Gold::Float(g) => parse_real(candidate).is_some_and(|c| floats_close(*g, c)),
        Gold::Expression { ast, .. } => {
            parse_expression(strip_math_delims(candidate)).is_ok_and(|c| expr_equivalent(ast, &c))
        }
        Gold::String(g) => {
            let c = normalize_string(strip_math_delims(candidate));
            !c.is_empty() && normalize_string(g) == c
        }
        Gold::Boolean(g) => parse_boolean(candidate) == Some(*g),
    }
}

/// Equivalence with an explicit answer type; a type mismatch is never
/// equivalent.
pub fn equivalent_typed(gold: &Gold, candidate: &str, answer_type: AnswerType) -> bool {
    gold.answer_type() == answer_type && equivalent(gold, candidate)
}

/// Labels a full completion: 1 when its last boxed answer matches the gold,
/// 0 otherwise (including when nothing is boxed).
pub fn label_completion(gold: &Gold, completion: &str) -> u8 {
    match extract_boxed(completion) {
        Some(ans) if equivalent(gold, &ans.raw) => 1,
        _ => 0,
    }
}
