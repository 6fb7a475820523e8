//! Arithmetic expression trees: a small recursive-descent parser for plain
//! and LaTeX-flavoured math, evaluation, and printing.
//!
//! Grammar (whitespace-insensitive):
//!
//! ```text
//! expr   := term (('+' | '-') term)*
//! term   := factor (('*' | '/' | <implicit>) factor)*
//! factor := ('-' | '+') factor | atom ('^' factor)?
//! atom   := number | variable | '\pi' | '(' expr ')' | '{' expr '}'
//!         | '\frac' '{' expr '}' '{' expr '}'
//! ```
//!
//! Implicit multiplication applies when a factor is directly followed by a
//! number, variable, group or `\frac`. Numbers may carry comma or space
//! thousands separators (`1,391,000`).

use std::collections::{BTreeSet, HashMap};
use std::fmt;

use num_rational::Ratio;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("parse error at byte {pos}: {message}")]
pub struct ParseError {
    pub pos: usize,
    pub message: String,
}

impl ParseError {
    fn new(pos: usize, message: impl Into<String>) -> Self {
        Self {
            pos,
            message: message.into(),
        }
    }
}

/// A numeric literal, exact whenever the decimal fits in `i128`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Number {
    Exact(Ratio<i128>),
    Approx(f64),
}

impl Number {
    pub fn to_f64(self) -> f64 {
        match self {
            Number::Exact(r) => *r.numer() as f64 / *r.denom() as f64,
            Number::Approx(v) => v,
        }
    }

    pub fn integer(n: i128) -> Self {
        Number::Exact(Ratio::from_integer(n))
    }

    /// The value as an integer, if it is exactly integral.
    pub fn as_integer(self) -> Option<i128> {
        match self {
            Number::Exact(r) if r.is_integer() => Some(r.to_integer()),
            _ => None,
        }
    }
}

impl fmt::Display for Number {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Number::Exact(r) if r.is_integer() => write!(f, "{}", r.numer()),
            Number::Exact(r) => {
                // Parsed decimals always have a power-of-ten denominator.
                let mut d = *r.denom();
                let mut places = 0usize;
                while d % 10 == 0 {
                    d /= 10;
                    places += 1;
                }
                if d != 1 {
                    return write!(f, "{}", self.to_f64());
                }
                let n = *r.numer();
                let scale = 10i128.pow(places as u32);
                let sign = if n < 0 { "-" } else { "" };
                let n = n.abs();
                write!(
                    f,
                    "{sign}{}.{:0width$}",
                    n / scale,
                    n % scale,
                    width = places
                )
            }
            Number::Approx(v) => write!(f, "{v}"),
        }
    }
}

/// Expression tree.
#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Num(Number),
    Var(String),
    Pi,
    Neg(Box<Expr>),
    Add(Box<Expr>, Box<Expr>),
    Sub(Box<Expr>, Box<Expr>),
    Mul(Box<Expr>, Box<Expr>),
    Div(Box<Expr>, Box<Expr>),
    Pow(Box<Expr>, Box<Expr>),
}

impl Expr {
    pub fn num(n: i128) -> Self {
        Expr::Num(Number::integer(n))
    }

    pub fn var(name: &str) -> Self {
        Expr::Var(name.to_owned())
    }

    pub fn variables(&self) -> BTreeSet<String> {
        let mut out = BTreeSet::new();
        self.collect_vars(&mut out);
        out
    }

    fn collect_vars(&self, out: &mut BTreeSet<String>) {
        match self {
            Expr::Var(v) => {
                out.insert(v.clone());
            }
            Expr::Num(_) | Expr::Pi => {}
            Expr::Neg(a) => a.collect_vars(out),
            Expr::Add(a, b)
            | Expr::Sub(a, b)
            | Expr::Mul(a, b)
            | Expr::Div(a, b)
            | Expr::Pow(a, b) => {
                a.collect_vars(out);
                b.collect_vars(out);
            }
        }
    }

    /// Evaluates with `f64` arithmetic. Division by zero, unbound variables
    /// and undefined powers yield a non-finite result.
    pub fn eval(&self, env: &HashMap<String, f64>) -> f64 {
        match self {
            Expr::Num(n) => n.to_f64(),
            Expr::Var(v) => env.get(v).copied().unwrap_or(f64::NAN),
            Expr::Pi => std::f64::consts::PI,
            Expr::Neg(a) => -a.eval(env),
            Expr::Add(a, b) => a.eval(env) + b.eval(env),
            Expr::Sub(a, b) => a.eval(env) - b.eval(env),
            Expr::Mul(a, b) => a.eval(env) * b.eval(env),
            Expr::Div(a, b) => {
                let d = b.eval(env);
                if d == 0.0 {
                    f64::NAN
                } else {
                    a.eval(env) / d
                }
            }
            Expr::Pow(a, b) => {
                let base = a.eval(env);
                let exp = b.eval(env);
                if base == 0.0 && exp < 0.0 {
                    f64::NAN
                } else {
                    base.powf(exp)
                }
            }
        }
    }

    pub fn node_count(&self) -> usize {
        match self {
            Expr::Num(_) | Expr::Var(_) | Expr::Pi => 1,
            Expr::Neg(a) => 1 + a.node_count(),
            Expr::Add(a, b)
            | Expr::Sub(a, b)
            | Expr::Mul(a, b)
            | Expr::Div(a, b)
            | Expr::Pow(a, b) => 1 + a.node_count() + b.node_count(),
        }
    }

    fn precedence(&self) -> u8 {
        match self {
            Expr::Add(..) | Expr::Sub(..) => 1,
            Expr::Mul(..) | Expr::Div(..) => 2,
            Expr::Neg(..) => 3,
            Expr::Pow(..) => 4,
            Expr::Num(_) | Expr::Var(_) | Expr::Pi => 5,
        }
    }
}

fn write_child(f: &mut fmt::Formatter<'_>, e: &Expr, parens: bool) -> fmt::Result {
    if parens {
        write!(f, "({e})")
    } else {
        write!(f, "{e}")
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let p = self.precedence();
        match self {
            Expr::Num(n) => write!(f, "{n}"),
            Expr::Var(v) => write!(f, "{v}"),
            Expr::Pi => write!(f, "\\pi"),
            Expr::Neg(a) => {
                write!(f, "-")?;
                write_child(f, a, a.precedence() < p)
            }
            Expr::Add(a, b) | Expr::Sub(a, b) | Expr::Mul(a, b) | Expr::Div(a, b) => {
                let op = match self {
                    Expr::Add(..) => " + ",
                    Expr::Sub(..) => " - ",
                    Expr::Mul(..) => " * ",
                    _ => " / ",
                };
                write_child(f, a, a.precedence() < p)?;
                write!(f, "{op}")?;
                write_child(f, b, b.precedence() <= p)
            }
            Expr::Pow(a, b) => {
                write_child(f, a, a.precedence() <= p)?;
                write!(f, "^")?;
                write_child(f, b, b.precedence() < 3)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Num(Number),
    Ident(String),
    Pi,
    Frac,
    Plus,
    Minus,
    Star,
    Slash,
    Caret,
    LParen,
    RParen,
    LBrace,
    RBrace,
}

const GREEK: &[&str] = &[
    "alpha",
    "beta",
    "gamma",
    "delta",
    "epsilon",
    "varepsilon",
    "zeta",
    "eta",
    "theta",
    "vartheta",
    "iota",
    "kappa",
    "lambda",
    "mu",
    "nu",
    "xi",
    "rho",
    "sigma",
    "tau",
    "upsilon",
    "phi",
    "varphi",
    "chi",
    "psi",
    "omega",
    "Gamma",
    "Delta",
    "Theta",
    "Lambda",
    "Xi",
    "Sigma",
    "Phi",
    "Psi",
    "Omega",
];

struct Lexer<'a> {
    src: &'a str,
    pos: usize,
}

impl<'a> Lexer<'a> {
    fn peek_char(&self) -> Option<char> {
        self.src[self.pos..].chars().next()
    }

    fn rest(&self) -> &'a str {
        &self.src[self.pos..]
    }

    /// Length of the run of ASCII digits starting at byte `at`.
    fn digits_at(&self, at: usize) -> usize {
        self.src[at..]
            .bytes()
            .take_while(u8::is_ascii_digit)
            .count()
    }

    /// If a thousands group (`sep` + exactly three digits, not followed by
    /// another digit) starts at `at`, returns the byte length of the group.
    fn group_at(&self, at: usize, sep: &str) -> Option<usize> {
        if !self.src[at..].starts_with(sep) {
            return None;
        }
        let d = at + sep.len();
        (self.digits_at(d) == 3).then_some(sep.len() + 3)
    }

    fn number(&mut self) -> Result<Tok, ParseError> {
        let start = self.pos;
        let mut digits = String::new();
        let lead = self.digits_at(self.pos);
        digits.push_str(&self.src[self.pos..self.pos + lead]);
        self.pos += lead;
        if (1..=3).contains(&lead) {
            let sep = [",", "{,}", "\\,", " "]
                .into_iter()
                .find(|s| self.group_at(self.pos, s).is_some());
            if let Some(sep) = sep {
                while let Some(len) = self.group_at(self.pos, sep) {
                    digits.push_str(&self.src[self.pos + sep.len()..self.pos + len]);
                    self.pos += len;
                }
            }
        }
        let mut frac = String::new();
        if self.rest().starts_with('.') && self.digits_at(self.pos + 1) > 0 {
            let n = self.digits_at(self.pos + 1);
            frac.push_str(&self.src[self.pos + 1..self.pos + 1 + n]);
            self.pos += 1 + n;
        }
        if digits.is_empty() && frac.is_empty() {
            return Err(ParseError::new(start, "expected digits"));
        }
        let all = format!("{digits}{frac}");
        let exact = all.parse::<i128>().ok().and_then(|n| {
            10i128
                .checked_pow(frac.len() as u32)
                .map(|d| Ratio::new(n, d))
        });
        Ok(match exact {
            Some(r) => Tok::Num(Number::Exact(r)),
            None => {
                let text = if frac.is_empty() {
                    digits
                } else {
                    format!("{digits}.{frac}")
                };
                let v: f64 = text
                    .parse()
                    .map_err(|_| ParseError::new(start, "bad number"))?;
                Tok::Num(Number::Approx(v))
            }
        })
    }

    fn subscript(&mut self) -> Result<String, ParseError> {
        // Called after '_' has been consumed.
        if self.rest().starts_with('{') {
            let body: String = self.rest()[1..]
                .chars()
                .take_while(|c| c.is_ascii_alphanumeric())
                .collect();
            let end = self.pos + 1 + body.len();
            if body.is_empty() || !self.src[end..].starts_with('}') {
                return Err(ParseError::new(self.pos, "bad subscript"));
            }
            self.pos = end + 1;
            Ok(body)
        } else {
            let c = self
                .peek_char()
                .filter(char::is_ascii_alphanumeric)
                .ok_or_else(|| ParseError::new(self.pos, "bad subscript"))?;
            self.pos += c.len_utf8();
            Ok(c.to_string())
        }
    }

    fn tokens(mut self) -> Result<Vec<(usize, Tok)>, ParseError> {
        let mut out = Vec::new();
        while let Some(c) = self.peek_char() {
            let at = self.pos;
            if c.is_whitespace() {
                self.pos += c.len_utf8();
                continue;
            }
            if c.is_ascii_digit() || (c == '.' && self.digits_at(at + 1) > 0) {
                let t = self.number()?;
                out.push((at, t));
                continue;
            }
            if c.is_ascii_alphabetic() {
                self.pos += 1;
                let mut name = c.to_string();
                if self.rest().starts_with('_') {
                    self.pos += 1;
                    name.push('_');
                    name.push_str(&self.subscript()?);
                }
                out.push((at, Tok::Ident(name)));
                continue;
            }
            if c == '\\' {
                let word: String = self.rest()[1..]
                    .chars()
                    .take_while(char::is_ascii_alphabetic)
                    .collect();
                if word.is_empty() {
                    // Spacing commands: "\," "\;" "\!" "\ ".
                    match self.rest()[1..].chars().next() {
                        Some(',' | ';' | '!' | ' ' | ':') => {
                            self.pos += 2;
                            continue;
                        }
                        _ => return Err(ParseError::new(at, "unknown command")),
                    }
                }
                self.pos += 1 + word.len();
                let tok = match word.as_str() {
                    "frac" | "dfrac" | "tfrac" => Tok::Frac,
                    "cdot" | "times" => Tok::Star,
                    "div" => Tok::Slash,
                    "pi" => Tok::Pi,
                    "left" | "right" => continue,
                    w if GREEK.contains(&w) => {
                        let mut name = w.to_owned();
                        if self.rest().starts_with('_') {
                            self.pos += 1;
                            name.push('_');
                            name.push_str(&self.subscript()?);
                        }
                        Tok::Ident(name)
                    }
                    w => return Err(ParseError::new(at, format!("unsupported command \\{w}"))),
                };
                out.push((at, tok));
                continue;
            }
            let tok = match c {
                '+' => Tok::Plus,
                '-' | '\u{2212}' => Tok::Minus,
                '*' | '\u{00d7}' | '\u{00b7}' => Tok::Star,
                '/' | '\u{00f7}' => Tok::Slash,
                '^' => Tok::Caret,
                '(' | '[' => Tok::LParen,
                ')' | ']' => Tok::RParen,
                '{' => Tok::LBrace,
                '}' => Tok::RBrace,
                'π' => Tok::Pi,
                other => return Err(ParseError::new(at, format!("unexpected `{other}`"))),
            };
            self.pos += c.len_utf8();
            out.push((at, tok));
        }
        Ok(out)
    }
}

struct Parser {
    toks: Vec<(usize, Tok)>,
    i: usize,
    end: usize,
}

impl Parser {
    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.i).map(|(_, t)| t)
    }

    fn pos(&self) -> usize {
        self.toks.get(self.i).map_or(self.end, |(p, _)| *p)
    }

    fn eat(&mut self, t: &Tok) -> bool {
        if self.peek() == Some(t) {
            self.i += 1;
            true
        } else {
            false
        }
    }

    fn expect(&mut self, t: &Tok, what: &str) -> Result<(), ParseError> {
        if self.eat(t) {
            Ok(())
        } else {
            Err(ParseError::new(self.pos(), format!("expected {what}")))
        }
    }

    fn expr(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.term()?;
        loop {
            if self.eat(&Tok::Plus) {
                lhs = Expr::Add(Box::new(lhs), Box::new(self.term()?));
            } else if self.eat(&Tok::Minus) {
                lhs = Expr::Sub(Box::new(lhs), Box::new(self.term()?));
            } else {
                return Ok(lhs);
            }
        }
    }

    fn term(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.factor()?;
        loop {
            if self.eat(&Tok::Star) {
                lhs = Expr::Mul(Box::new(lhs), Box::new(self.factor()?));
            } else if self.eat(&Tok::Slash) {
                lhs = Expr::Div(Box::new(lhs), Box::new(self.factor()?));
            } else if matches!(
                self.peek(),
                Some(Tok::Num(_) | Tok::Ident(_) | Tok::Pi | Tok::Frac | Tok::LParen | Tok::LBrace)
            ) {
                lhs = Expr::Mul(Box::new(lhs), Box::new(self.factor()?));
            } else {
                return Ok(lhs);
            }
        }
    }

    fn factor(&mut self) -> Result<Expr, ParseError> {
        if self.eat(&Tok::Minus) {
            return Ok(Expr::Neg(Box::new(self.factor()?)));
        }
        if self.eat(&Tok::Plus) {
            return self.factor();
        }
        let base = self.atom()?;
        if self.eat(&Tok::Caret) {
            Ok(Expr::Pow(Box::new(base), Box::new(self.factor()?)))
        } else {
            Ok(base)
        }
    }

    fn atom(&mut self) -> Result<Expr, ParseError> {
        let pos = self.pos();
        let Some(tok) = self.peek().cloned() else {
            return Err(ParseError::new(pos, "unexpected end of input"));
        };
        self.i += 1;
        match tok {
            Tok::Num(n) => Ok(Expr::Num(n)),
            Tok::Ident(v) => Ok(Expr::Var(v)),
            Tok::Pi => Ok(Expr::Pi),
            Tok::LParen => {
                let e = self.expr()?;
                self.expect(&Tok::RParen, "`)`")?;
                Ok(e)
            }
            Tok::LBrace => {
                let e = self.expr()?;
                self.expect(&Tok::RBrace, "`}`")?;
                Ok(e)
            }
            Tok::Frac => {
                self.expect(&Tok::LBrace, "`{` after \\frac")?;
                let num = self.expr()?;
                self.expect(&Tok::RBrace, "`}`")?;
                self.expect(&Tok::LBrace, "`{` for denominator")?;
                let den = self.expr()?;
                self.expect(&Tok::RBrace, "`}`")?;
                Ok(Expr::Div(Box::new(num), Box::new(den)))
            }
            other => Err(ParseError::new(pos, format!("unexpected token {other:?}"))),
        }
    }
}

/// Parses `src` into an expression tree.
pub fn parse_expression(src: &str) -> Result<Expr, ParseError> {
    let toks = Lexer { src, pos: 0 }.tokens()?;
    if toks.is_empty() {
        return Err(ParseError::new(0, "empty expression"));
    }
    let mut p = Parser {
        toks,
        i: 0,
        end: src.len(),
    };
    let e = p.expr()?;
    if p.i != p.toks.len() {
        return Err(ParseError::new(p.pos(), "trailing input"));
    }
    Ok(e)
}

/// Parses a bare numeric literal with optional sign and thousands
/// separators, e.g. `-1,391,000` or `42.0`.
pub fn parse_number(src: &str) -> Option<Number> {
    let s = src.trim();
    let (neg, body) = match s.chars().next()? {
        '-' | '\u{2212}' => (true, &s[s.chars().next()?.len_utf8()..]),
        '+' => (false, &s[1..]),
        _ => (false, s),
    };
    let body = body.trim_start();
    if !body.starts_with(|c: char| c.is_ascii_digit() || c == '.') {
        return None;
    }
    let toks = Lexer { src: body, pos: 0 }.tokens().ok()?;
    match toks.as_slice() {
        [(_, Tok::Num(n))] => Some(match (*n, neg) {
            (n, false) => n,
            (Number::Exact(r), true) => Number::Exact(-r),
            (Number::Approx(v), true) => Number::Approx(-v),
        }),
        _ => None,
    }
}
