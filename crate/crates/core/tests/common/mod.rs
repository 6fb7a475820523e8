#![allow(dead_code)]

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use selfplay_core::corpus::ByteQuarterEstimator;
use selfplay_core::engine::{Engine, RunControl, RunSummary};
use selfplay_core::policy::Clients;
use selfplay_core::taskgen::{AnswerType, Gold};
use selfplay_core::verifier::{self, parse_expression};
use selfplay_core::{CorpusStore, EngineConfig};
use serde::Deserialize;

// ---------------------------------------------------------------------------
// Verifier fixture

#[derive(Debug, Deserialize)]
pub struct Case {
    pub id: usize,
    pub category: String,
    pub kind: String,
    pub completion: String,
    #[serde(rename = "type")]
    pub answer_type: Option<String>,
    pub gold: Option<String>,
    pub expected: Option<bool>,
    pub expected_raw: Option<String>,
}

pub fn fixture_cases() -> Vec<Case> {
    serde_json::from_str(include_str!("../fixtures/verifier_cases.json")).expect("fixture parses")
}

/// Runs every fixture case; returns the descriptions of failing ones.
pub fn fixture_failures(cases: &[Case]) -> Vec<String> {
    let mut failures = Vec::new();
    for c in cases {
        let ok = match c.kind.as_str() {
            "extract" => {
                let got = verifier::extract_boxed(&c.completion).map(|a| a.raw);
                got == c.expected_raw
            }
            "label" => {
                let t: AnswerType = c.answer_type.as_deref().unwrap().parse().unwrap();
                match Gold::parse(t, c.gold.as_deref().unwrap()) {
                    Ok(g) => {
                        (verifier::label_completion(&g, &c.completion) == 1) == c.expected.unwrap()
                    }
                    Err(_) => false,
                }
            }
            other => panic!("unknown case kind {other}"),
        };
        if !ok {
            failures.push(format!("#{} [{}] {:?}", c.id, c.category, c.completion));
        }
    }
    failures
}

// ---------------------------------------------------------------------------
// Generated rewrite pairs and a dense-grid oracle

/// Test-side expression tree, evaluated without the crate's parser.
#[derive(Debug, Clone)]
pub enum T {
    C(i64),
    V(usize),
    Neg(Box<T>),
    Add(Box<T>, Box<T>),
    Sub(Box<T>, Box<T>),
    Mul(Box<T>, Box<T>),
    Div(Box<T>, Box<T>),
    Pow(Box<T>, i32),
}

const VARS: [&str; 2] = ["x", "y"];

fn bx(t: T) -> Box<T> {
    Box::new(t)
}

impl T {
    pub fn eval(&self, env: [f64; 2]) -> f64 {
        match self {
            T::C(c) => *c as f64,
            T::V(i) => env[*i],
            T::Neg(a) => -a.eval(env),
            T::Add(a, b) => a.eval(env) + b.eval(env),
            T::Sub(a, b) => a.eval(env) - b.eval(env),
            T::Mul(a, b) => a.eval(env) * b.eval(env),
            T::Div(a, b) => {
                let d = b.eval(env);
                if d == 0.0 {
                    f64::NAN
                } else {
                    a.eval(env) / d
                }
            }
            T::Pow(a, n) => a.eval(env).powi(*n),
        }
    }

    pub fn vars(&self, out: &mut [bool; 2]) {
        match self {
            T::C(_) => {}
            T::V(i) => out[*i] = true,
            T::Neg(a) | T::Pow(a, _) => a.vars(out),
            T::Add(a, b) | T::Sub(a, b) | T::Mul(a, b) | T::Div(a, b) => {
                a.vars(out);
                b.vars(out);
            }
        }
    }

    /// Renders in one of several equivalent surface syntaxes.
    pub fn render(&self, rng: &mut ChaCha8Rng) -> String {
        match self {
            T::C(c) => c.to_string(),
            T::V(i) => VARS[*i].to_string(),
            T::Neg(a) => format!("-({})", a.render(rng)),
            T::Add(a, b) => format!("({} + {})", a.render(rng), b.render(rng)),
            T::Sub(a, b) => format!("({} - {})", a.render(rng), b.render(rng)),
            T::Mul(a, b) => {
                let (l, r) = (a.render(rng), b.render(rng));
                match rng.random_range(0..3) {
                    0 => format!("({l} * {r})"),
                    1 => format!("({l} \\cdot {r})"),
                    _ => format!("(({l})({r}))"),
                }
            }
            T::Div(a, b) => {
                let (l, r) = (a.render(rng), b.render(rng));
                if rng.random_bool(0.5) {
                    format!("\\frac{{{l}}}{{{r}}}")
                } else {
                    format!("({l} / {r})")
                }
            }
            T::Pow(a, n) => {
                let base = a.render(rng);
                if rng.random_bool(0.5) {
                    format!("({base})^{{{n}}}")
                } else {
                    format!("({base})^{n}")
                }
            }
        }
    }
}

pub fn random_tree(rng: &mut ChaCha8Rng, depth: u32) -> T {
    if depth == 0 || rng.random_bool(0.25) {
        return if rng.random_bool(0.6) {
            T::V(rng.random_range(0..2))
        } else {
            T::C(rng.random_range(1..=6))
        };
    }
    let a = random_tree(rng, depth - 1);
    match rng.random_range(0..6) {
        0 => T::Add(bx(a), bx(random_tree(rng, depth - 1))),
        1 => T::Sub(bx(a), bx(random_tree(rng, depth - 1))),
        2 => T::Mul(bx(a), bx(random_tree(rng, depth - 1))),
        3 => T::Div(bx(a), bx(random_tree(rng, depth - 1))),
        4 => T::Pow(bx(a), rng.random_range(2..=3)),
        _ => T::Neg(bx(a)),
    }
}

/// Applies one rewrite at the root. Most rewrites are algebraic identities;
/// the rest perturb the value or the variable set.
pub fn rewrite(t: &T, rng: &mut ChaCha8Rng) -> T {
    let a = t.clone();
    match rng.random_range(0..16) {
        0 => match a {
            T::Add(l, r) => T::Add(r, l),
            T::Mul(l, r) => T::Mul(r, l),
            other => T::Add(bx(T::C(0)), bx(other)),
        },
        1 => match a {
            T::Mul(l, r) => match *r {
                T::Add(p, q) => T::Add(bx(T::Mul(l.clone(), p)), bx(T::Mul(l, q))),
                r => T::Mul(bx(T::Mul(l, bx(r))), bx(T::C(1))),
            },
            other => T::Mul(bx(T::C(1)), bx(other)),
        },
        2 => match a {
            T::Sub(l, r) => T::Add(l, bx(T::Neg(r))),
            T::Div(l, r) => T::Mul(l, bx(T::Div(bx(T::C(1)), r))),
            other => T::Neg(bx(T::Neg(bx(other)))),
        },
        3 => match a {
            T::Pow(b, 2) => T::Mul(b.clone(), b),
            T::Pow(b, n) => T::Mul(b.clone(), bx(T::Pow(b, n - 1))),
            other => T::Sub(bx(T::Mul(bx(T::C(2)), bx(other.clone()))), bx(other)),
        },
        4 => {
            let k = rng.random_range(2..=5);
            T::Div(bx(T::Mul(bx(a), bx(T::C(k)))), bx(T::C(k)))
        }
        5 => match a {
            T::Pow(b, 2) => match *b {
                T::Add(p, q) => T::Add(
                    bx(T::Add(
                        bx(T::Pow(p.clone(), 2)),
                        bx(T::Mul(bx(T::Mul(bx(T::C(2)), p)), q.clone())),
                    )),
                    bx(T::Pow(q, 2)),
                ),
                b => T::Mul(bx(b.clone()), bx(b)),
            },
            other => T::Pow(bx(other), 1),
        },
        6 => T::Add(bx(a.clone()), bx(T::Sub(bx(T::V(1)), bx(T::V(1))))),
        7 => T::Sub(bx(T::Add(bx(a), bx(T::V(0)))), bx(T::V(0))),
        // Value-preserving but adds a variable the original may lack.
        8 => T::Add(bx(a), bx(T::Mul(bx(T::C(0)), bx(T::V(1))))),
        9 => T::Add(bx(a), bx(T::C(1))),
        10 => match a {
            T::Sub(l, r) => T::Sub(r, l),
            other => T::Mul(bx(T::C(2)), bx(other)),
        },
        11 => swap_vars(&a),
        12 => match a {
            T::Pow(b, n) => T::Pow(b, n + 1),
            other => T::Mul(bx(other.clone()), bx(other)),
        },
        13 => T::Neg(bx(a)),
        14 => match a {
            T::Div(l, r) => T::Div(r, l),
            other => T::Div(bx(other), bx(T::C(2))),
        },
        _ => a,
    }
}

fn swap_vars(t: &T) -> T {
    match t {
        T::C(c) => T::C(*c),
        T::V(i) => T::V(1 - i),
        T::Neg(a) => T::Neg(bx(swap_vars(a))),
        T::Pow(a, n) => T::Pow(bx(swap_vars(a)), *n),
        T::Add(a, b) => T::Add(bx(swap_vars(a)), bx(swap_vars(b))),
        T::Sub(a, b) => T::Sub(bx(swap_vars(a)), bx(swap_vars(b))),
        T::Mul(a, b) => T::Mul(bx(swap_vars(a)), bx(swap_vars(b))),
        T::Div(a, b) => T::Div(bx(swap_vars(a)), bx(swap_vars(b))),
    }
}

/// Evenly spaced points over `[-3, -0.1] ∪ [0.1, 3]`.
pub fn axis(n: usize) -> Vec<f64> {
    let half = n / 2;
    let step = 2.9 / (half - 1) as f64;
    let pos: Vec<f64> = (0..half).map(|i| 0.1 + step * i as f64).collect();
    pos.iter()
        .rev()
        .map(|v| -v)
        .chain(pos.iter().copied())
        .collect()
}

/// Equivalence by exhaustive evaluation on at least 1,000 grid points:
/// identical variable sets and agreement wherever both sides are finite,
/// with at least one finite point.
pub fn grid_oracle(a: &T, b: &T) -> bool {
    let (mut va, mut vb) = ([false; 2], [false; 2]);
    a.vars(&mut va);
    b.vars(&mut vb);
    if va != vb {
        return false;
    }
    let points: Vec<[f64; 2]> = match va.iter().filter(|&&v| v).count() {
        0 => vec![[0.0, 0.0]],
        1 => {
            let slot = if va[0] { 0 } else { 1 };
            axis(1000)
                .into_iter()
                .map(|v| {
                    let mut p = [0.0; 2];
                    p[slot] = v;
                    p
                })
                .collect()
        }
        _ => {
            let ax = axis(32);
            ax.iter()
                .flat_map(|&x| ax.iter().map(move |&y| [x, y]))
                .collect()
        }
    };
    let mut finite = 0;
    for p in points {
        let (x, y) = (a.eval(p), b.eval(p));
        if !x.is_finite() || !y.is_finite() {
            continue;
        }
        finite += 1;
        if (x - y).abs() > 1e-9 * 1f64.max(x.abs()).max(y.abs()) {
            return false;
        }
    }
    finite > 0
}

pub struct PairReport {
    pub pairs: usize,
    pub equivalent: usize,
    pub disagreements: Vec<String>,
}

/// Generates `n` (tree, rewrite) pairs and compares `expr_equivalent` on the
/// parsed renderings with the grid oracle on the trees themselves.
pub fn rewrite_pairs(n: usize, seed: u64) -> PairReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = PairReport {
        pairs: 0,
        equivalent: 0,
        disagreements: Vec::new(),
    };
    while report.pairs < n {
        let t = random_tree(&mut rng, 3);
        let mut r = rewrite(&t, &mut rng);
        if rng.random_bool(0.3) {
            r = rewrite(&r, &mut rng);
        }
        let (ls, rs) = (t.render(&mut rng), r.render(&mut rng));
        let pa = parse_expression(&ls).unwrap_or_else(|e| panic!("{ls}: {e}"));
        let pb = parse_expression(&rs).unwrap_or_else(|e| panic!("{rs}: {e}"));
        let got = verifier::expr_equivalent(&pa, &pb);
        let want = grid_oracle(&t, &r);
        report.pairs += 1;
        report.equivalent += usize::from(want);
        if got != want {
            report
                .disagreements
                .push(format!("{ls}  vs  {rs}: verifier {got}, grid {want}"));
        }
    }
    report
}

// ---------------------------------------------------------------------------
// Scripted engine runs

/// A store of `n` short documents, alternating between two sources.
pub fn small_store(n: usize) -> CorpusStore {
    let mut store = CorpusStore::new(0);
    for i in 0..n {
        let source = if i % 2 == 0 { "math" } else { "general" };
        let text = format!(
            "Document {i}. The orbit of body {i} has a radius of {} thousand kilometres \
             and a period of {} days.",
            100 + 7 * i,
            30 + i
        );
        store
            .add_text(&text, source, 5992, &ByteQuarterEstimator)
            .unwrap();
    }
    store
}

/// Scripted config with the given overrides applied on top of `B=16, G=8,
/// N=32, T=5`.
pub fn scripted_config(extra: &[&str]) -> EngineConfig {
    let mut sets: Vec<String> = ["B=16", "G=8", "N=32", "T=5", "seed=11", "concurrency=16"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    sets.extend(extra.iter().map(|s| s.to_string()));
    EngineConfig::load(None, &sets).expect("test config is valid")
}

pub fn scripted_engine(cfg: EngineConfig, docs: usize) -> Engine {
    let clients = Clients::from_config(&cfg).unwrap();
    Engine::new(cfg, small_store(docs), clients).unwrap()
}

pub fn runtime() -> tokio::runtime::Runtime {
    tokio::runtime::Builder::new_multi_thread()
        .worker_threads(4)
        .enable_all()
        .build()
        .unwrap()
}

pub async fn run_to(engine: &Engine, out: &Path, stop_after: Option<u64>) -> RunSummary {
    engine
        .run(
            out,
            &RunControl {
                stop_after,
                ..RunControl::default()
            },
        )
        .await
        .unwrap()
}

/// Whether `|kept_valid / kept - valid / total| <= 1 / g`.
pub fn ratio_within(kept_valid: usize, kept: usize, valid: usize, total: usize, g: usize) -> bool {
    let a = kept_valid as f64 / kept as f64;
    let b = valid as f64 / total as f64;
    (a - b).abs() <= 1.0 / g as f64 + 1e-12
}
