mod common;

use std::collections::BTreeMap;
use std::sync::Arc;

use async_trait::async_trait;
use selfplay_core::engine::{Engine, EngineError, IterationBatch, RunDir};
use selfplay_core::policy::{
    Clients, GenerationRequest, PolicyClient, PolicyError, ScriptedChallenger, TablePolicy,
};
use selfplay_core::rewards::{Role, Trajectory};
use selfplay_core::taskgen::{AnswerType, Gold, Task};

fn groups(ts: &[Trajectory]) -> BTreeMap<String, Vec<&Trajectory>> {
    let mut out: BTreeMap<String, Vec<&Trajectory>> = BTreeMap::new();
    for t in ts {
        out.entry(t.group_id.clone()).or_default().push(t);
    }
    out
}

#[test]
fn scripted_iterations_keep_group_shape_and_ratios() {
    let rt = common::runtime();
    let engine = common::scripted_engine(common::scripted_config(&[]), 32);
    rt.block_on(async {
        for t in 1..=5 {
            let outcomes = engine.run_documents(t).await.unwrap();
            assert_eq!(outcomes.len(), 16);
            for o in &outcomes {
                assert!(o.attempts >= 8 && o.attempts <= 32, "{}", o.attempts);
                assert_eq!(o.challenger.len(), 8);
                let kept_valid = o
                    .challenger
                    .iter()
                    .filter(|c| c.valid == Some(true))
                    .count();
                assert!(common::ratio_within(
                    kept_valid,
                    8,
                    o.valid_attempts,
                    o.attempts,
                    8
                ));
                assert_eq!(o.reasoner.len(), if kept_valid > 0 { 8 } else { 0 });
            }
            let batch = IterationBatch::assemble(t, outcomes);
            assert_eq!(batch.reasoner.len() % 8, 0);
            for (_, g) in groups(&batch.reasoner) {
                assert_eq!(g.len(), 8);
                let sum: f64 = g.iter().map(|t| t.advantage).sum();
                assert!(sum.abs() < 1e-9);
            }
            for (_, g) in groups(&batch.challenger) {
                let sum: f64 = g.iter().map(|t| t.advantage).sum();
                assert!(sum.abs() < 1e-9);
                assert!(g.iter().all(|t| t.role == Role::Challenger));
            }
        }
    });
}

#[test]
fn sparse_valid_pools_keep_the_ratio() {
    let rt = common::runtime();
    let cfg = common::scripted_config(&["policy.scripted.challenger.invalid_rate=0.9", "N=64"]);
    let engine = common::scripted_engine(cfg, 32);
    let mut long_pools = 0;
    rt.block_on(async {
        for t in 1..=3 {
            for o in engine.run_documents(t).await.unwrap() {
                let kept_valid = o
                    .challenger
                    .iter()
                    .filter(|c| c.valid == Some(true))
                    .count();
                assert!(common::ratio_within(
                    kept_valid,
                    8,
                    o.valid_attempts,
                    o.attempts,
                    8
                ));
                if o.attempts > 8 {
                    long_pools += 1;
                    assert!(o.valid_attempts <= 1);
                    assert_eq!(kept_valid, o.valid_attempts);
                }
            }
        }
    });
    assert!(long_pools > 0);
}

#[test]
fn reruns_are_byte_identical_and_concurrency_independent() {
    let rt = common::runtime();
    let a = common::scripted_engine(common::scripted_config(&[]), 32);
    let b = common::scripted_engine(common::scripted_config(&["concurrency=1"]), 32);
    rt.block_on(async {
        for t in [1, 4] {
            let x = a.run_iteration(t).await.unwrap().to_jsonl();
            let y = a.run_iteration(t).await.unwrap().to_jsonl();
            let z = b.run_iteration(t).await.unwrap().to_jsonl();
            assert_eq!(x, y);
            assert_eq!(x, z);
        }
    });
}

#[test]
fn metrics_match_the_exported_groups() {
    let rt = common::runtime();
    let engine = common::scripted_engine(common::scripted_config(&[]), 32);
    let batch = rt.block_on(engine.run_iteration(2)).unwrap();
    let m = &batch.metrics;
    let rates: Vec<f64> = groups(&batch.reasoner)
        .values()
        .map(|g| g.iter().map(|t| t.reward).sum::<f64>() / g.len() as f64)
        .collect();
    assert_eq!(m.tasks, rates.len());
    assert_eq!(m.reasoner_trajectories, batch.reasoner.len());
    assert_eq!(m.challenger_trajectories, batch.challenger.len());
    let mean = rates.iter().sum::<f64>() / rates.len() as f64;
    assert!((m.mean_pass_rate.unwrap() - mean).abs() < 1e-12);
    let invalid: usize = m.invalid_reasons.values().sum();
    assert_eq!(invalid + m.valid_attempts, m.attempts);
    assert!((m.valid_rate - m.valid_attempts as f64 / m.attempts as f64).abs() < 1e-12);
}

#[test]
fn jsonl_lists_challenger_then_reasoner() {
    let rt = common::runtime();
    let engine = common::scripted_engine(common::scripted_config(&[]), 32);
    let batch = rt.block_on(engine.run_iteration(1)).unwrap();
    let lines: Vec<Trajectory> = batch
        .to_jsonl()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert_eq!(lines.len(), batch.challenger.len() + batch.reasoner.len());
    let first_reasoner = lines.iter().position(|t| t.role == Role::Reasoner);
    if let Some(i) = first_reasoner {
        assert!(lines[i..].iter().all(|t| t.role == Role::Reasoner));
    }
}

#[test]
fn all_invalid_documents_yield_rho_only() {
    let rt = common::runtime();
    let cfg = common::scripted_config(&["policy.scripted.challenger.invalid_rate=1.0", "B=4"]);
    let engine = common::scripted_engine(cfg, 8);
    let outcomes = rt.block_on(engine.run_documents(1)).unwrap();
    for o in &outcomes {
        assert_eq!(o.attempts, 32);
        assert_eq!(o.valid_attempts, 0);
        assert!(o.reasoner.is_empty());
        assert_eq!(o.challenger.len(), 8);
        for c in &o.challenger {
            assert_eq!(c.reward, -0.1);
            assert_eq!(c.advantage, 0.0);
            assert_eq!(c.valid, Some(false));
        }
    }
    let batch = IterationBatch::assemble(1, outcomes);
    assert!(batch.reasoner.is_empty());
    assert_eq!(batch.metrics.tasks, 0);
    assert_eq!(batch.metrics.mean_pass_rate, None);
}

#[test]
fn perfect_reasoner_gives_saturated_reward() {
    let rt = common::runtime();
    let cfg = common::scripted_config(&[
        "policy.scripted.reasoner.skill=50",
        "policy.scripted.challenger.invalid_rate=0",
    ]);
    let engine = common::scripted_engine(cfg, 32);
    let outcomes = rt.block_on(engine.run_documents(1)).unwrap();
    for o in outcomes {
        let (_, stats) = o.selected.unwrap();
        assert_eq!(stats.pass_rate(), 1.0);
        for c in o.challenger.iter().filter(|c| c.valid == Some(true)) {
            assert!((c.reward - (-3.125f64).exp()).abs() < 1e-12);
        }
    }
}

struct Garbage;

#[async_trait]
impl PolicyClient for Garbage {
    async fn generate(&self, req: &GenerationRequest) -> Result<Vec<String>, PolicyError> {
        Ok(vec!["\u{0}\u{1}no box {{{".into(); req.n])
    }
}

#[test]
fn unparseable_answers_label_zero_with_full_group() {
    let rt = common::runtime();
    let cfg = common::scripted_config(&[]);
    let clients = Clients::new(
        Arc::new(ScriptedChallenger::new(
            cfg.policy.scripted.challenger.clone(),
        )),
        Arc::new(Garbage),
    );
    let engine = Engine::new(cfg, common::small_store(4), clients).unwrap();
    let task = Task {
        question: "What is 2 + 2?".into(),
        gold: Gold::parse(AnswerType::Integer, "4").unwrap(),
        answer_type: AnswerType::Integer,
        source_doc: "d".into(),
        raw_generation: String::new(),
    };
    let (_, completions, stats) = rt.block_on(engine.answer(&task, 3)).unwrap();
    assert_eq!(completions.len(), 8);
    assert_eq!(stats.k(), 8);
    assert_eq!(stats.correct(), 0);
}

struct Down;

#[async_trait]
impl PolicyClient for Down {
    async fn generate(&self, _req: &GenerationRequest) -> Result<Vec<String>, PolicyError> {
        Err(PolicyError::Transport {
            attempts: 5,
            message: "connection refused".into(),
        })
    }
}

#[test]
fn transport_failure_names_the_document() {
    let rt = common::runtime();
    let cfg = common::scripted_config(&["B=1"]);
    let engine = Engine::new(
        cfg,
        common::small_store(4),
        Clients::new(Arc::new(Down), Arc::new(Down)),
    )
    .unwrap();
    let err = rt.block_on(engine.run_iteration(1)).unwrap_err();
    match err {
        EngineError::Policy { doc_id, .. } => {
            assert!(engine.store().get(&doc_id).is_some(), "{doc_id}");
        }
        other => panic!("unexpected error {other}"),
    }
}

struct Short;

#[async_trait]
impl PolicyClient for Short {
    async fn generate(&self, req: &GenerationRequest) -> Result<Vec<String>, PolicyError> {
        Ok(vec![String::new(); req.n.saturating_sub(1)])
    }
}

#[test]
fn short_replies_are_an_error() {
    let rt = common::runtime();
    let engine = Engine::new(
        common::scripted_config(&["B=1"]),
        common::small_store(2),
        Clients::new(Arc::new(Short), Arc::new(Short)),
    )
    .unwrap();
    assert!(rt.block_on(engine.run_iteration(1)).is_err());
}

#[test]
fn table_policy_challenger_drives_a_fixed_task() {
    let rt = common::runtime();
    let format = r#"{"suitable_for_mcq": false, "suitable_for_free_form": true, "best_answer_type": "Integer", "reason": "a count"}"#;
    let task = r#"{"question": "How many moons?", "answer": "2", "answer_type": "Integer"}"#;
    let challenger = TablePolicy::new().with_fallback(&[format, task]);
    let reasoner =
        TablePolicy::new().with_fallback(&["\\boxed{2}", "\\boxed{3}", "\\boxed{2.0}", "none"]);
    let engine = Engine::new(
        common::scripted_config(&["B=2", "G=4", "N=8"]),
        common::small_store(4),
        Clients::new(Arc::new(challenger), Arc::new(reasoner)),
    )
    .unwrap();
    let outcomes = rt.block_on(engine.run_documents(1)).unwrap();
    assert_eq!(outcomes.len(), 2);
    for o in outcomes {
        assert_eq!(o.challenger.len(), 4);
        assert_eq!(o.reasoner.len(), 4);
        let labels: Vec<f64> = o.reasoner.iter().map(|t| t.reward).collect();
        assert_eq!(labels, vec![1.0, 0.0, 1.0, 0.0]);
        let advantages: Vec<f64> = o.reasoner.iter().map(|t| t.advantage).collect();
        assert_eq!(advantages, vec![0.5, -0.5, 0.5, -0.5]);
        for c in &o.challenger {
            if c.valid == Some(true) {
                assert!((c.reward - 1.0).abs() < 1e-12);
            }
        }
    }
}

// --- run directories and resume ---------------------------------------------

#[test]
fn resumed_run_matches_uninterrupted_stream() {
    let rt = common::runtime();
    let full = tempfile::tempdir().unwrap();
    let split = tempfile::tempdir().unwrap();
    let cfg = common::scripted_config(&[]);
    rt.block_on(async {
        let s = common::run_to(&common::scripted_engine(cfg.clone(), 32), full.path(), None).await;
        assert_eq!(s.completed, vec![1, 2, 3, 4, 5]);

        let first = common::scripted_engine(cfg.clone(), 32);
        let s = common::run_to(&first, split.path(), Some(2)).await;
        assert_eq!(s.completed, vec![1, 2]);
        assert!(s.stopped_early);
        drop(first);
        let s = common::run_to(
            &common::scripted_engine(cfg.clone(), 32),
            split.path(),
            None,
        )
        .await;
        assert_eq!(s.resumed_from, 3);
        assert_eq!(s.completed, vec![3, 4, 5]);
    });
    let a = RunDir::existing(full.path());
    let b = RunDir::existing(split.path());
    assert_eq!(a.stream(1).unwrap(), b.stream(1).unwrap());
    assert_eq!(
        std::fs::read(a.metrics_path()).unwrap(),
        std::fs::read(b.metrics_path()).unwrap()
    );
}

#[test]
fn extending_iterations_resumes_after_the_last_one() {
    let rt = common::runtime();
    let dir = tempfile::tempdir().unwrap();
    let full = tempfile::tempdir().unwrap();
    rt.block_on(async {
        let three = common::scripted_engine(common::scripted_config(&["T=3"]), 32);
        assert_eq!(
            common::run_to(&three, dir.path(), None).await.completed,
            vec![1, 2, 3]
        );
        let five = common::scripted_engine(common::scripted_config(&[]), 32);
        let s = common::run_to(&five, dir.path(), None).await;
        assert_eq!(s.completed, vec![4, 5]);
        common::run_to(&five, full.path(), None).await;
    });
    assert_eq!(
        RunDir::existing(dir.path()).stream(1).unwrap(),
        RunDir::existing(full.path()).stream(1).unwrap()
    );
}

#[test]
fn aborted_iteration_is_repeated() {
    let rt = common::runtime();
    let dir = tempfile::tempdir().unwrap();
    let reference = tempfile::tempdir().unwrap();
    let cfg = common::scripted_config(&["T=3"]);
    rt.block_on(async {
        common::run_to(
            &common::scripted_engine(cfg.clone(), 32),
            reference.path(),
            None,
        )
        .await;
        common::run_to(
            &common::scripted_engine(cfg.clone(), 32),
            dir.path(),
            Some(2),
        )
        .await;
    });
    let run = RunDir::existing(dir.path());
    std::fs::write(run.batch_path(3), b"partial line without manifest").unwrap();
    assert_eq!(run.completed().unwrap(), vec![1, 2]);
    let s = rt.block_on(async {
        common::run_to(&common::scripted_engine(cfg, 32), dir.path(), None).await
    });
    assert_eq!(s.completed, vec![3]);
    assert_eq!(
        run.stream(1).unwrap(),
        RunDir::existing(reference.path()).stream(1).unwrap()
    );
}

#[test]
fn mismatched_config_is_refused() {
    let rt = common::runtime();
    let dir = tempfile::tempdir().unwrap();
    rt.block_on(async {
        let e = common::scripted_engine(common::scripted_config(&["T=1"]), 32);
        common::run_to(&e, dir.path(), None).await;
        let other = common::scripted_engine(common::scripted_config(&["T=2", "seed=12"]), 32);
        let err = other
            .run(dir.path(), &Default::default())
            .await
            .unwrap_err();
        assert!(matches!(err, EngineError::ConfigMismatch { .. }), "{err}");
    });
    assert_eq!(RunDir::existing(dir.path()).completed().unwrap(), vec![1]);
}

#[test]
fn manifests_record_hash_counts_and_digest() {
    use sha2::{Digest, Sha256};
    let rt = common::runtime();
    let dir = tempfile::tempdir().unwrap();
    let cfg = common::scripted_config(&["T=2"]);
    let hash = cfg.hash();
    rt.block_on(common::run_to(
        &common::scripted_engine(cfg, 32),
        dir.path(),
        None,
    ));
    let run = RunDir::existing(dir.path());
    assert_eq!(
        RunDir::snapshot_hash(&dir.path().join("config.json")).unwrap(),
        hash
    );
    for t in 1..=2 {
        let m = run.read_manifest(t).unwrap().unwrap();
        let body = std::fs::read(run.batch_path(t)).unwrap();
        assert_eq!(m.config_hash, hash);
        assert_eq!(m.batch_sha256, hex::encode(Sha256::digest(&body)));
        let lines = body
            .split(|&b| b == b'\n')
            .filter(|l| !l.is_empty())
            .count();
        assert_eq!(lines, m.challenger_count + m.reasoner_count);
        assert_eq!(m.reasoner_count % 8, 0);
    }
    let metrics = std::fs::read_to_string(run.metrics_path()).unwrap();
    assert_eq!(metrics.lines().count(), 2);
}

#[test]
fn stray_later_manifest_is_reported() {
    let rt = common::runtime();
    let dir = tempfile::tempdir().unwrap();
    let cfg = common::scripted_config(&["T=3"]);
    rt.block_on(common::run_to(
        &common::scripted_engine(cfg.clone(), 32),
        dir.path(),
        None,
    ));
    let run = RunDir::existing(dir.path());
    std::fs::remove_file(run.manifest_path(2)).unwrap();
    let err = rt
        .block_on(common::scripted_engine(cfg, 32).run(dir.path(), &Default::default()))
        .unwrap_err();
    assert!(matches!(err, EngineError::Corrupt(_)), "{err}");
}
