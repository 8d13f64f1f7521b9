mod common;

use evofsm_core::backends::Embedder;
use evofsm_core::memory::{cosine, embed, fnv1a64, warm_start_from, HashEmbedder};
use evofsm_core::reflection::Outcome;
use evofsm_core::scenarios::default_config;
use evofsm_core::{ExperiencePool, RecordFilter, WarmStartParams};
use proptest::prelude::*;

#[test]
fn fnv_reference_values() {
    // Published FNV-1a 64 test vectors.
    assert_eq!(fnv1a64(b""), 0xcbf2_9ce4_8422_2325);
    assert_eq!(fnv1a64(b"a"), 0xaf63_dc4c_8601_ec8c);
    assert_eq!(fnv1a64(b"foobar"), 0x8594_4171_f739_67e8);
}

#[test]
fn dim8_embedding_matches_hand_computation() {
    // search -> bucket 1, +1 (twice); browse -> bucket 7, -1; verify -> bucket 4, +1.
    let mut e = HashEmbedder::new(8);
    assert_eq!(e.embed_raw("Search, browse; VERIFY search").unwrap(), vec![0.0, 2.0, 0.0, 0.0, 1.0, 0.0, 0.0, -1.0]);
    let v = embed("Search, browse; VERIFY search", &mut e).unwrap();
    let s = 6f64.sqrt();
    let want = [0.0, 2.0 / s, 0.0, 0.0, 1.0 / s, 0.0, 0.0, -1.0 / s];
    for (a, b) in v.iter().zip(want) {
        assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn pool_reload_keeps_500_records_in_order() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("nested/pool.jsonl");
    let mut rng = common::rng(7);
    let mut ids = Vec::new();
    {
        let mut pool = ExperiencePool::open(&path, 16).unwrap();
        for _ in 0..500 {
            ids.push(pool.add_record(common::random_record(&mut rng, 16)).unwrap().id.clone());
        }
    }
    let pool = ExperiencePool::open(&path, 16).unwrap();
    assert_eq!(pool.records().iter().map(|r| r.id.clone()).collect::<Vec<_>>(), ids);
    assert!(pool.records().iter().filter(|r| r.outcome == Outcome::Success).all(|r| r.failure_constraints.is_empty()));
    let stats = ExperiencePool::verify(&path).unwrap();
    assert_eq!(stats.success + stats.failure, 500);
    assert!(ExperiencePool::open(&path, 17).is_err());
}

#[test]
fn corrupt_middle_line_is_reported_with_its_number() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("pool.jsonl");
    let mut rng = common::rng(8);
    {
        let mut pool = ExperiencePool::open(&path, 8).unwrap();
        for _ in 0..3 {
            pool.add_record(common::random_record(&mut rng, 8)).unwrap();
        }
    }
    let text = std::fs::read_to_string(&path).unwrap();
    let mut lines: Vec<&str> = text.lines().collect();
    lines[1] = "{not json";
    std::fs::write(&path, lines.join("\n") + "\n").unwrap();
    let err = ExperiencePool::verify(&path).unwrap_err().to_string();
    assert!(err.contains("line 2"), "{err}");
    assert!(ExperiencePool::open(&path, 8).is_err());
}

#[test]
fn warm_start_takes_similar_success_and_failure_constraints() {
    let mut rng = common::rng(9);
    let mut pool = ExperiencePool::in_memory(4);
    let mut success = common::random_record(&mut rng, 4);
    success.outcome = Outcome::Success;
    success.query_embedding = vec![1.0, 0.0, 0.0, 0.0];
    let mut failure = common::random_record(&mut rng, 4);
    failure.outcome = Outcome::Failure;
    failure.query_embedding = vec![0.0, 1.0, 0.0, 0.0];
    failure.failure_constraints = vec![evofsm_core::fsm::ForbiddenPattern::edge("browse", "search", "looped")];
    let want_config = success.config_snapshot.clone();
    let constraint = failure.failure_constraints[0].clone();
    pool.add_record(success).unwrap();
    pool.add_record(failure).unwrap();

    let near = [0.9, 0.1, 0.0, 0.0];
    let ws = warm_start_from(&default_config(), &near, &pool, &WarmStartParams::default());
    assert_eq!(ws.prior.as_deref(), Some("exp-000001"));
    assert_eq!(ws.config.topology(), want_config.topology());
    assert!(ws.config.negative_constraints.iter().any(|p| p.rule == constraint.rule));

    let far = [0.0, 0.0, 1.0, 0.0];
    let ws = warm_start_from(&default_config(), &far, &pool, &WarmStartParams::default());
    assert_eq!(ws.prior, None);
    assert_eq!(ws.config.topology(), default_config().topology());
}

proptest! {
    #[test]
    fn embeddings_are_unit_norm(text in "[a-zA-Z0-9 ,.!?]{1,80}") {
        prop_assume!(!text.trim().is_empty());
        let v = embed(&text, &mut HashEmbedder::new(32)).unwrap();
        let n: f64 = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        prop_assert!((n - 1.0).abs() < 1e-9);
        prop_assert!((cosine(&v, &v) - 1.0).abs() < 1e-9);
    }

    #[test]
    fn retrieval_is_sorted_and_bounded(seed in any::<u64>(), n in 0usize..40, k in 0usize..12) {
        let mut rng = common::rng(seed);
        let mut pool = ExperiencePool::in_memory(8);
        for _ in 0..n {
            pool.add_record(common::random_record(&mut rng, 8)).unwrap();
        }
        let q = common::unit_vector(&mut rng, 8);
        let got = pool.retrieve_top_k(&q, k, RecordFilter::SuccessOnly);
        prop_assert!(got.len() <= k);
        prop_assert!(got.iter().all(|r| r.record.outcome == Outcome::Success));
        for w in got.windows(2) {
            prop_assert!(w[0].similarity > w[1].similarity
                || (w[0].similarity == w[1].similarity && w[0].record.created_at < w[1].record.created_at));
        }
    }
}
