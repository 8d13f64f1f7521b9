//! Acceptance checks. Runs every criterion, prints one PASS/FAIL line each,
//! and exits non-zero if any failed.

mod common;

use std::collections::BTreeSet;
use std::sync::Mutex;
use std::time::{Duration, Instant};

use evofsm_core::backends::{BackendError, Backends};
use evofsm_core::evolution::OpKind;
use evofsm_core::fsm::{run, validate_config, HaltReason};
use evofsm_core::harness::{bench, sweep, BenchmarkItem, HarnessParams, Mode};
use evofsm_core::reflection::ExperienceRecord;
use evofsm_core::scenarios::{
    default_config, paired_set, synthetic_suite, world_backends, Case, CASE_ADD_STATE, CASE_REVISE, CASE_SYNERGY,
};
use evofsm_core::{
    apply_op, deserialize_config, evolve, serialize_config, undo, EvolutionOutcome, EvolveLimits, ExperiencePool,
    RecordFilter,
};
use rand::Rng;

type Check = Result<String, String>;
type Criterion = (&'static str, fn() -> Check);

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn factory(_: &BenchmarkItem) -> Result<Backends, BackendError> {
    Ok(world_backends())
}

fn op_algebra() -> Check {
    let start = Instant::now();
    let (mut accepted, mut rejected, mut violations) = (0usize, 0usize, Vec::new());
    for seed in 0..1000u64 {
        let mut rng = common::rng(seed);
        let mut config = common::random_config(&mut rng);
        if !validate_config(&config).is_valid() {
            return Err(format!("generator produced an invalid config (seed {seed}): {}", validate_config(&config)));
        }
        for _ in 0..rng.random_range(1..=8) {
            let op = common::random_op(&config, &mut rng);
            match apply_op(&config, &op) {
                Ok((next, inverse)) => {
                    accepted += 1;
                    let report = validate_config(&next);
                    if !report.is_valid() {
                        violations.push(format!("seed {seed}: {op} gave invalid config: {report}"));
                    }
                    if next.states.len() > 10 {
                        violations.push(format!("seed {seed}: {} states", next.states.len()));
                    }
                    match undo(&next, &inverse) {
                        Ok(back) if back.structurally_eq(&config) => {}
                        Ok(_) => violations.push(format!("seed {seed}: undo of {op} is not structurally equal")),
                        Err(e) => violations.push(format!("seed {seed}: undo of {op} rejected: {e}")),
                    }
                    config = next;
                }
                Err(_) => rejected += 1,
            }
        }
    }
    // Episodes never exceed the iteration cap, even when nothing ever passes.
    let report = bench(&synthetic_suite(), Mode::Evofsm, &default_config(), &HarnessParams::default(), &factory, None, 4);
    let max_iters = report.items.iter().map(|i| i.iterations_used).max().unwrap_or(0);
    let mut limits = HarnessParams::default();
    limits.limits.max_iterations = 3;
    let stuck = BenchmarkItem::new("stuck", "Unanswerable question with no fixture at all", "none");
    let stuck_report = bench(&[stuck], Mode::Evofsm, &default_config(), &limits, &factory, None, 1);
    let stuck_iters = stuck_report.items[0].iterations_used;
    let elapsed = start.elapsed();
    ensure(violations.is_empty(), || format!("{} violations, first: {}", violations.len(), violations[0]))?;
    ensure(max_iters <= 3 && stuck_iters <= 3, || format!("episode used {max_iters}/{stuck_iters} iterations"))?;
    ensure(accepted > 1000 && rejected > 100, || format!("weak fuzzing: {accepted} accepted, {rejected} rejected"))?;
    ensure(elapsed < Duration::from_secs(30), || format!("took {elapsed:?}"))?;
    Ok(format!("{accepted} ops accepted, {rejected} rejected, 0 violations, {:.1}s", elapsed.as_secs_f64()))
}

fn separation() -> Check {
    let (mut skill_ok, mut flow_ok) = (0, 0);
    for seed in 0..500u64 {
        let mut rng = common::rng(10_000 + seed);
        let config = common::random_config(&mut rng);
        let op = common::random_revise(&config, &mut rng);
        let (next, _) = apply_op(&config, &op).map_err(|e| format!("revise rejected: {e}"))?;
        let before = serde_json::to_string(&config.topology()).unwrap();
        let after = serde_json::to_string(&next.topology()).unwrap();
        ensure(before == after, || format!("seed {seed}: revise changed topology"))?;
        skill_ok += 1;
    }
    let mut flow_applied = 0;
    for seed in 0..500u64 {
        let mut rng = common::rng(20_000 + seed);
        let config = common::random_config(&mut rng);
        let op = common::random_flow_op(&config, &mut rng);
        if let Ok((next, _)) = apply_op(&config, &op) {
            flow_applied += 1;
            for st in &next.states {
                if let Some(old) = config.state(&st.id) {
                    ensure(old.instruction == st.instruction, || format!("seed {seed}: {op} changed {}", st.id))?;
                }
            }
        }
        flow_ok += 1;
    }
    ensure(flow_applied >= 100, || format!("only {flow_applied} flow ops applied"))?;
    Ok(format!("{skill_ok} skill ops, {flow_ok} flow ops ({flow_applied} applied), 0 violations"))
}

/// Brute-force ranking written independently of the pool.
fn oracle_rank(records: &[ExperienceRecord], q: &[f64], k: usize) -> Vec<(String, f64)> {
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let mut scored: Vec<(f64, u64, String)> = records
        .iter()
        .map(|r| {
            let dot: f64 = q.iter().zip(&r.query_embedding).map(|(a, b)| a * b).sum();
            let (nq, nr) = (norm(q), norm(&r.query_embedding));
            let sim = if nq == 0.0 || nr == 0.0 { 0.0 } else { dot / (nq * nr) };
            (sim, r.created_at, r.id.clone())
        })
        .collect();
    scored.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)));
    scored.into_iter().take(k).map(|(s, _, id)| (id, s)).collect()
}

fn retrieval() -> Check {
    let start = Instant::now();
    let mut checks = 0;
    for seed in 0..200u64 {
        let mut rng = common::rng(30_000 + seed);
        let mut pool = ExperiencePool::in_memory(64);
        let n = rng.random_range(0..=100);
        let mut last: Option<Vec<f64>> = None;
        for _ in 0..n {
            let mut rec = common::random_record(&mut rng, 64);
            // Exact duplicates exercise the tie order.
            if let (Some(prev), true) = (&last, rng.random_bool(0.2)) {
                rec.query_embedding = prev.clone();
            }
            last = Some(rec.query_embedding.clone());
            pool.add_record(rec).map_err(|e| e.to_string())?;
        }
        for k in [1, 3, 10] {
            let q = match (rng.random_bool(0.3), pool.records().first()) {
                (true, Some(r)) => r.query_embedding.clone(),
                _ => common::unit_vector(&mut rng, 64),
            };
            let got: Vec<(String, f64)> =
                pool.retrieve_top_k(&q, k, RecordFilter::All).into_iter().map(|r| (r.record.id, r.similarity)).collect();
            let want = oracle_rank(pool.records(), &q, k);
            ensure(got == want, || format!("seed {seed} k {k}: {got:?} != {want:?}"))?;
            checks += 1;
        }
    }
    let elapsed = start.elapsed();
    ensure(elapsed < Duration::from_secs(10), || format!("took {elapsed:?}"))?;
    Ok(format!("{checks} rankings match, {:.2}s", elapsed.as_secs_f64()))
}

fn evolve_case(case: &Case) -> Result<EvolutionOutcome, String> {
    let mut b = world_backends();
    evolve(&default_config(), case.query, b.chat.as_mut(), &mut b.tools, &[], &EvolveLimits::default())
        .map_err(|e| e.to_string())
}

fn case_add_state() -> Check {
    let mut b = world_backends();
    let t = run(&default_config(), CASE_ADD_STATE.query, b.chat.as_mut(), &mut b.tools, &Default::default());
    ensure(t.halted_reason == HaltReason::LoopDetected, || format!("static run halted {:?}", t.halted_reason))?;
    let mut serialized = BTreeSet::new();
    let mut last = None;
    for _ in 0..3 {
        let o = evolve_case(&CASE_ADD_STATE)?;
        let ops: Vec<String> = o.op_log.iter().map(|e| e.op.to_string()).collect();
        ensure(ops == ["ADD_STATE(verifier)"], || format!("op log {ops:?}"))?;
        ensure(o.final_trajectory.halted_reason == HaltReason::Terminal, || "evolved run did not terminate".into())?;
        let answer = o.final_trajectory.final_answer.clone().unwrap_or_default();
        ensure(answer.contains(CASE_ADD_STATE.expected), || format!("answer {answer:?}"))?;
        ensure(o.iterations_used == 2 && o.succeeded, || format!("iterations {}", o.iterations_used))?;
        serialized.insert(serde_json::to_string(&o).unwrap());
        last = Some(answer);
    }
    ensure(serialized.len() == 1, || "repeats differ".into())?;
    Ok(format!("static LOOP_DETECTED; ADD_STATE(verifier); 2 iterations; answer {:?}; 3 identical repeats", last.unwrap()))
}

fn case_revise_and_synergy() -> Check {
    let o = evolve_case(&CASE_REVISE)?;
    let kinds: Vec<OpKind> = o.op_log.iter().map(|e| e.op.edit.kind()).collect();
    ensure(kinds == [OpKind::ReviseInstruction], || format!("case 2 ops {kinds:?}"))?;
    ensure(o.op_log[0].op.edit.target() == "browse", || "case 2 revised the wrong state".into())?;
    let answer = o.final_trajectory.final_answer.clone().unwrap_or_default();
    ensure(answer.contains(CASE_REVISE.expected), || format!("case 2 answer {answer:?}"))?;

    let o3 = evolve_case(&CASE_SYNERGY)?;
    let flow: Vec<_> = o3.op_log.iter().filter(|e| e.op.edit.is_flow()).collect();
    let skill: Vec<_> = o3.op_log.iter().filter(|e| !e.op.edit.is_flow()).collect();
    ensure(flow.len() == 1 && skill.len() == 1, || format!("case 3 ops {:?}", o3.op_log.iter().map(|e| e.op.to_string()).collect::<Vec<_>>()))?;
    ensure(flow[0].iteration == skill[0].iteration, || "case 3 ops landed in different iterations".into())?;
    let a3 = o3.final_trajectory.final_answer.clone().unwrap_or_default();
    ensure(o3.succeeded && a3.contains(CASE_SYNERGY.expected), || format!("case 3 answer {a3:?}"))?;
    Ok(format!("case 2 answer {answer:?}; case 3 ops {} + {}", flow[0].op, skill[0].op))
}

fn ablation() -> Check {
    let items = synthetic_suite();
    let acc = |mode| {
        bench(&items, mode, &default_config(), &HarnessParams::default(), &factory, None, 4).accuracy.unwrap_or(0.0)
    };
    let (evo, rewrite, stat, react) = (acc(Mode::Evofsm), acc(Mode::Rewrite), acc(Mode::Static), acc(Mode::React));
    let line = format!("evofsm {evo:.2}, rewrite {rewrite:.2}, static {stat:.2}, react {react:.2}");
    ensure(evo > rewrite && evo > stat && stat >= react, || line.clone())?;
    Ok(line)
}

fn iteration_sweep() -> Check {
    let items = synthetic_suite();
    let rows = sweep(&items, &[0, 1, 2, 3], &default_config(), &HarnessParams::default(), &factory, None, 4);
    let stat = bench(&items, Mode::Static, &default_config(), &HarnessParams::default(), &factory, None, 4).accuracy;
    let accs: Vec<f64> = rows.iter().map(|r| r.accuracy.unwrap_or(0.0)).collect();
    ensure(accs.windows(2).all(|w| w[0] <= w[1]), || format!("accuracy column {accs:?}"))?;
    ensure(rows[0].accuracy == stat, || format!("cap 0 {:?} vs static {stat:?}", rows[0].accuracy))?;
    Ok(format!("caps 0..3 accuracy {accs:?}"))
}

fn memory_effect() -> Check {
    let (first, twins) = paired_set();
    let pool = Mutex::new(ExperiencePool::in_memory(evofsm_core::memory::DEFAULT_EMBEDDING_DIM));
    let params = HarnessParams::default();
    let cold = bench(&first, Mode::Evofsm, &default_config(), &params, &factory, Some(&pool), 1);
    let warm = bench(&twins, Mode::Evofsm, &default_config(), &params, &factory, Some(&pool), 1);
    let fewer = cold.items.iter().zip(&warm.items).filter(|(c, w)| w.iterations_used < c.iterations_used).count();
    let pool = pool.into_inner().unwrap();
    let verifier_prior = warm.items.iter().filter_map(|w| w.prior.as_deref()).any(|id| {
        pool.get(id).is_some_and(|r| r.config_snapshot.state("verifier").is_some())
    });
    let ratio = fewer as f64 / first.len() as f64;
    ensure(ratio >= 0.8, || format!("{fewer}/{} pairs improved", first.len()))?;
    ensure(verifier_prior, || "no warm start carried a verifier state".into())?;
    Ok(format!(
        "{fewer}/{} pairs used fewer iterations (mean {:.1} -> {:.1}); warm starts include the verifier",
        first.len(),
        cold.mean_iterations.unwrap_or(0.0),
        warm.mean_iterations.unwrap_or(0.0)
    ))
}

fn round_trip_and_durability() -> Check {
    for seed in 0..1000u64 {
        let mut rng = common::rng(40_000 + seed);
        let c = common::random_config(&mut rng);
        let back = deserialize_config(&serialize_config(&c)).map_err(|e| format!("seed {seed}: {e}"))?;
        ensure(back == c, || format!("seed {seed}: config round trip differs"))?;
    }
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let path = dir.path().join("pool.jsonl");
    let mut rng = common::rng(50_000);
    let mut written = Vec::new();
    {
        let mut pool = ExperiencePool::open(&path, 32).map_err(|e| e.to_string())?;
        for _ in 0..1000 {
            written.push(pool.add_record(common::random_record(&mut rng, 32)).map_err(|e| e.to_string())?.clone());
        }
    }
    let reopened = ExperiencePool::open(&path, 32).map_err(|e| e.to_string())?;
    ensure(reopened.records() == written.as_slice(), || "pool round trip differs".into())?;

    // Interrupted append: half a line on disk.
    let next = serde_json::to_string(&common::random_record(&mut rng, 32)).unwrap();
    std::fs::OpenOptions::new()
        .append(true)
        .open(&path)
        .and_then(|mut f| std::io::Write::write_all(&mut f, &next.as_bytes()[..next.len() / 2]))
        .map_err(|e| e.to_string())?;
    let mut pool = ExperiencePool::open(&path, 32).map_err(|e| e.to_string())?;
    ensure(pool.len() == written.len(), || format!("after torn write: {} records", pool.len()))?;
    pool.add_record(common::random_record(&mut rng, 32)).map_err(|e| e.to_string())?;
    drop(pool);
    let records = ExperiencePool::scan(&path).map_err(|e| e.to_string())?;
    let ids: BTreeSet<&str> = records.iter().map(|r| r.id.as_str()).collect();
    ensure(records.len() == written.len() + 1 && ids.len() == records.len(), || {
        format!("after recovery: {} records, {} ids", records.len(), ids.len())
    })?;
    Ok("1000 configs and 1000 records round-trip; torn append lost only the in-flight record".into())
}

fn main() {
    let criteria: [Criterion; 9] = [
        ("op algebra", op_algebra),
        ("separation law", separation),
        ("retrieval oracle", retrieval),
        ("case 1 add state", case_add_state),
        ("cases 2 and 3", case_revise_and_synergy),
        ("ablation ordering", ablation),
        ("iteration sweep", iteration_sweep),
        ("memory effect", memory_effect),
        ("round trip and durability", round_trip_and_durability),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        match check() {
            Ok(detail) => println!("criterion {} {name}: PASS ({detail})", i + 1),
            Err(detail) => {
                failed += 1;
                println!("criterion {} {name}: FAIL ({detail})", i + 1);
            }
        }
    }
    if failed > 0 {
        eprintln!("{failed} criteria failed");
        std::process::exit(1);
    }
}
