//! Random machines, ops and records shared by the integration tests.

#![allow(dead_code)]

use evofsm_core::evolution::Rewire;
use evofsm_core::fsm::ForbiddenPattern;
use evofsm_core::reflection::{ExperienceRecord, Outcome};
use evofsm_core::{AtomicOp, ConditionSpec, FsmConfig, OpEdit, StateDef, TransitionRule};
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::json;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

const WORDS: &[&str] = &["find", "check", "sources", "dates", "figures", "verbatim", "report", "summarize", "légal", "数据"];

pub fn text(rng: &mut impl Rng) -> String {
    let n = rng.random_range(1..8);
    (0..n).map(|_| *WORDS.choose(rng).unwrap()).collect::<Vec<_>>().join(" ")
}

pub fn condition(rng: &mut impl Rng) -> ConditionSpec {
    match rng.random_range(0..6) {
        0 | 1 => ConditionSpec::always(),
        2 => ConditionSpec::predicate("evidence_count_at_least", vec![json!(rng.random_range(0..4))]),
        3 => ConditionSpec::predicate("last_output_contains", vec![json!("VERIFIED")]),
        4 => ConditionSpec::predicate("visit_count_exceeded", vec![json!(rng.random_range(1..4))]),
        _ => ConditionSpec::router(text(rng)),
    }
}

fn next_priority(config: &FsmConfig, from: &str) -> i64 {
    config.outgoing(from).iter().map(|t| t.priority + 1).max().unwrap_or(0)
}

/// A valid machine: a chain from the initial state to a terminal, plus
/// random extra edges with distinct priorities per source.
pub fn random_config(rng: &mut impl Rng) -> FsmConfig {
    let n = rng.random_range(2..=8);
    let tools = ["search", "browse"];
    let mut states = Vec::new();
    for i in 0..n {
        let mut st = StateDef::new(format!("s{i}"), format!("State {i}"), text(rng));
        let k = rng.random_range(0..=2);
        st.allowed_tools = tools[..k].iter().map(|s| s.to_string()).collect();
        if i == n - 1 || (i > 0 && rng.random_bool(0.15)) {
            st = st.terminal();
        }
        states.push(st);
    }
    let mut config = FsmConfig {
        version: rng.random_range(1..5),
        initial_state: "s0".into(),
        states,
        transitions: vec![],
        negative_constraints: vec![],
        extra: Default::default(),
    };
    let mut tid = 0;
    for i in 0..n - 1 {
        let from = format!("s{i}");
        let p = next_priority(&config, &from);
        config.transitions.push(TransitionRule::new(format!("t{tid}"), from, format!("s{}", i + 1), p, condition(rng)));
        tid += 1;
    }
    for _ in 0..rng.random_range(0..n * 2) {
        let from = format!("s{}", rng.random_range(0..n));
        let to = format!("s{}", rng.random_range(0..n));
        let p = next_priority(&config, &from);
        config.transitions.push(TransitionRule::new(format!("t{tid}"), from, to, p, condition(rng)));
        tid += 1;
    }
    if rng.random_bool(0.3) {
        config.negative_constraints.push(ForbiddenPattern::edge("s0", format!("s{}", n - 1), "looped"));
    }
    config
}

fn fresh_id(config: &FsmConfig, prefix: &str, rng: &mut impl Rng) -> String {
    loop {
        let id = format!("{prefix}{}", rng.random_range(0..10_000));
        if config.state(&id).is_none() && config.transition(&id).is_none() {
            return id;
        }
    }
}

fn any_state(config: &FsmConfig, rng: &mut impl Rng) -> String {
    config.states.choose(rng).unwrap().id.clone()
}

/// Any of the four ops, aimed at ids that exist; about half apply cleanly.
pub fn random_op(config: &FsmConfig, rng: &mut impl Rng) -> AtomicOp {
    match rng.random_range(0..4) {
        0 => random_flow_add(config, rng),
        1 => random_delete(config, rng),
        2 => random_modify(config, rng),
        _ => random_revise(config, rng),
    }
}

pub fn random_flow_op(config: &FsmConfig, rng: &mut impl Rng) -> AtomicOp {
    match rng.random_range(0..3) {
        0 => random_flow_add(config, rng),
        1 => random_delete(config, rng),
        _ => random_modify(config, rng),
    }
}

pub fn random_revise(config: &FsmConfig, rng: &mut impl Rng) -> AtomicOp {
    AtomicOp::new(OpEdit::ReviseInstruction { state_id: any_state(config, rng), instruction: text(rng) }, "sharpen")
}

pub fn random_flow_add(config: &FsmConfig, rng: &mut impl Rng) -> AtomicOp {
    let id = fresh_id(config, "n", rng);
    let mut state = StateDef::new(id.clone(), "New", text(rng));
    if rng.random_bool(0.2) {
        state = state.terminal();
    }
    let splice = !config.transitions.is_empty() && rng.random_bool(0.5);
    let inbound = if splice {
        let t = config.transitions.choose(rng).unwrap();
        TransitionRule::new(t.id.clone(), t.from_state.clone(), id.clone(), t.priority, t.condition.clone())
    } else {
        let from = any_state(config, rng);
        let p = next_priority(config, &from);
        TransitionRule::new(fresh_id(config, "e", rng), from, id.clone(), p, condition(rng))
    };
    let mut outbound = vec![];
    if !state.is_terminal || rng.random_bool(0.3) {
        let to = if splice && rng.random_bool(0.7) {
            config.transition(&inbound.id).unwrap().to_state.clone()
        } else {
            any_state(config, rng)
        };
        outbound.push(TransitionRule::new(fresh_id(config, "o", rng), id.clone(), to, 0, ConditionSpec::always()));
    }
    AtomicOp::new(OpEdit::AddState { state, inbound: vec![inbound], outbound }, "add a step")
}

pub fn random_delete(config: &FsmConfig, rng: &mut impl Rng) -> AtomicOp {
    let victim = any_state(config, rng);
    let rewiring = config
        .transitions
        .iter()
        .filter(|t| t.to_state == victim && t.from_state != victim)
        .filter_map(|t| match rng.random_range(0..3) {
            0 => Some(Rewire::Delete { transition_id: t.id.clone() }),
            1 => None,
            _ => {
                let to = config.states.iter().map(|s| s.id.clone()).filter(|s| *s != victim).collect::<Vec<_>>();
                to.choose(rng).map(|to| Rewire::Retarget { transition_id: t.id.clone(), to_state: to.clone() })
            }
        })
        .collect();
    AtomicOp::new(OpEdit::DeleteState { state_id: victim, rewiring }, "remove a step")
}

pub fn random_modify(config: &FsmConfig, rng: &mut impl Rng) -> AtomicOp {
    let Some(t) = config.transitions.choose(rng) else {
        return random_revise(config, rng);
    };
    let mut to_state = rng.random_bool(0.5).then(|| any_state(config, rng));
    let condition = rng.random_bool(0.4).then(|| condition(rng));
    let priority = rng.random_bool(0.3).then(|| rng.random_range(0..4));
    if to_state.is_none() && condition.is_none() && priority.is_none() {
        to_state = Some(any_state(config, rng));
    }
    AtomicOp::new(OpEdit::ModifyTransition { transition_id: t.id.clone(), to_state, condition, priority }, "reroute")
}

pub fn unit_vector(rng: &mut impl Rng, dim: usize) -> Vec<f64> {
    let v: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm == 0.0 {
        let mut e = vec![0.0; dim];
        e[0] = 1.0;
        return e;
    }
    v.into_iter().map(|x| x / norm).collect()
}

pub fn random_record(rng: &mut impl Rng, dim: usize) -> ExperienceRecord {
    let config = random_config(rng);
    let outcome = if rng.random_bool(0.6) { Outcome::Success } else { Outcome::Failure };
    let failure_constraints = match outcome {
        Outcome::Failure => vec![ForbiddenPattern::edge("s0", "s1", text(rng))],
        Outcome::Success => vec![],
    };
    ExperienceRecord {
        id: String::new(),
        query_text: text(rng),
        query_embedding: unit_vector(rng, dim),
        outcome,
        op_sequence: vec![random_revise(&config, rng)],
        config_snapshot: config,
        rationale: text(rng),
        failure_constraints,
        created_at: 0,
    }
}
