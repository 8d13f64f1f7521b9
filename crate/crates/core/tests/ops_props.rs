mod common;

use evofsm_core::evolution::{OpRejectCode, Rewire};
use evofsm_core::fsm::ForbiddenPattern;
use evofsm_core::{apply_op, deserialize_config, serialize_config, undo, validate_config, AtomicOp, OpEdit, StateDef};
use evofsm_core::{ConditionSpec, TransitionRule};
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn accepted_ops_stay_valid_and_undo(seed in any::<u64>()) {
        let mut rng = common::rng(seed);
        let config = common::random_config(&mut rng);
        prop_assert!(validate_config(&config).is_valid());
        let op = common::random_op(&config, &mut rng);
        if let Ok((next, inverse)) = apply_op(&config, &op) {
            prop_assert!(validate_config(&next).is_valid());
            prop_assert_eq!(next.version, config.version + 1);
            prop_assert!(undo(&next, &inverse).unwrap().structurally_eq(&config));
        }
    }

    #[test]
    fn config_serialization_round_trips(seed in any::<u64>()) {
        let config = common::random_config(&mut common::rng(seed));
        prop_assert_eq!(deserialize_config(&serialize_config(&config)).unwrap(), config);
    }

    #[test]
    fn op_json_round_trips(seed in any::<u64>()) {
        let mut rng = common::rng(seed);
        let config = common::random_config(&mut rng);
        let op = common::random_op(&config, &mut rng);
        let back: AtomicOp = serde_json::from_str(&serde_json::to_string(&op).unwrap()).unwrap();
        prop_assert_eq!(back, op);
    }
}

fn ten_state_config() -> evofsm_core::FsmConfig {
    let mut c = evofsm_core::scenarios::default_config();
    for i in 0..7 {
        let id = format!("x{i}");
        c.states.push(StateDef::new(&id, "X", "pad"));
        c.transitions.push(TransitionRule::new(format!("to_{id}"), "analysis", &id, i, ConditionSpec::always()));
        c.transitions.push(TransitionRule::new(format!("{id}_back"), &id, "analysis", 0, ConditionSpec::always()));
    }
    c
}

#[test]
fn add_state_at_cap_is_rejected() {
    let c = ten_state_config();
    assert_eq!(c.states.len(), 10);
    assert!(validate_config(&c).is_valid());
    let op = AtomicOp::new(
        OpEdit::AddState {
            state: StateDef::new("extra", "Extra", "x"),
            inbound: vec![TransitionRule::new("in", "search", "extra", 5, ConditionSpec::always())],
            outbound: vec![TransitionRule::new("out", "extra", "analysis", 0, ConditionSpec::always())],
        },
        "",
    );
    assert_eq!(apply_op(&c, &op).unwrap_err().code, OpRejectCode::StateCap);
}

#[test]
fn delete_guards() {
    let c = evofsm_core::scenarios::default_config();
    let del = |id: &str, rewiring| AtomicOp::new(OpEdit::DeleteState { state_id: id.into(), rewiring }, "");
    assert_eq!(apply_op(&c, &del("search", vec![])).unwrap_err().code, OpRejectCode::DeleteInitial);
    assert_eq!(apply_op(&c, &del("analysis", vec![])).unwrap_err().code, OpRejectCode::DeleteLastTerminal);
    assert_eq!(apply_op(&c, &del("nope", vec![])).unwrap_err().code, OpRejectCode::UnknownTarget);
    // Deleting browse without rewiring leaves search unable to reach a terminal.
    let err = apply_op(&c, &del("browse", vec![])).unwrap_err();
    assert_eq!(err.code, OpRejectCode::WouldOrphan);
    let rewired = del("browse", vec![Rewire::Retarget { transition_id: "search_to_browse".into(), to_state: "analysis".into() }]);
    let (next, inverse) = apply_op(&c, &rewired).unwrap();
    assert!(next.state("browse").is_none());
    assert!(undo(&next, &inverse).unwrap().structurally_eq(&c));
}

#[test]
fn memory_blocks_recreating_a_forbidden_edge() {
    let mut c = evofsm_core::scenarios::default_config();
    c.negative_constraints.push(ForbiddenPattern::edge("browse", "search", "looped"));
    let op = AtomicOp::new(
        OpEdit::ModifyTransition {
            transition_id: "browse_to_analysis".into(),
            to_state: Some("search".into()),
            condition: None,
            priority: None,
        },
        "",
    );
    assert_eq!(apply_op(&c, &op).unwrap_err().code, OpRejectCode::ForbiddenByMemory);
}
