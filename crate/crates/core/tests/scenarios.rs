use evofsm_core::backends::{FixtureTools, Script, ScriptedChat, ToolRegistry};
use evofsm_core::fsm::{run, HaltReason, RunLimits};
use evofsm_core::harness::{load_dataset, solve, HarnessParams, Mode};
use evofsm_core::scenarios::{default_config, export, world_backends, CASE_ADD_STATE, CASE_REVISE, SCENARIO_NAMES};

#[test]
fn static_case_runs_show_the_failures() {
    let mut b = world_backends();
    let t = run(&default_config(), CASE_ADD_STATE.query, b.chat.as_mut(), &mut b.tools, &RunLimits::default());
    assert_eq!(t.halted_reason, HaltReason::LoopDetected);
    assert_eq!(t.state_sequence(), ["search", "browse", "search", "browse", "search", "browse", "search"]);
    assert_eq!(t.visits("search"), 4);

    let mut b = world_backends();
    let t = run(&default_config(), CASE_REVISE.query, b.chat.as_mut(), &mut b.tools, &RunLimits::default());
    assert_eq!(t.halted_reason, HaltReason::Terminal);
    assert_eq!(t.final_answer.as_deref(), Some("Tesla has high density, BYD uses Blade battery."));
}

#[test]
fn exported_scenario_replays_from_disk() {
    let dir = tempfile::tempdir().unwrap();
    export("case1", dir.path()).unwrap();
    let script = Script::from_json(&std::fs::read_to_string(dir.path().join("script.json")).unwrap()).unwrap();
    let tools = FixtureTools::load_dir(dir.path().join("corpus")).unwrap();
    let config = evofsm_core::deserialize_config(&std::fs::read_to_string(dir.path().join("config.json")).unwrap()).unwrap();
    let items = load_dataset(dir.path().join("dataset.jsonl")).unwrap();
    let mut backends = evofsm_core::Backends::new(
        Box::new(ScriptedChat::new(script).unwrap()),
        ToolRegistry::new(Box::new(tools)),
        Box::new(evofsm_core::memory::HashEmbedder::default()),
    );
    let solved = solve(Mode::Evofsm, &config, &items[0].question, &mut backends, None, &HarnessParams::default()).unwrap();
    assert!(solved.outcome.succeeded);
    assert!(solved.answer().unwrap().contains(&items[0].answer));
}

#[test]
fn rewrite_mode_cannot_add_states() {
    let mut b = world_backends();
    let solved = solve(Mode::Rewrite, &default_config(), CASE_ADD_STATE.query, &mut b, None, &HarnessParams::default()).unwrap();
    assert!(!solved.outcome.succeeded);
    assert_eq!(solved.outcome.final_config.topology(), default_config().topology());
    assert!(solved.outcome.rewrites >= 1);
}

#[test]
fn shipped_fixtures_match_the_built_in_world() {
    let shipped = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures");
    let fresh = tempfile::tempdir().unwrap();
    for name in SCENARIO_NAMES {
        for path in export(name, &fresh.path().join(name)).unwrap() {
            let rel = path.strip_prefix(fresh.path()).unwrap();
            let on_disk = std::fs::read_to_string(shipped.join(rel)).unwrap_or_else(|e| panic!("{}: {e}", rel.display()));
            assert_eq!(on_disk, std::fs::read_to_string(&path).unwrap(), "{} is stale; re-export it", rel.display());
        }
    }
}
