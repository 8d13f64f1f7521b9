//! Built-in mechanical transition predicates.
//!
//! | name                      | args                   | holds when                                        |
//! |---------------------------|------------------------|---------------------------------------------------|
//! | `evidence_count_at_least` | `[n]`                  | at least `n` tool calls returned a payload        |
//! | `steps_exceeded`          | `[n]`                  | more than `n` steps have executed                 |
//! | `last_output_contains`    | `[text]`               | the latest step's output contains `text`          |
//! | `visit_count_exceeded`    | `[n]` or `[state, n]`  | the state (default: current) was visited `> n` times |

use serde_json::Value;

use super::Trajectory;

pub const BUILTINS: [&str; 4] = [
    "evidence_count_at_least",
    "steps_exceeded",
    "last_output_contains",
    "visit_count_exceeded",
];

enum Predicate<'a> {
    EvidenceAtLeast(usize),
    StepsExceeded(usize),
    LastOutputContains(&'a str),
    VisitsExceeded(Option<&'a str>, usize),
}

fn count(v: &Value) -> Option<usize> {
    v.as_u64().map(|n| n as usize)
}

fn resolve<'a>(name: &str, args: &'a [Value]) -> Result<Predicate<'a>, String> {
    let bad = || format!("bad arguments for {name}: {args:?}");
    match name {
        "evidence_count_at_least" => match args {
            [n] => count(n).map(Predicate::EvidenceAtLeast).ok_or_else(bad),
            _ => Err(bad()),
        },
        "steps_exceeded" => match args {
            [n] => count(n).map(Predicate::StepsExceeded).ok_or_else(bad),
            _ => Err(bad()),
        },
        "last_output_contains" => match args {
            [Value::String(s)] => Ok(Predicate::LastOutputContains(s)),
            _ => Err(bad()),
        },
        "visit_count_exceeded" => match args {
            [n] => count(n).map(|n| Predicate::VisitsExceeded(None, n)).ok_or_else(bad),
            [Value::String(s), n] => count(n)
                .map(|n| Predicate::VisitsExceeded(Some(s.as_str()), n))
                .ok_or_else(bad),
            _ => Err(bad()),
        },
        other => Err(format!("unknown predicate {other:?}")),
    }
}

/// Resolves `name` and its arguments against the registry.
pub fn check(name: &str, args: &[Value]) -> Result<(), String> {
    resolve(name, args).map(|_| ())
}

pub fn evaluate(name: &str, args: &[Value], trajectory: &Trajectory, current: &str) -> Result<bool, String> {
    Ok(match resolve(name, args)? {
        Predicate::EvidenceAtLeast(n) => trajectory.evidence_count() >= n,
        Predicate::StepsExceeded(n) => trajectory.steps.len() > n,
        Predicate::LastOutputContains(s) => trajectory
            .steps
            .last()
            .is_some_and(|step| step.agent_output.contains(s)),
        Predicate::VisitsExceeded(state, n) => trajectory.visits(state.unwrap_or(current)) > n,
    })
}
