//! Fault injection at every internal writer step.

mod common;

use common::scenario::{crash_and_recover, reference, sweep};
use qdh_hub::journal::CrashPoint;

#[test]
fn every_plain_crash_point_recovers_to_a_prefix() {
    let (states, total) = reference();
    assert!(total > 20, "script too short: {total} steps");
    for after_steps in 0..total {
        let point = CrashPoint {
            after_steps,
            torn: false,
            abort: false,
        };
        let out = crash_and_recover(point, &states).unwrap_or_else(|e| panic!("{point:?}: {e}"));
        assert!(out.crashed, "{point:?} never fired");
        assert!(out.recovered >= out.succeeded);
    }
    // Past the end nothing fires and everything commits.
    let out = crash_and_recover(
        CrashPoint {
            after_steps: total,
            torn: false,
            abort: false,
        },
        &states,
    )
    .unwrap();
    assert!(!out.crashed);
    assert_eq!(out.recovered, states.len() - 1);
}

#[test]
fn torn_appends_recover_to_a_prefix() {
    let points = sweep(100).unwrap();
    assert!(points.iter().any(|(p, _)| p.torn));
}
