//! One PASS/FAIL line per acceptance criterion.

mod common;

use std::io::Write;
use std::time::Instant;

use common::Check;

fn report(name: &str, f: fn() -> Check) -> bool {
    let start = Instant::now();
    let outcome = f();
    let secs = start.elapsed().as_secs_f64();
    // Written past the test harness capture so the lines always show.
    let mut out = std::io::stdout().lock();
    let pass = outcome.is_ok();
    let detail = match outcome {
        Ok(d) | Err(d) => d,
    };
    let _ = writeln!(out, "{} {name} ({secs:.1} s): {detail}", if pass { "PASS" } else { "FAIL" });
    let _ = out.flush();
    pass
}

#[test]
fn acceptance() {
    let criteria: [(&str, fn() -> Check); 8] = [
        ("gradient correctness", common::gradient_criterion),
        ("geometry oracles", common::geometry_criterion),
        ("clustering oracles", common::clustering_criterion),
        ("orientation search", common::orientation_criterion),
        ("loss identities", common::loss_criterion),
        ("end-to-end regression", common::e2e_criterion),
        ("pipeline determinism", common::determinism_criterion),
        ("configuration fidelity", common::config_criterion),
    ];
    let failed: Vec<&str> = criteria.iter().filter(|(n, f)| !report(n, *f)).map(|(n, _)| *n).collect();
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
