// SPDX-License-Identifier: MIT OR Apache-2.0

//! Runs in its own binary: the forward counter is process-wide.

mod common;

use tvlab::{Pipeline, RunConfig};
use tvlab_core::model::forward_count;

#[test]
fn rerun_hits_every_cache_and_reproduces_csvs() {
    let tmp = tempfile::tempdir().unwrap();
    let out_a = tmp.path().join("a");
    let cfg = RunConfig::parse(&common::tiny_config(&out_a)).unwrap();

    let mut first = Pipeline::new(cfg.clone()).unwrap();
    first.quiet = true;
    let report = first.run().unwrap();
    assert!(first.events.iter().all(|e| !e.cached));
    let table = std::fs::read_to_string(report.join("table.md")).unwrap();
    for row in ["| one-shot |", "| reinforce (quadrant) |", "| one-shot + reinforce (quadrant) |", "multi-task"] {
        assert!(table.contains(row), "missing {row} in\n{table}");
    }

    let before = forward_count();
    let mut second = Pipeline::new(cfg.clone()).unwrap();
    second.quiet = true;
    assert_eq!(second.run().unwrap(), report);
    assert_eq!(forward_count() - before, 0, "cached rerun ran the model");
    assert!(!second.events.is_empty() && second.events.iter().all(|e| e.cached));

    // a fresh output root recomputes everything and lands on the same bytes
    let out_b = tmp.path().join("b");
    let mut third = Pipeline::new(RunConfig { output: out_b.clone(), ..cfg }).unwrap();
    third.quiet = true;
    third.run().unwrap();
    let a = common::files_with_ext(&out_a, "csv");
    let b = common::files_with_ext(&out_b, "csv");
    assert!(a.len() > 40);
    assert_eq!(a.keys().collect::<Vec<_>>(), b.keys().collect::<Vec<_>>());
    for (k, v) in &a {
        assert!(b[k] == *v, "{} differs between runs", k.display());
    }
}
