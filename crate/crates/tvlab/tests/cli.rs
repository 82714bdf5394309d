// SPDX-License-Identifier: MIT OR Apache-2.0

mod common;

use std::path::Path;
use std::process::Command;

use tvlab::formats::{json::read_json, json::SelectionFile, tvds};
use tvlab_core::tasks::{Part, TaskId};

fn tvlab(args: &[&str]) -> (i32, String, String) {
    let out = Command::new(env!("CARGO_BIN_EXE_tvlab"))
        .args(args)
        .env_remove("TVLAB_OUT")
        .output()
        .unwrap();
    (
        out.status.code().unwrap(),
        String::from_utf8(out.stdout).unwrap(),
        String::from_utf8(out.stderr).unwrap(),
    )
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn gen_data_is_byte_identical_and_counts_match() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = common::write_config(tmp.path(), &common::tiny_config(&tmp.path().join("unused")));
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    for out in [&a, &b] {
        let (code, _, err) = tvlab(&["-q", "gen-data", "-c", s(&cfg), "--out", s(out)]);
        assert_eq!(code, 0, "{err}");
    }
    let fa = common::files_with_ext(&a, "tvds");
    let fb = common::files_with_ext(&b, "tvds");
    assert_eq!(fa.len(), 4);
    assert_eq!(fa, fb);
    for bytes in fa.values() {
        let header = tvds::read_header(bytes).unwrap();
        let (split, _) = tvds::decode(bytes).unwrap();
        assert_eq!(header.runs, tvds::runs(&split));
        for task in TaskId::ALL {
            assert_eq!(split.of_task(Part::Train, task).len(), 12);
            assert_eq!(split.of_task(Part::Test, task).len(), 4);
        }
    }
}

#[test]
fn config_errors_exit_2() {
    let tmp = tempfile::tempdir().unwrap();
    let (code, _, err) = tvlab(&["pipeline", "-c", s(&tmp.path().join("missing.json"))]);
    assert_eq!(code, 2, "{err}");
    let bad = common::write_config(tmp.path(), r#"{"splits": [7]}"#);
    assert_eq!(tvlab(&["pipeline", "-c", s(&bad)]).0, 2);
    assert_eq!(tvlab(&["search", "--algo", "simulated-annealing", "-c", s(&bad)]).0, 2);
    assert_eq!(tvlab(&["no-such-command"]).0, 2);
    assert_eq!(tvlab(&["--help"]).0, 0);
}

#[test]
fn corrupt_dataset_is_a_stage_failure() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg_path = common::write_config(tmp.path(), &common::tiny_config(&tmp.path().join("gen")));
    assert_eq!(tvlab(&["-q", "gen-data", "-c", s(&cfg_path)]).0, 0);
    let files: Vec<_> = common::files_with_ext(&tmp.path().join("gen"), "tvds").into_keys().collect();
    let mut paths: Vec<String> = files.iter().map(|f| s(&tmp.path().join("gen").join(f)).to_string()).collect();
    paths.sort();
    let broken = tmp.path().join("broken.tvds");
    let bytes = std::fs::read(&paths[1]).unwrap();
    std::fs::write(&broken, &bytes[..bytes.len() / 2]).unwrap();
    paths[1] = s(&broken).to_string();
    let text = format!(
        r#"{{"splits": [1], "sizes": {{"train": 12, "val": 4, "test": 4}}, "collect_samples": 6,
            "pretrain_samples": 10, "train": {{"steps": 2}}, "seed": 3, "datasets": {paths:?},
            "output": {:?}}}"#,
        s(&tmp.path().join("run"))
    );
    let cfg = common::write_config(tmp.path(), &text);
    let (code, _, err) = tvlab(&["-q", "collect", "-c", s(&cfg)]);
    assert_eq!(code, 3, "{err}");
    assert!(err.contains("gen-data"), "{err}");
}

#[test]
fn planted_backend_recovers_the_planted_set() {
    let tmp = tempfile::tempdir().unwrap();
    let truth = [1u32, 5, 9];
    let effect: Vec<f64> = (0..12).map(|g| if truth.contains(&g) { 0.3 } else { 0.2 }).collect();
    let planted = serde_json::json!({
        "universe": (0..12).collect::<Vec<u32>>(),
        "tasks": [{"truth": truth, "effect": effect}],
        "base_loss": 1.0,
        "noise_sigma": 0.05
    });
    let path = tmp.path().join("planted.json");
    std::fs::write(&path, planted.to_string()).unwrap();
    for algo in ["reinforce", "grs", "cma"] {
        let (code, stdout, err) =
            tvlab(&["-q", "search", "--backend", "planted", "--planted", s(&path), "--algo", algo, "--out", s(tmp.path())]);
        assert_eq!(code, 0, "{err}");
        let dir = Path::new(stdout.trim());
        let sel: SelectionFile = read_json(&dir.join("selection.json")).unwrap();
        let chosen: Vec<usize> = sel.groups.iter().filter(|g| g.selected).map(|g| g.id).collect();
        assert_eq!(chosen, vec![1, 5, 9], "{algo}");
        assert_eq!(sel.meta.seed, 0);
    }
    let (code, _, _) = tvlab(&["search", "--backend", "planted", "--planted", s(&path), "--algo", "top-quadrants"]);
    assert_eq!(code, 2);
}

#[test]
fn env_var_sets_the_output_root() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = common::write_config(tmp.path(), &common::tiny_config(&tmp.path().join("configured")));
    let out = Command::new(env!("CARGO_BIN_EXE_tvlab"))
        .args(["-q", "gen-data", "-c", s(&cfg)])
        .env("TVLAB_OUT", tmp.path().join("from-env"))
        .output()
        .unwrap();
    assert!(out.status.success());
    assert_eq!(common::files_with_ext(&tmp.path().join("from-env"), "tvds").len(), 4);
    assert!(!tmp.path().join("configured").exists());
}
