// SPDX-License-Identifier: MIT OR Apache-2.0
#![allow(dead_code)]

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

/// A run small enough for tests: two splits, a few samples, short searches.
pub fn tiny_config(out: &Path) -> String {
    format!(
        r#"{{
  "seed": 3,
  "splits": [0, 1],
  "sizes": {{"train": 12, "val": 4, "test": 4}},
  "pretrain_samples": 40,
  "train": {{"steps": 20}},
  "collect_samples": 6,
  "algorithm": {{"name": "reinforce", "steps": 6, "samples_per_iter": 4, "images_per_iter": 2,
                 "ckpt_every": 3, "final_samples": 4}},
  "multi_task": true,
  "eval_modes": ["query-only", "one-shot-plus-tv"],
  "output": {:?}
}}"#,
        out.display().to_string()
    )
}

pub fn write_config(dir: &Path, text: &str) -> PathBuf {
    let p = dir.join("config.json");
    std::fs::write(&p, text).unwrap();
    p
}

/// Relative path → bytes of every file with extension `ext` below `root`.
pub fn files_with_ext(root: &Path, ext: &str) -> BTreeMap<PathBuf, Vec<u8>> {
    fn walk(root: &Path, dir: &Path, ext: &str, out: &mut BTreeMap<PathBuf, Vec<u8>>) {
        for e in std::fs::read_dir(dir).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                walk(root, &p, ext, out);
            } else if p.extension().is_some_and(|x| x == ext) {
                out.insert(p.strip_prefix(root).unwrap().to_path_buf(), std::fs::read(&p).unwrap());
            }
        }
    }
    let mut out = BTreeMap::new();
    walk(root, root, ext, &mut out);
    out
}
