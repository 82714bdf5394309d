// SPDX-License-Identifier: MIT OR Apache-2.0

//! Run configuration: one JSON document, hashed for provenance and caching.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use tvlab_core::lab::{Granularity, StageFilter};
use tvlab_core::model::{ModelConfig, TrainHyper};
use tvlab_core::search::{EvalMode, GrsConfig, ReinforceConfig};
use tvlab_core::tasks::{SplitSizes, TaskId};

use crate::error::RunError;

/// Environment variable overriding the configured output root.
pub const OUT_ENV: &str = "TVLAB_OUT";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CmaConfig {
    /// Training images averaged per group.
    pub n_images: usize,
    /// Fraction of groups kept.
    pub fraction: f64,
}

impl Default for CmaConfig {
    fn default() -> Self {
        CmaConfig { n_images: 10, fraction: 0.25 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct SizeConfig {
    /// Groups to select; when absent a quarter of the groups, or the size
    /// of the main selection for pipeline baselines.
    pub count: Option<usize>,
}

/// Selection algorithm and its settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "kebab-case")]
pub enum Algorithm {
    Reinforce(ReinforceConfig),
    Grs(GrsConfig),
    Cma(CmaConfig),
    RandomQuadrants(SizeConfig),
    TopQuadrants(SizeConfig),
    RandomKLayers(GrsConfig),
}

impl Default for Algorithm {
    fn default() -> Self {
        Algorithm::Reinforce(ReinforceConfig::default())
    }
}

impl Algorithm {
    pub fn name(&self) -> &'static str {
        match self {
            Algorithm::Reinforce(_) => "reinforce",
            Algorithm::Grs(_) => "grs",
            Algorithm::Cma(_) => "cma",
            Algorithm::RandomQuadrants(_) => "random-quadrants",
            Algorithm::TopQuadrants(_) => "top-quadrants",
            Algorithm::RandomKLayers(_) => "random-k-layers",
        }
    }

    /// Default settings for an algorithm named on the command line.
    pub fn from_name(name: &str) -> Option<Self> {
        Some(match name {
            "reinforce" => Algorithm::Reinforce(ReinforceConfig::default()),
            "grs" => Algorithm::Grs(GrsConfig::default()),
            "cma" => Algorithm::Cma(CmaConfig::default()),
            "random-quadrants" => Algorithm::RandomQuadrants(SizeConfig::default()),
            "top-quadrants" => Algorithm::TopQuadrants(SizeConfig::default()),
            "random-k-layers" => Algorithm::RandomKLayers(GrsConfig::default()),
            _ => return None,
        })
    }

    pub fn seed(&self) -> u64 {
        match self {
            Algorithm::Reinforce(c) => c.seed,
            Algorithm::Grs(c) | Algorithm::RandomKLayers(c) => c.seed,
            _ => 0,
        }
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        let mut a = self.clone();
        match &mut a {
            Algorithm::Reinforce(c) => c.seed = seed,
            Algorithm::Grs(c) | Algorithm::RandomKLayers(c) => c.seed = seed,
            _ => {}
        }
        a
    }
}

/// Size-matched comparison selections evaluated next to the main one.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BaselineName {
    RandomQuadrants,
    TopQuadrants,
    RandomKLayers,
}

impl BaselineName {
    pub fn name(self) -> &'static str {
        match self {
            BaselineName::RandomQuadrants => "random-quadrants",
            BaselineName::TopQuadrants => "top-quadrants",
            BaselineName::RandomKLayers => "random-k-layers",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    /// JSON model config; when absent `model` is used.
    pub model_config: Option<PathBuf>,
    pub model: ModelConfig,
    /// Four existing TVDS split files; generated into the output when absent.
    pub datasets: Option<Vec<PathBuf>>,
    pub splits: Vec<u8>,
    /// Tasks searched and evaluated.
    pub tasks: Vec<TaskId>,
    pub sizes: SplitSizes,
    /// Size of the mixed-task pool the model is trained on.
    pub pretrain_samples: usize,
    pub train: TrainHyper,
    /// Training samples per task recorded into activation stores.
    pub collect_samples: usize,
    pub granularity: Granularity,
    pub stages: StageFilter,
    pub algorithm: Algorithm,
    pub baselines: Vec<BaselineName>,
    /// Also run one search shared by all tasks.
    pub multi_task: bool,
    pub eval_modes: Vec<EvalMode>,
    pub output: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            model_config: None,
            model: ModelConfig::default(),
            datasets: None,
            splits: vec![0, 1, 2, 3],
            tasks: TaskId::EVAL.to_vec(),
            sizes: SplitSizes::default(),
            pretrain_samples: 2000,
            train: TrainHyper { steps: 3000, ..TrainHyper::default() },
            collect_samples: 100,
            granularity: Granularity::Quadrant,
            stages: StageFilter::Both,
            algorithm: Algorithm::default(),
            baselines: vec![BaselineName::RandomQuadrants, BaselineName::TopQuadrants],
            multi_task: false,
            eval_modes: vec![EvalMode::QueryOnly],
            output: PathBuf::from("tvlab-out"),
        }
    }
}

fn config_err(msg: impl Into<String>) -> RunError {
    RunError::Config(msg.into())
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, RunError> {
        let text =
            std::fs::read_to_string(path).map_err(|e| config_err(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self, RunError> {
        let cfg: RunConfig = serde_json::from_str(text).map_err(|e| config_err(format!("bad config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), RunError> {
        if self.splits.is_empty() || self.splits.iter().any(|&s| s > 3) {
            return Err(config_err("splits must be a non-empty subset of 0..=3"));
        }
        if has_duplicates(&self.splits) || has_duplicates(&self.tasks) {
            return Err(config_err("splits and tasks must not repeat"));
        }
        if self.tasks.is_empty() {
            return Err(config_err("at least one task is required"));
        }
        if let Some(ds) = &self.datasets {
            if ds.len() != 4 {
                return Err(config_err(format!("datasets lists {} files, expected 4", ds.len())));
            }
            for p in ds {
                if !p.is_file() {
                    return Err(config_err(format!("dataset {} does not exist", p.display())));
                }
            }
        }
        let model = self.resolved_model()?;
        if model.image_side < 4 {
            return Err(config_err("image side must be at least 4"));
        }
        if self.sizes.val == 0 || self.sizes.test == 0 {
            return Err(config_err("val and test parts must not be empty"));
        }
        if self.collect_samples < 2 || self.collect_samples > self.sizes.train {
            return Err(config_err(format!("collect_samples must lie in 2..={}", self.sizes.train)));
        }
        if self.pretrain_samples == 0 || self.train.batch == 0 {
            return Err(config_err("pretrain_samples and train.batch must be positive"));
        }
        if self.multi_task && self.tasks.len() < 2 {
            return Err(config_err("multi_task needs at least two tasks"));
        }
        if self.multi_task && !matches!(self.algorithm, Algorithm::Reinforce(_)) {
            return Err(config_err("multi_task is only defined for the reinforce algorithm"));
        }
        match &self.algorithm {
            Algorithm::Reinforce(c) => c.validate().map_err(|e| config_err(e.to_string()))?,
            Algorithm::Grs(c) | Algorithm::RandomKLayers(c) if !(0.0..1.0).contains(&c.p) => {
                return Err(config_err("grs p must lie in [0, 1)"))
            }
            Algorithm::Cma(c) if !(0.0..=1.0).contains(&c.fraction) || c.n_images == 0 => {
                return Err(config_err("cma needs n_images > 0 and fraction in [0, 1]"))
            }
            _ => {}
        }
        if self.eval_modes.is_empty() {
            return Err(config_err("eval_modes must not be empty"));
        }
        Ok(())
    }

    pub fn resolved_model(&self) -> Result<ModelConfig, RunError> {
        let m = match &self.model_config {
            None => self.model,
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| config_err(format!("cannot read model config {}: {e}", p.display())))?;
                serde_json::from_str(&text).map_err(|e| config_err(format!("bad model config: {e}")))?
            }
        };
        m.validate().map_err(|e| config_err(e.to_string()))?;
        Ok(m)
    }

    /// Output root, honouring the environment override.
    pub fn output_root(&self) -> PathBuf {
        std::env::var_os(OUT_ENV).map(PathBuf::from).unwrap_or_else(|| self.output.clone())
    }

    /// Content of the config that determines results: referenced files are
    /// replaced by their content and the output location is dropped.
    pub fn hash_input(&self) -> Result<serde_json::Value, RunError> {
        let mut c = self.clone();
        c.model = self.resolved_model()?;
        c.model_config = None;
        c.output = PathBuf::new();
        let mut v = serde_json::to_value(&c).map_err(|e| config_err(e.to_string()))?;
        if let Some(ds) = &self.datasets {
            let mut digests = Vec::new();
            for p in ds {
                let bytes = std::fs::read(p).map_err(|e| config_err(format!("cannot read {}: {e}", p.display())))?;
                digests.push(serde_json::Value::String(sha256_hex(&bytes)));
            }
            v["datasets"] = serde_json::Value::Array(digests);
        }
        Ok(v)
    }

    pub fn hash(&self) -> Result<String, RunError> {
        Ok(sha256_hex(self.hash_input()?.to_string().as_bytes()))
    }
}

fn has_duplicates<T: Ord + Clone>(xs: &[T]) -> bool {
    let mut v = xs.to_vec();
    v.sort();
    v.windows(2).any(|w| w[0] == w[1])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_document_gives_defaults() {
        let c = RunConfig::parse("{}").unwrap();
        assert_eq!(c, RunConfig::default());
    }

    #[test]
    fn algorithm_blocks_parse_with_partial_fields() {
        let c = RunConfig::parse(r#"{"algorithm": {"name": "reinforce", "steps": 40}}"#).unwrap();
        match c.algorithm {
            Algorithm::Reinforce(r) => {
                assert_eq!(r.steps, 40);
                assert_eq!(r.lr, 0.1);
            }
            other => panic!("{other:?}"),
        }
        let g = RunConfig::parse(r#"{"algorithm": {"name": "grs", "k": 3}}"#).unwrap();
        assert_eq!(g.algorithm.name(), "grs");
    }

    #[test]
    fn invalid_documents_are_config_errors() {
        for bad in [
            r#"{"splits": [4]}"#,
            r#"{"tasks": []}"#,
            r#"{"unknown": 1}"#,
            r#"{"datasets": ["/nonexistent/a", "b", "c", "d"]}"#,
            r#"{"model": {"d_model": 30}}"#,
            r#"{"collect_samples": 1}"#,
            r#"{"algorithm": {"name": "reinforce", "lr": -1}}"#,
            r#"{"tasks": ["segmentation"], "multi_task": true}"#,
            "not json",
        ] {
            let e = RunConfig::parse(bad).unwrap_err();
            assert_eq!(e.exit_code(), 2, "{bad}");
        }
    }

    #[test]
    fn hash_ignores_output_but_not_content() {
        let a = RunConfig::default();
        let b = RunConfig { output: "elsewhere".into(), ..RunConfig::default() };
        let c = RunConfig { seed: 1, ..RunConfig::default() };
        assert_eq!(a.hash().unwrap(), b.hash().unwrap());
        assert_ne!(a.hash().unwrap(), c.hash().unwrap());
        assert_eq!(a.hash().unwrap().len(), 64);
    }
}
