// SPDX-License-Identifier: MIT OR Apache-2.0

use alloc::format;
use alloc::vec::Vec;

use crate::error::{invalid, Error, Result};
use crate::lab::{MeanActivationTable, SiteGrouping};
use crate::model::{forward, PatchSet, SiteAddress, SiteFilter, Weights};
use crate::numerics::Rng;
use crate::planted::PlantedConfig;
use crate::tasks::{assemble_prompt, loss_mse, GridImage, Metric, PromptMode, TaskId, TripletSample};

/// What a selection search optimises. Losses are lower-is-better.
pub trait Objective {
    fn n_groups(&self) -> usize;
    /// Global layer of a group, for layer-ranked searches.
    fn group_layer(&self, group: usize) -> usize;
    fn n_tasks(&self) -> usize;
    /// Training images available to rollouts of `task`.
    fn n_train(&self, task: usize) -> usize;
    /// Loss of one rollout of `mask` on training image `image`.
    fn rollout_loss(&self, task: usize, mask: &[bool], image: usize, rng: &mut Rng) -> Result<f64>;
    /// Deterministic held-out loss of `mask`.
    fn heldout_loss(&self, task: usize, mask: &[bool]) -> Result<f64>;
}

/// Additive planted objective.
///
/// Rollouts draw fresh noise. The held-out loss averages `heldout_draws`
/// noisy evaluations from a stream keyed by the mask, so it is
/// deterministic but not exact; `heldout_draws = 0` gives the expected loss.
#[derive(Debug, Clone)]
pub struct PlantedObjective {
    pub config: PlantedConfig,
    pub n_train: usize,
    pub heldout_draws: usize,
    pub seed: u64,
}

impl PlantedObjective {
    pub fn new(config: PlantedConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        Ok(PlantedObjective { config, n_train: 100, heldout_draws: 10, seed })
    }
}

fn mask_key(mask: &[bool]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for chunk in mask.chunks(8) {
        let byte = chunk.iter().enumerate().fold(0u8, |b, (i, &m)| b | (u8::from(m) << i));
        h ^= u64::from(byte);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h ^ mask.len() as u64
}

impl Objective for PlantedObjective {
    fn n_groups(&self) -> usize {
        self.config.n_groups()
    }

    fn group_layer(&self, group: usize) -> usize {
        self.config.layer(group)
    }

    fn n_tasks(&self) -> usize {
        self.config.tasks.len()
    }

    fn n_train(&self, _task: usize) -> usize {
        self.n_train
    }

    fn rollout_loss(&self, task: usize, mask: &[bool], _image: usize, rng: &mut Rng) -> Result<f64> {
        Ok(self.config.noisy_loss(task, mask, rng)?.0)
    }

    fn heldout_loss(&self, task: usize, mask: &[bool]) -> Result<f64> {
        if self.heldout_draws == 0 {
            return self.config.expected_loss(task, mask);
        }
        let mut rng = Rng::new(self.seed).child_named("heldout").child_path(&[task as u64, mask_key(mask)]);
        let mut total = 0.0;
        for _ in 0..self.heldout_draws {
            total += self.config.noisy_loss(task, mask, &mut rng)?.0;
        }
        Ok(total / self.heldout_draws as f64)
    }
}

/// How a patched prediction is produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "kebab-case"))]
pub enum EvalMode {
    /// Query image only, steered by the patch.
    QueryOnly,
    /// Plain one-shot prompt; any patch is ignored.
    OneShot,
    /// One-shot prompt with the patch applied on top.
    OneShotPlusTv,
}

impl EvalMode {
    pub const ALL: [EvalMode; 3] = [EvalMode::QueryOnly, EvalMode::OneShot, EvalMode::OneShotPlusTv];

    pub fn name(self) -> &'static str {
        match self {
            EvalMode::QueryOnly => "query-only",
            EvalMode::OneShot => "one-shot",
            EvalMode::OneShotPlusTv => "one-shot-plus-tv",
        }
    }
}

impl core::str::FromStr for EvalMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        EvalMode::ALL
            .into_iter()
            .find(|m| m.name() == s || m.name().replace('-', "_") == s)
            .ok_or_else(|| invalid!("unknown eval mode {s:?}"))
    }
}

/// Model prediction for one sample under `mode`.
pub fn predict(w: &Weights, sample: &TripletSample, patch: &PatchSet, mode: EvalMode) -> Result<GridImage> {
    let (prompt_mode, patch) = match mode {
        EvalMode::QueryOnly => (PromptMode::QueryOnly, patch),
        EvalMode::OneShot => (PromptMode::OneShot, &PatchSet::new()),
        EvalMode::OneShotPlusTv => (PromptMode::OneShot, patch),
    };
    let prompt = assemble_prompt(sample, prompt_mode, w.config.patch_side)?;
    Ok(forward(w, &prompt, patch, &SiteFilter::Nothing)?.output)
}

/// Data of one task for the model objective.
#[derive(Debug, Clone)]
pub struct ModelTask {
    pub task: TaskId,
    /// Rollout images.
    pub train: Vec<TripletSample>,
    /// Images scored by the held-out loss.
    pub heldout: Vec<TripletSample>,
}

/// The toy transformer as a search objective.
///
/// Rollout loss is the pixel MSE of the patched prediction; the held-out
/// loss is the task metric turned into a loss (`1 - mIoU` or MSE).
#[derive(Debug, Clone)]
pub struct ModelObjective<'a> {
    pub weights: &'a Weights,
    pub mode: EvalMode,
    pub tasks: Vec<ModelTask>,
    group_layers: Vec<usize>,
    /// `[task][group]` patch vectors.
    group_patches: Vec<Vec<Vec<(SiteAddress, Vec<f64>)>>>,
}

impl<'a> ModelObjective<'a> {
    pub fn new(
        weights: &'a Weights,
        grouping: &SiteGrouping,
        means: &MeanActivationTable,
        tasks: Vec<ModelTask>,
        mode: EvalMode,
    ) -> Result<Self> {
        let mut group_patches = Vec::with_capacity(tasks.len());
        for t in &tasks {
            if t.train.is_empty() || t.heldout.is_empty() {
                return Err(invalid!("task {} needs training and held-out images", t.task));
            }
            let mut per_group = Vec::with_capacity(grouping.len());
            for g in &grouping.groups {
                let patch = means.patch_for(t.task, &g.members)?;
                per_group.push(patch.into_iter().collect());
            }
            group_patches.push(per_group);
        }
        Ok(ModelObjective {
            weights,
            mode,
            tasks,
            group_layers: grouping.groups.iter().map(|g| g.global_layer).collect(),
            group_patches,
        })
    }

    /// Patch for `mask` with the means of `task`.
    pub fn patch(&self, task: usize, mask: &[bool]) -> Result<PatchSet> {
        let groups = self.group_patches.get(task).ok_or_else(|| invalid!("task index {task}"))?;
        if mask.len() != groups.len() {
            return Err(invalid!("mask of {} for {} groups", mask.len(), groups.len()));
        }
        let mut out = PatchSet::new();
        for (sites, _) in groups.iter().zip(mask).filter(|(_, m)| **m) {
            for (s, v) in sites {
                out.insert(*s, v.clone());
            }
        }
        Ok(out)
    }

    /// Mean task metric of `mask` over `samples`.
    pub fn score(&self, task: usize, mask: &[bool], samples: &[TripletSample]) -> Result<f64> {
        let metric = self.tasks[task].task.metric();
        let patch = self.patch(task, mask)?;
        mean_metric(self.weights, samples, &patch, self.mode, metric)
    }
}

fn mean_metric(w: &Weights, samples: &[TripletSample], patch: &PatchSet, mode: EvalMode, metric: Metric) -> Result<f64> {
    if samples.is_empty() {
        return Err(invalid!("no samples to evaluate"));
    }
    let mut total = 0.0;
    for s in samples {
        total += metric.score(&predict(w, s, patch, mode)?, &s.y_q)?;
    }
    Ok(total / samples.len() as f64)
}

impl Objective for ModelObjective<'_> {
    fn n_groups(&self) -> usize {
        self.group_layers.len()
    }

    fn group_layer(&self, group: usize) -> usize {
        self.group_layers[group]
    }

    fn n_tasks(&self) -> usize {
        self.tasks.len()
    }

    fn n_train(&self, task: usize) -> usize {
        self.tasks[task].train.len()
    }

    fn rollout_loss(&self, task: usize, mask: &[bool], image: usize, _rng: &mut Rng) -> Result<f64> {
        let sample = self.tasks[task]
            .train
            .get(image)
            .ok_or_else(|| Error::Missing(format!("training image {image} of task {task}")))?;
        let out = predict(self.weights, sample, &self.patch(task, mask)?, self.mode)?;
        loss_mse(&out, &sample.y_q)
    }

    fn heldout_loss(&self, task: usize, mask: &[bool]) -> Result<f64> {
        let t = &self.tasks[task];
        let metric = t.task.metric();
        Ok(metric.as_loss(self.score(task, mask, &t.heldout)?))
    }
}

/// Mean metric of a selection on `samples`, patching the means of `task`.
pub fn evaluate(
    w: &Weights,
    grouping: &SiteGrouping,
    means: &MeanActivationTable,
    mask: &[bool],
    task: TaskId,
    samples: &[TripletSample],
    metric: Metric,
    mode: EvalMode,
) -> Result<f64> {
    if metric == Metric::MIoU && task != TaskId::Segmentation {
        return Err(invalid!("metric {} does not apply to {task}", metric.name()));
    }
    let patch = means.patch_for(task, &grouping.expand(mask)?)?;
    mean_metric(w, samples, &patch, mode, metric)
}
