// SPDX-License-Identifier: MIT OR Apache-2.0

//! Additive objective with known optimal site subsets.
//!
//! Selecting a truth group lowers the loss by its weight, selecting any other
//! group raises it by its cost, and Gaussian noise is added per evaluation.
//! Because the expected loss is separable the optimum is known exactly,
//! which makes this the reference for every search algorithm.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{invalid, Error, Result};
use crate::numerics::Rng;

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct PlantedTask {
    /// Group ids whose selection helps.
    pub truth: Vec<u32>,
    /// Per universe entry: the weight `w_i` for truth groups, the cost
    /// `c_i` for all others.
    pub effect: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct PlantedConfig {
    pub universe: Vec<u32>,
    pub tasks: Vec<PlantedTask>,
    pub base_loss: f64,
    pub noise_sigma: f64,
    /// Layer of each universe entry, for layer-ranked searches. Empty means
    /// every group sits in layer 0.
    #[cfg_attr(feature = "serde", serde(default))]
    pub layer_of: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlantedEval {
    pub selection: Vec<u32>,
    pub loss: f64,
    pub noise_draw: f64,
}

/// Largest universe accepted by [`brute_force_best`].
pub const MAX_BRUTE_FORCE: usize = 24;

impl PlantedConfig {
    /// `n_groups` groups, one task whose truth is `truth` (universe
    /// positions) with weight `w`; every other group costs `c`.
    pub fn uniform(n_groups: usize, truth: &[u32], w: f64, c: f64, base_loss: f64, noise_sigma: f64) -> Self {
        let universe: Vec<u32> = (0..n_groups as u32).collect();
        let effect = universe.iter().map(|g| if truth.contains(g) { w } else { c }).collect();
        PlantedConfig {
            universe,
            tasks: vec![PlantedTask { truth: truth.to_vec(), effect }],
            base_loss,
            noise_sigma,
            layer_of: Vec::new(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.tasks.is_empty() {
            return Err(invalid!("planted config has no tasks"));
        }
        if !self.layer_of.is_empty() && self.layer_of.len() != self.universe.len() {
            return Err(invalid!("layer_of has {} entries for {} groups", self.layer_of.len(), self.universe.len()));
        }
        if !(self.noise_sigma >= 0.0) {
            return Err(invalid!("noise_sigma must be non-negative"));
        }
        for (j, t) in self.tasks.iter().enumerate() {
            if t.truth.is_empty() {
                return Err(invalid!("task {j} has an empty truth set"));
            }
            if t.effect.len() != self.universe.len() {
                return Err(invalid!("task {j}: {} effects for {} groups", t.effect.len(), self.universe.len()));
            }
            if t.effect.iter().any(|e| !(e.is_finite() && *e >= 0.0)) {
                return Err(invalid!("task {j}: effects must be finite and non-negative"));
            }
            let mut signal = 0.0;
            for g in &t.truth {
                signal += t.effect[self.position(*g)?];
            }
            if self.base_loss <= signal {
                return Err(invalid!("task {j}: base_loss {} must exceed total signal {signal}", self.base_loss));
            }
        }
        Ok(())
    }

    /// Universe position of a group id.
    pub fn position(&self, group: u32) -> Result<usize> {
        self.universe.iter().position(|&g| g == group).ok_or(Error::UnknownGroup(group as usize))
    }

    pub fn n_groups(&self) -> usize {
        self.universe.len()
    }

    pub fn layer(&self, pos: usize) -> usize {
        self.layer_of.get(pos).copied().unwrap_or(0)
    }

    /// Boolean membership of the task's truth set over universe positions.
    pub fn truth_mask(&self, task: usize) -> Result<Vec<bool>> {
        let t = self.task(task)?;
        let mut mask = vec![false; self.universe.len()];
        for g in &t.truth {
            mask[self.position(*g)?] = true;
        }
        Ok(mask)
    }

    fn task(&self, task: usize) -> Result<&PlantedTask> {
        self.tasks.get(task).ok_or_else(|| invalid!("planted task {task} out of range"))
    }

    /// Noise-free loss of a mask over universe positions (clamped at 0).
    pub fn expected_loss(&self, task: usize, mask: &[bool]) -> Result<f64> {
        let truth = self.truth_mask(task)?;
        let t = self.task(task)?;
        if mask.len() != self.universe.len() {
            return Err(invalid!("mask of {} for {} groups", mask.len(), self.universe.len()));
        }
        let mut loss = self.base_loss;
        for i in 0..mask.len() {
            if mask[i] {
                if truth[i] {
                    loss -= t.effect[i];
                } else {
                    loss += t.effect[i];
                }
            }
        }
        Ok(loss.max(0.0))
    }

    /// Noisy loss of a mask.
    pub fn noisy_loss(&self, task: usize, mask: &[bool], rng: &mut Rng) -> Result<(f64, f64)> {
        let noise = if self.noise_sigma > 0.0 { self.noise_sigma * rng.normal() } else { 0.0 };
        let base = self.expected_loss(task, mask)?;
        // clamp after noise so the loss stays non-negative
        Ok(((base + noise).max(0.0), noise))
    }

    pub fn mask_of(&self, selection: &[u32]) -> Result<Vec<bool>> {
        let mut mask = vec![false; self.universe.len()];
        for &g in selection {
            mask[self.position(g)?] = true;
        }
        Ok(mask)
    }

    pub fn selection_of(&self, mask: &[bool]) -> Vec<u32> {
        self.universe.iter().zip(mask).filter(|(_, m)| **m).map(|(g, _)| *g).collect()
    }
}

/// Loss of `selection` (group ids) on `task`, with noise drawn from `rng`.
pub fn planted_loss(config: &PlantedConfig, task: usize, selection: &[u32], rng: &mut Rng) -> Result<PlantedEval> {
    let mask = config.mask_of(selection)?;
    let (loss, noise_draw) = config.noisy_loss(task, &mask, rng)?;
    let mut selection = selection.to_vec();
    selection.sort_unstable();
    selection.dedup();
    Ok(PlantedEval { selection, loss, noise_draw })
}

/// `(a smaller, or same size and lexicographically smaller)` on sorted ids.
fn better_tie(a: &[u32], b: &[u32]) -> bool {
    a.len() < b.len() || (a.len() == b.len() && a < b)
}

/// Exhaustive minimum of a loss over every subset of the universe. Ties go
/// to the smallest subset, then the lexicographically smallest id list.
pub fn brute_force_min(
    config: &PlantedConfig,
    mut loss: impl FnMut(&[bool]) -> Result<f64>,
) -> Result<(Vec<u32>, f64)> {
    let n = config.universe.len();
    if n > MAX_BRUTE_FORCE {
        return Err(Error::UniverseTooLarge(n));
    }
    let mut best: Option<(Vec<u32>, f64)> = None;
    let mut mask = vec![false; n];
    for bits in 0u32..(1u32 << n) {
        for (i, m) in mask.iter_mut().enumerate() {
            *m = bits >> i & 1 == 1;
        }
        let l = loss(&mask)?;
        let mut sel = config.selection_of(&mask);
        sel.sort_unstable();
        let replace = match &best {
            None => true,
            Some((bs, bl)) => l < *bl || (l == *bl && better_tie(&sel, bs)),
        };
        if replace {
            best = Some((sel, l));
        }
    }
    Ok(best.expect("at least the empty subset"))
}

/// Optimal subset and its expected loss for one task.
pub fn brute_force_best(config: &PlantedConfig, task: usize) -> Result<(Vec<u32>, f64)> {
    config.task(task)?;
    brute_force_min(config, |m| config.expected_loss(task, m))
}

/// Optimum of the mean normalised expected loss over several tasks.
pub fn brute_force_best_multi(config: &PlantedConfig, tasks: &[usize], normalizers: &[f64]) -> Result<(Vec<u32>, f64)> {
    if tasks.len() != normalizers.len() || tasks.is_empty() {
        return Err(invalid!("{} tasks with {} normalizers", tasks.len(), normalizers.len()));
    }
    brute_force_min(config, |m| {
        let mut total = 0.0;
        for (&t, &z) in tasks.iter().zip(normalizers) {
            total += config.expected_loss(t, m)? / z;
        }
        Ok(total / tasks.len() as f64)
    })
}
