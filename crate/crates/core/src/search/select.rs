// SPDX-License-Identifier: MIT OR Apache-2.0

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use super::{grs_search, GrsConfig, GrsResult, Objective};
use crate::error::{invalid, Error, Result};
use crate::lab::{MeanActivationTable, TaskMeans};
use crate::numerics::Rng;
use crate::tasks::TaskId;

/// Indices of the `count` largest scores, ties by lower index.
fn top_by_score(scores: &[f64], count: usize) -> Vec<bool> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    let mut mask = vec![false; scores.len()];
    for &g in order.iter().take(count) {
        mask[g] = true;
    }
    mask
}

#[derive(Debug, Clone, PartialEq)]
pub struct CmaResult {
    /// Mean loss reduction from patching each group alone.
    pub scores: Vec<f64>,
    pub mask: Vec<bool>,
}

/// Causal mediation selection: keep the `ceil(fraction * groups)` groups
/// whose lone patch reduces the rollout loss most, averaged over the first
/// `n_images` training images.
pub fn cma_select(obj: &dyn Objective, task: usize, n_images: usize, fraction: f64, seed: u64) -> Result<CmaResult> {
    if !(0.0..=1.0).contains(&fraction) {
        return Err(invalid!("fraction must lie in [0, 1], got {fraction}"));
    }
    if n_images == 0 || n_images > obj.n_train(task) {
        return Err(invalid!("cma needs 1..={} images, got {n_images}", obj.n_train(task)));
    }
    let n = obj.n_groups();
    let root = Rng::new(seed).child_named("cma");
    let mut mask = vec![false; n];
    let mut base = Vec::with_capacity(n_images);
    for i in 0..n_images {
        base.push(obj.rollout_loss(task, &mask, i, &mut root.child_path(&[u64::MAX, i as u64]))?);
    }
    let mut scores = vec![0.0; n];
    for g in 0..n {
        mask[g] = true;
        let mut total = 0.0;
        for (i, b) in base.iter().enumerate() {
            total += b - obj.rollout_loss(task, &mask, i, &mut root.child_path(&[g as u64, i as u64]))?;
        }
        mask[g] = false;
        scores[g] = total / n_images as f64;
    }
    let count = libm::ceil(fraction * n as f64) as usize;
    Ok(CmaResult { mask: top_by_score(&scores, count), scores })
}

/// Size-matched uniform random groups.
pub fn random_groups(n_groups: usize, count: usize, seed: u64) -> Result<Vec<bool>> {
    if count > n_groups {
        return Err(invalid!("{count} groups requested from {n_groups}"));
    }
    let mut mask = vec![false; n_groups];
    for g in Rng::new(seed).child_named("random-groups").choose_distinct(n_groups, count) {
        mask[g] = true;
    }
    Ok(mask)
}

/// Size-matched highest-scoring groups, ties by group id.
pub fn top_groups(group_scores: &[f64], count: usize) -> Result<Vec<bool>> {
    if count > group_scores.len() {
        return Err(invalid!("{count} groups requested from {}", group_scores.len()));
    }
    Ok(top_by_score(group_scores, count))
}

/// Greedy random search over `k` randomly chosen layers.
pub fn random_k_layers_grs(
    obj: &dyn Objective,
    task: usize,
    n_layers: usize,
    config: &GrsConfig,
) -> Result<GrsResult> {
    let k = config.k.min(n_layers);
    let layers = Rng::new(config.seed).child_named("random-layers").choose_distinct(n_layers, k);
    grs_search(obj, task, &layers, config)
}

/// Baseline selection kinds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BaselineKind {
    RandomQuadrants,
    TopQuadrants,
    RandomKLayersGrs,
}

/// Dispatch for the baselines. `target` is the size to match for the
/// size-matched kinds.
pub fn baseline_select(
    kind: BaselineKind,
    obj: &dyn Objective,
    task: usize,
    target: usize,
    group_scores: &[f64],
    n_layers: usize,
    grs: &GrsConfig,
) -> Result<Vec<bool>> {
    match kind {
        BaselineKind::RandomQuadrants => random_groups(obj.n_groups(), target, grs.seed),
        BaselineKind::TopQuadrants => top_groups(group_scores, target),
        BaselineKind::RandomKLayersGrs => Ok(random_k_layers_grs(obj, task, n_layers, grs)?.mask),
    }
}

/// Linear combination of task means, site by site, e.g.
/// `[(Inpaint, 1), (Segmentation, 1), (Identity, -1)]`.
pub fn compose_vectors(table: &MeanActivationTable, terms: &[(TaskId, f64)]) -> Result<TaskMeans> {
    let (first, _) = terms.first().ok_or_else(|| invalid!("empty composition"))?;
    let base = table.tasks.get(first).ok_or_else(|| Error::Missing(format!("mean activations for {first}")))?;
    let mut means = vec![0.0; base.means.len()];
    let mut count = usize::MAX;
    for (task, coef) in terms {
        let m = table.tasks.get(task).ok_or_else(|| Error::Missing(format!("mean activations for {task}")))?;
        if m.sites != base.sites {
            return Err(Error::Shape(format!("{task} covers different sites than {first}")));
        }
        for (o, v) in means.iter_mut().zip(&m.means) {
            *o += coef * v;
        }
        count = count.min(m.count);
    }
    Ok(TaskMeans { count, sites: base.sites.clone(), means })
}
