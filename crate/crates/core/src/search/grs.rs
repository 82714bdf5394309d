// SPDX-License-Identifier: MIT OR Apache-2.0

use alloc::vec;
use alloc::vec::Vec;

use super::Objective;
use crate::error::{invalid, Result};
use crate::numerics::Rng;

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default))]
pub struct GrsConfig {
    /// Number of top-ranked layers searched.
    pub k: usize,
    /// Inclusion probability of the random initial masks.
    pub p: f64,
    /// Random initial masks tried.
    pub init_trials: usize,
    /// Cap on held-out evaluations.
    pub max_iters: usize,
    pub seed: u64,
}

impl Default for GrsConfig {
    fn default() -> Self {
        GrsConfig { k: 17, p: 0.3, init_trials: 100, max_iters: 10_000, seed: 0 }
    }
}

/// One accepted flip.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Flip {
    pub iteration: usize,
    pub group: usize,
    pub heldout: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GrsResult {
    pub mask: Vec<bool>,
    pub heldout: f64,
    /// Layers searched, in visiting order.
    pub layers: Vec<usize>,
    /// Set when `k` exceeded the number of ranked layers.
    pub clamped_k: bool,
    pub initial: f64,
    pub flips: Vec<Flip>,
    pub evaluations: usize,
}

/// Greedy random search over the groups of the first `k` layers of
/// `layer_order` (highest score first).
pub fn grs_search(obj: &dyn Objective, task: usize, layer_order: &[usize], config: &GrsConfig) -> Result<GrsResult> {
    if !(0.0..1.0).contains(&config.p) {
        return Err(invalid!("grs p must lie in [0, 1), got {}", config.p));
    }
    let clamped_k = config.k > layer_order.len();
    let layers: Vec<usize> = layer_order[..config.k.min(layer_order.len())].to_vec();
    let n = obj.n_groups();
    let by_layer: Vec<Vec<usize>> =
        layers.iter().map(|&l| (0..n).filter(|&g| obj.group_layer(g) == l).collect()).collect();
    let universe: Vec<usize> = {
        let mut u: Vec<usize> = by_layer.iter().flatten().copied().collect();
        u.sort_unstable();
        u
    };
    let mut evaluations = 0usize;
    let eval = |mask: &[bool], evaluations: &mut usize| -> Result<f64> {
        *evaluations += 1;
        obj.heldout_loss(task, mask)
    };

    let root = Rng::new(config.seed).child_named("grs");
    let mut mask = vec![false; n];
    let mut best = eval(&mask, &mut evaluations)?;
    for trial in 0..config.init_trials {
        if evaluations >= config.max_iters {
            break;
        }
        let mut r = root.child(trial as u64);
        let mut cand = vec![false; n];
        for &g in &universe {
            cand[g] = r.bernoulli(config.p);
        }
        let h = eval(&cand, &mut evaluations)?;
        if h < best {
            best = h;
            mask = cand;
        }
    }
    let initial = best;
    let mut flips = Vec::new();
    'sweeps: loop {
        let mut changed = false;
        for groups in &by_layer {
            let mut pick: Option<(usize, f64)> = None;
            for &g in groups {
                if evaluations >= config.max_iters {
                    break 'sweeps;
                }
                mask[g] = !mask[g];
                let h = eval(&mask, &mut evaluations)?;
                mask[g] = !mask[g];
                if pick.is_none_or(|(_, b)| h < b) {
                    pick = Some((g, h));
                }
            }
            if let Some((g, h)) = pick {
                if h < best {
                    mask[g] = !mask[g];
                    best = h;
                    changed = true;
                    flips.push(Flip { iteration: evaluations, group: g, heldout: h });
                }
            }
        }
        if !changed {
            break;
        }
    }
    Ok(GrsResult { mask, heldout: best, layers, clamped_k, initial, flips, evaluations })
}
