// SPDX-License-Identifier: MIT OR Apache-2.0

use alloc::vec;
use alloc::vec::Vec;

use super::backward::loss_and_grad;
use super::Weights;
use crate::error::{invalid, Error, Result};
use crate::numerics::{adam_step, AdamState, Rng};
use crate::tasks::{assemble_prompt, PromptMode, TripletSample};

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default))]
pub struct TrainHyper {
    pub lr: f64,
    pub steps: usize,
    pub batch: usize,
    pub seed: u64,
    /// Global gradient-norm clip; `0` disables clipping.
    pub clip: f64,
    /// Final learning rate as a fraction of `lr` (cosine schedule); `1` keeps it constant.
    pub final_lr_frac: f64,
}

impl Default for TrainHyper {
    fn default() -> Self {
        TrainHyper { lr: 3e-3, steps: 2000, batch: 16, seed: 0, clip: 1.0, final_lr_frac: 0.1 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    /// Mean batch loss per step.
    pub losses: Vec<f64>,
}

/// Minimise bottom-right reconstruction MSE on one-shot prompts drawn from
/// `samples` (mixed tasks) with Adam.
pub fn train(weights: &mut Weights, samples: &[TripletSample], hyper: &TrainHyper) -> Result<TrainReport> {
    if samples.is_empty() {
        return Err(invalid!("no training samples"));
    }
    if hyper.batch == 0 {
        return Err(invalid!("batch size must be positive"));
    }
    let root = Rng::new(hyper.seed).child_named("train");
    let mut adam = AdamState::new(weights.n_params(), hyper.lr);
    let mut losses = Vec::with_capacity(hyper.steps);
    let mut grad = vec![0.0; weights.n_params()];
    for step in 0..hyper.steps {
        let mut rng = root.child(step as u64);
        grad.iter_mut().for_each(|g| *g = 0.0);
        let mut batch_loss = 0.0;
        for _ in 0..hyper.batch {
            let s = &samples[rng.below(samples.len())];
            let prompt = assemble_prompt(s, PromptMode::OneShot, weights.config.patch_side)?;
            let (loss, g) = loss_and_grad(weights, &prompt, &s.y_q)?;
            batch_loss += loss;
            grad.iter_mut().zip(&g).for_each(|(a, b)| *a += b);
        }
        let inv = 1.0 / hyper.batch as f64;
        batch_loss *= inv;
        if !batch_loss.is_finite() {
            return Err(Error::Diverged { step, loss: batch_loss });
        }
        grad.iter_mut().for_each(|g| *g *= inv);
        if hyper.clip > 0.0 {
            let norm = libm::sqrt(grad.iter().map(|g| g * g).sum::<f64>());
            if norm > hyper.clip {
                let s = hyper.clip / norm;
                grad.iter_mut().for_each(|g| *g *= s);
            }
        }
        let progress = step as f64 / hyper.steps.max(1) as f64;
        let cosine = 0.5 * (1.0 + libm::cos(core::f64::consts::PI * progress));
        adam.lr = hyper.lr * (hyper.final_lr_frac + (1.0 - hyper.final_lr_frac) * cosine);
        adam_step(&mut weights.params, &grad, &mut adam)?;
        if weights.params.iter().any(|p| !p.is_finite()) {
            return Err(Error::Diverged { step, loss: batch_loss });
        }
        losses.push(batch_loss);
    }
    Ok(TrainReport { losses })
}
