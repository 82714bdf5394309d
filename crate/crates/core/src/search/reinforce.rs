// SPDX-License-Identifier: MIT OR Apache-2.0

use alloc::vec;
use alloc::vec::Vec;

use super::Objective;
use crate::error::{invalid, shape_err, Error, Result};
use crate::numerics::{adam_step, sigmoid, AdamState, Rng};

/// Reward baseline subtracted before the score-function product.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "lowercase"))]
pub enum Baseline {
    /// Mean loss of the batch passed to [`reinforce_grad`].
    #[default]
    Mean,
    None,
}

/// Bernoulli logits, one per group.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ThetaParams {
    pub theta: Vec<f64>,
}

impl ThetaParams {
    pub fn new(n_groups: usize, init: f64) -> Self {
        ThetaParams { theta: vec![init; n_groups] }
    }

    pub fn probs(&self) -> Vec<f64> {
        self.theta.iter().map(|&t| sigmoid(t)).collect()
    }

    pub fn sample(&self, rng: &mut Rng) -> Vec<bool> {
        self.theta.iter().map(|&t| rng.bernoulli(sigmoid(t))).collect()
    }
}

/// Score-function gradient of the expected loss:
/// `mean_s (L_s - b) (alpha_s - sigmoid(theta))`.
pub fn reinforce_grad(theta: &[f64], masks: &[Vec<bool>], losses: &[f64], baseline: Baseline) -> Result<Vec<f64>> {
    if masks.len() != losses.len() || masks.is_empty() {
        return Err(shape_err!("{} masks for {} losses", masks.len(), losses.len()));
    }
    if let Some(m) = masks.iter().find(|m| m.len() != theta.len()) {
        return Err(shape_err!("mask of {} for {} logits", m.len(), theta.len()));
    }
    let n = losses.len() as f64;
    let b = match baseline {
        // an exactly constant batch must give an exactly zero gradient,
        // which a rounded mean does not guarantee
        Baseline::Mean if losses.iter().all(|&l| l == losses[0]) => losses[0],
        Baseline::Mean => losses.iter().sum::<f64>() / n,
        Baseline::None => 0.0,
    };
    let p: Vec<f64> = theta.iter().map(|&t| sigmoid(t)).collect();
    let mut g = vec![0.0; theta.len()];
    for (mask, &l) in masks.iter().zip(losses) {
        let adv = l - b;
        if adv == 0.0 {
            continue;
        }
        for ((gi, &a), &pi) in g.iter_mut().zip(mask).zip(&p) {
            *gi += adv * (f64::from(u8::from(a)) - pi);
        }
    }
    g.iter_mut().for_each(|x| *x /= n);
    Ok(g)
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default))]
pub struct ReinforceConfig {
    pub samples_per_iter: usize,
    pub images_per_iter: usize,
    pub lr: f64,
    pub steps: usize,
    pub ckpt_every: usize,
    pub theta_init: f64,
    pub baseline: Baseline,
    pub final_samples: usize,
    pub seed: u64,
}

impl Default for ReinforceConfig {
    fn default() -> Self {
        ReinforceConfig {
            samples_per_iter: 32,
            images_per_iter: 10,
            lr: 0.1,
            steps: 600,
            ckpt_every: 50,
            theta_init: -1.0,
            baseline: Baseline::Mean,
            final_samples: 32,
            seed: 0,
        }
    }
}

impl ReinforceConfig {
    pub fn validate(&self) -> Result<()> {
        if self.samples_per_iter == 0 || self.images_per_iter == 0 || self.ckpt_every == 0 || self.final_samples == 0 {
            return Err(invalid!("reinforce counts must be positive"));
        }
        if !(self.lr > 0.0 && self.lr.is_finite() && self.theta_init.is_finite()) {
            return Err(invalid!("reinforce lr must be positive and theta_init finite"));
        }
        Ok(())
    }
}

/// Best mask found at one checkpoint.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Checkpoint {
    pub step: usize,
    pub theta: Vec<f64>,
    pub mask: Vec<bool>,
    pub heldout: f64,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct LogRow {
    pub step: usize,
    /// Mean rollout reward (negated, normalised loss).
    pub mean_reward: f64,
    /// Held-out loss of the checkpoint taken after this step, if any.
    pub heldout: Option<f64>,
}

/// Multi-task rollout plan: two images per task plus filler.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct MultiTask {
    pub tasks: Vec<usize>,
    /// Divides rollout losses of the matching task.
    pub normalizers: Vec<f64>,
    /// Divides held-out losses of the matching task.
    pub heldout_normalizers: Vec<f64>,
    pub images_per_task: usize,
    /// Task index and normaliser of the filler task.
    pub filler: Option<(usize, f64)>,
}

/// Which tasks a run optimises.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum Plan {
    Single(usize),
    Multi(MultiTask),
}

/// Resumable state of a REINFORCE run. Everything random is derived from
/// `(seed, step, ...)` labels, so this is all a resumed run needs.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ReinforceState {
    pub config: ReinforceConfig,
    pub plan: Plan,
    pub step: usize,
    pub theta: ThetaParams,
    pub adam: AdamState,
    pub checkpoints: Vec<Checkpoint>,
    pub log: Vec<LogRow>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReinforceResult {
    pub mask: Vec<bool>,
    pub heldout: f64,
    pub best_step: usize,
    pub state: ReinforceState,
}

const STREAM_ROLLOUT: u64 = 0;
const STREAM_CKPT: u64 = 1;

impl ReinforceState {
    pub fn new(config: ReinforceConfig, plan: Plan, n_groups: usize) -> Result<Self> {
        config.validate()?;
        if let Plan::Multi(m) = &plan {
            if m.tasks.len() < 2 {
                return Err(invalid!("multi-task search needs at least 2 tasks"));
            }
            if m.normalizers.len() != m.tasks.len() || m.heldout_normalizers.len() != m.tasks.len() {
                return Err(Error::Missing(alloc::format!(
                    "normalizers: {} and {} for {} tasks",
                    m.normalizers.len(),
                    m.heldout_normalizers.len(),
                    m.tasks.len()
                )));
            }
            let all = m.normalizers.iter().chain(&m.heldout_normalizers).chain(m.filler.iter().map(|f| &f.1));
            for z in all {
                if !(z.is_finite() && *z > 0.0) {
                    return Err(invalid!("normalizers must be positive and finite"));
                }
            }
            if m.images_per_task == 0 {
                return Err(invalid!("images_per_task must be positive"));
            }
        }
        let theta = ThetaParams::new(n_groups, config.theta_init);
        let adam = AdamState::new(n_groups, config.lr);
        Ok(ReinforceState { config, plan, step: 0, theta, adam, checkpoints: Vec::new(), log: Vec::new() })
    }

    pub fn done(&self) -> bool {
        self.step >= self.config.steps
    }

    /// `(task, normaliser, image)` triples for one iteration.
    fn rollout_plan(&self, obj: &dyn Objective, rng: &mut Rng) -> Result<Vec<(usize, f64, usize)>> {
        let pick = |task: usize, k: usize, rng: &mut Rng| -> Result<Vec<usize>> {
            let n = obj.n_train(task);
            if n == 0 {
                return Err(Error::Missing(alloc::format!("training images of task {task}")));
            }
            Ok(if k <= n { rng.choose_distinct(n, k) } else { (0..k).map(|_| rng.below(n)).collect() })
        };
        let k = self.config.images_per_iter;
        match &self.plan {
            Plan::Single(task) => Ok(pick(*task, k, rng)?.into_iter().map(|i| (*task, 1.0, i)).collect()),
            Plan::Multi(m) => {
                let mut out = Vec::new();
                for (&t, &z) in m.tasks.iter().zip(&m.normalizers) {
                    out.extend(pick(t, m.images_per_task, rng)?.into_iter().map(|i| (t, z, i)));
                }
                if let Some((t, z)) = m.filler {
                    let fill = k.saturating_sub(out.len());
                    if fill > 0 {
                        out.extend(pick(t, fill, rng)?.into_iter().map(|i| (t, z, i)));
                    }
                }
                Ok(out)
            }
        }
    }

    fn heldout(&self, obj: &dyn Objective, mask: &[bool]) -> Result<f64> {
        match &self.plan {
            Plan::Single(task) => obj.heldout_loss(*task, mask),
            Plan::Multi(m) => {
                let mut total = 0.0;
                for (&t, &z) in m.tasks.iter().zip(&m.heldout_normalizers) {
                    total += obj.heldout_loss(t, mask)? / z;
                }
                Ok(total / m.tasks.len() as f64)
            }
        }
    }

    /// One optimisation step, plus a checkpoint when due.
    pub fn step(&mut self, obj: &dyn Objective) -> Result<()> {
        if obj.n_groups() != self.theta.theta.len() {
            return Err(shape_err!("objective has {} groups, theta {}", obj.n_groups(), self.theta.theta.len()));
        }
        let step = self.step;
        let root = Rng::new(self.config.seed).child_path(&[STREAM_ROLLOUT, step as u64]);
        let plan = self.rollout_plan(obj, &mut root.child(u64::MAX))?;
        let mut grad = vec![0.0; self.theta.theta.len()];
        let mut loss_sum = 0.0;
        let mut count = 0usize;
        // each image's samples form one baseline batch
        for (k, &(task, z, image)) in plan.iter().enumerate() {
            let mut masks = Vec::with_capacity(self.config.samples_per_iter);
            let mut losses = Vec::with_capacity(self.config.samples_per_iter);
            for s in 0..self.config.samples_per_iter {
                let r = root.child_path(&[k as u64, s as u64]);
                let mask = self.theta.sample(&mut r.child(0));
                let loss = obj.rollout_loss(task, &mask, image, &mut r.child(1))? / z;
                if !loss.is_finite() {
                    return Err(Error::SearchAborted { step });
                }
                loss_sum += loss;
                count += 1;
                masks.push(mask);
                losses.push(loss);
            }
            let g = reinforce_grad(&self.theta.theta, &masks, &losses, self.config.baseline)?;
            for (a, b) in grad.iter_mut().zip(&g) {
                *a += b;
            }
        }
        let n_img = plan.len().max(1) as f64;
        grad.iter_mut().for_each(|g| *g /= n_img);
        adam_step(&mut self.theta.theta, &grad, &mut self.adam)?;
        self.step += 1;
        let mut row = LogRow { step: self.step, mean_reward: -loss_sum / count.max(1) as f64, heldout: None };
        if self.step % self.config.ckpt_every == 0 || self.done() {
            let ck = self.checkpoint(obj)?;
            row.heldout = Some(ck.heldout);
            self.checkpoints.push(ck);
        }
        self.log.push(row);
        Ok(())
    }

    /// Best of `final_samples` draws from the current logits on held-out data.
    fn checkpoint(&self, obj: &dyn Objective) -> Result<Checkpoint> {
        let root = Rng::new(self.config.seed).child_path(&[STREAM_CKPT, self.step as u64]);
        let mut best: Option<(Vec<bool>, f64)> = None;
        for s in 0..self.config.final_samples {
            let mask = self.theta.sample(&mut root.child(s as u64));
            if best.as_ref().is_some_and(|(m, _)| *m == mask) {
                continue;
            }
            let h = self.heldout(obj, &mask)?;
            if !h.is_finite() {
                return Err(Error::SearchAborted { step: self.step });
            }
            if best.as_ref().is_none_or(|(_, b)| h < *b) {
                best = Some((mask, h));
            }
        }
        let (mask, heldout) = best.expect("final_samples is positive");
        Ok(Checkpoint { step: self.step, theta: self.theta.theta.clone(), mask, heldout })
    }

    /// Run to `steps` (or `until`, whichever is first).
    pub fn run(&mut self, obj: &dyn Objective, until: Option<usize>) -> Result<()> {
        let stop = until.unwrap_or(self.config.steps).min(self.config.steps);
        while self.step < stop {
            self.step(obj)?;
        }
        Ok(())
    }

    /// Best checkpoint so far (earliest on ties).
    pub fn result(&self) -> Result<ReinforceResult> {
        let best = self
            .checkpoints
            .iter()
            .fold(None::<&Checkpoint>, |b, c| if b.is_none_or(|b| c.heldout < b.heldout) { Some(c) } else { b })
            .ok_or_else(|| Error::Missing("checkpoints; run at least one step".into()))?;
        Ok(ReinforceResult { mask: best.mask.clone(), heldout: best.heldout, best_step: best.step, state: self.clone() })
    }
}

/// Task-specific REINFORCE selection.
pub fn reinforce_search(obj: &dyn Objective, task: usize, config: &ReinforceConfig) -> Result<ReinforceResult> {
    if task >= obj.n_tasks() {
        return Err(invalid!("task index {task} out of range"));
    }
    let mut state = ReinforceState::new(config.clone(), Plan::Single(task), obj.n_groups())?;
    state.run(obj, None)?;
    state.result()
}

/// One shared selection for several tasks, rewards normalised per task.
pub fn reinforce_multitask(obj: &dyn Objective, plan: MultiTask, config: &ReinforceConfig) -> Result<ReinforceResult> {
    if let Some(&t) = plan.tasks.iter().chain(plan.filler.iter().map(|f| &f.0)).find(|&&t| t >= obj.n_tasks()) {
        return Err(invalid!("task index {t} out of range"));
    }
    let mut state = ReinforceState::new(config.clone(), Plan::Multi(plan), obj.n_groups())?;
    state.run(obj, None)?;
    state.result()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::planted::{brute_force_best, PlantedConfig};
    use crate::search::PlantedObjective;

    #[test]
    fn constant_rewards_give_zero_gradient() {
        let masks = vec![vec![true, false], vec![false, false], vec![true, true]];
        let g = reinforce_grad(&[0.3, -1.0], &masks, &[2.5, 2.5, 2.5], Baseline::Mean).unwrap();
        assert_eq!(g, vec![0.0, 0.0]);
        assert!(reinforce_grad(&[0.0], &masks, &[1.0; 3], Baseline::Mean).is_err());
        assert!(reinforce_grad(&[0.0, 0.0], &masks, &[1.0; 2], Baseline::Mean).is_err());
    }

    #[test]
    fn single_group_hand_example() {
        // theta = 0: masks {1, 0} with losses {0, 1}, baseline 0.5
        // g = ((0 - .5)(1 - .5) + (1 - .5)(0 - .5)) / 2 = -0.25
        let g = reinforce_grad(&[0.0], &[vec![true], vec![false]], &[0.0, 1.0], Baseline::Mean).unwrap();
        assert!((g[0] + 0.25).abs() < 1e-15);
        // a descent step raises theta, so mask 1 becomes more likely
        let mut theta = [0.0];
        adam_step(&mut theta, &g, &mut AdamState::new(1, 0.1)).unwrap();
        assert!(theta[0] > 0.0);
        assert!((sigmoid(-1.0) - 0.268941).abs() < 1e-6);
    }

    fn oracle(seed: u64) -> PlantedObjective {
        let truth = [(seed % 12) as u32, ((seed + 4) % 12) as u32, ((seed + 9) % 12) as u32];
        let c = PlantedConfig::uniform(12, &truth, 0.3, 0.2, 1.0, 0.05);
        PlantedObjective::new(c, seed).unwrap()
    }

    fn short(seed: u64) -> ReinforceConfig {
        ReinforceConfig { steps: 60, samples_per_iter: 16, images_per_iter: 2, ckpt_every: 20, seed, ..Default::default() }
    }

    #[test]
    fn recovers_planted_truth_quickly() {
        let obj = oracle(3);
        let r = reinforce_search(&obj, 0, &short(3)).unwrap();
        let (best, _) = brute_force_best(&obj.config, 0).unwrap();
        assert_eq!(obj.config.selection_of(&r.mask), best);
        assert_eq!(r.state.checkpoints.len(), 3);
        assert_eq!(r.state.log.len(), 60);
    }

    #[test]
    fn resume_is_bit_exact() {
        let obj = oracle(5);
        let cfg = short(5);
        let full = reinforce_search(&obj, 0, &cfg).unwrap();
        let mut part = ReinforceState::new(cfg, Plan::Single(0), 12).unwrap();
        part.run(&obj, Some(27)).unwrap();
        let mut resumed = part.clone();
        resumed.run(&obj, None).unwrap();
        assert_eq!(resumed.result().unwrap(), full);
    }

    #[test]
    fn zero_signal_oracle_scores_base_loss() {
        let mut c = PlantedConfig::uniform(6, &[0], 0.0, 0.0, 0.7, 0.0);
        c.tasks[0].effect = vec![0.0; 6];
        let mut obj = PlantedObjective::new(c, 0).unwrap();
        obj.heldout_draws = 0;
        let r = reinforce_search(&obj, 0, &short(1)).unwrap();
        assert_eq!(r.heldout, 0.7);
        assert!(r.state.checkpoints.iter().all(|c| c.heldout == 0.7));
        // constant rewards leave theta untouched
        assert!(r.state.theta.theta.iter().all(|&t| t == -1.0));
    }

    #[test]
    fn non_finite_loss_aborts_with_step() {
        struct Bad;
        impl Objective for Bad {
            fn n_groups(&self) -> usize {
                2
            }
            fn group_layer(&self, _: usize) -> usize {
                0
            }
            fn n_tasks(&self) -> usize {
                1
            }
            fn n_train(&self, _: usize) -> usize {
                4
            }
            fn rollout_loss(&self, _: usize, mask: &[bool], _: usize, _: &mut Rng) -> Result<f64> {
                Ok(if mask[0] && mask[1] { f64::NAN } else { 1.0 })
            }
            fn heldout_loss(&self, _: usize, _: &[bool]) -> Result<f64> {
                Ok(1.0)
            }
        }
        let err = reinforce_search(&Bad, 0, &ReinforceConfig { theta_init: 3.0, ..short(0) }).unwrap_err();
        assert_eq!(err, Error::SearchAborted { step: 0 });
    }
}
