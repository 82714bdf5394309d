// SPDX-License-Identifier: MIT OR Apache-2.0

use std::collections::BTreeSet;

use proptest::prelude::*;
use tvlab_core::lab::{davies_bouldin, silhouette, Granularity, SiteGrouping, StageFilter};
use tvlab_core::model::{forward, ModelConfig, PatchSet, SiteFilter, Weights};
use tvlab_core::numerics::{Mat, Rng};
use tvlab_core::planted::PlantedConfig;
use tvlab_core::search::{
    cma_select, random_groups, reinforce_search, top_groups, Objective, Plan, PlantedObjective, ReinforceConfig,
    ReinforceState,
};
use tvlab_core::tasks::{assemble_prompt, gen_sample, PromptMode, Quadrant, TaskId};
use tvlab_core::Result;

fn task_of(t: u8) -> TaskId {
    TaskId::ALL[t as usize % 5]
}

struct Constant(f64);

impl Objective for Constant {
    fn n_groups(&self) -> usize {
        9
    }
    fn group_layer(&self, g: usize) -> usize {
        g / 3
    }
    fn n_tasks(&self) -> usize {
        1
    }
    fn n_train(&self, _: usize) -> usize {
        8
    }
    fn rollout_loss(&self, _: usize, _: &[bool], _: usize, _: &mut Rng) -> Result<f64> {
        Ok(self.0)
    }
    fn heldout_loss(&self, _: usize, _: &[bool]) -> Result<f64> {
        Ok(self.0)
    }
}

fn planted(seed: u64, scale: f64) -> PlantedObjective {
    let truth: Vec<u32> = Rng::new(seed).choose_distinct(10, 3).into_iter().map(|g| g as u32).collect();
    let c = PlantedConfig::uniform(10, &truth, 0.3 * scale, 0.2 * scale, scale, 0.05 * scale);
    PlantedObjective::new(c, seed).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn samples_are_deterministic_and_prompts_round_trip(seed in any::<u64>(), t in 0u8..5) {
        let a = gen_sample(task_of(t), 8, &Rng::new(seed)).unwrap();
        let b = gen_sample(task_of(t), 8, &Rng::new(seed)).unwrap();
        prop_assert_eq!(&a, &b);
        let one = assemble_prompt(&a, PromptMode::OneShot, 2).unwrap();
        prop_assert_eq!(one.detokenize(Quadrant::TL).unwrap(), a.x_s.clone());
        prop_assert_eq!(one.detokenize(Quadrant::TR).unwrap(), a.y_s.clone());
        prop_assert_eq!(one.detokenize(Quadrant::BL).unwrap(), a.x_q.clone());
        let query = assemble_prompt(&a, PromptMode::QueryOnly, 2).unwrap();
        prop_assert_eq!(query.detokenize(Quadrant::BL).unwrap(), a.x_q);
        prop_assert!(query.detokenize(Quadrant::TL).is_err());
    }

    #[test]
    fn forward_is_deterministic_under_random_patches(seed in any::<u64>(), t in 0u8..5, picks in 1usize..30) {
        let config = ModelConfig::default();
        let w = Weights::init(config, &Rng::new(seed)).unwrap();
        let s = gen_sample(task_of(t), config.image_side, &Rng::new(seed ^ 1)).unwrap();
        let p = assemble_prompt(&s, PromptMode::QueryOnly, config.patch_side).unwrap();
        let sites = config.sites(PromptMode::QueryOnly);
        let mut r = Rng::new(seed).child_named("patch");
        let chosen = r.choose_distinct(sites.len(), picks.min(sites.len()));
        let values: Vec<Vec<f64>> = chosen.iter().map(|_| (0..config.d_model).map(|_| r.normal()).collect()).collect();
        let forward_patch: PatchSet = chosen.iter().zip(&values).map(|(&i, v)| (sites[i], v.clone())).collect();
        let reverse_patch: PatchSet = chosen.iter().zip(&values).rev().map(|(&i, v)| (sites[i], v.clone())).collect();
        let a = forward(&w, &p, &forward_patch, &SiteFilter::Nothing).unwrap();
        let b = forward(&w, &p, &reverse_patch, &SiteFilter::Nothing).unwrap();
        let c = forward(&w, &p, &forward_patch, &SiteFilter::Nothing).unwrap();
        prop_assert!(a.raw.iter().zip(&b.raw).all(|(x, y)| x.to_bits() == y.to_bits()));
        prop_assert!(a.raw.iter().zip(&c.raw).all(|(x, y)| x.to_bits() == y.to_bits()));
    }

    #[test]
    fn expansion_ignores_group_enumeration_order(seed in any::<u64>(), g in 0usize..4, st in 0usize..3) {
        let gran = [Granularity::Token, Granularity::Quadrant, Granularity::Head, Granularity::Layer][g];
        let stages = [StageFilter::Encoder, StageFilter::Decoder, StageFilter::Both][st];
        let grouping = SiteGrouping::new(&ModelConfig::default(), gran, stages);
        let mut r = Rng::new(seed);
        let mask: Vec<bool> = (0..grouping.len()).map(|_| r.bernoulli(0.3)).collect();
        let mut order: Vec<usize> = (0..grouping.len()).collect();
        r.shuffle(&mut order);
        let shuffled = SiteGrouping { groups: order.iter().map(|&i| grouping.groups[i].clone()).collect(), ..grouping.clone() };
        let shuffled_mask: Vec<bool> = order.iter().map(|&i| mask[i]).collect();
        let a: BTreeSet<_> = grouping.expand(&mask).unwrap().into_iter().collect();
        let b: BTreeSet<_> = shuffled.expand(&shuffled_mask).unwrap().into_iter().collect();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn cluster_metrics_are_bounded(seed in any::<u64>(), k in 2usize..5, extra in 0usize..12, dim in 1usize..5) {
        let mut r = Rng::new(seed);
        let n = 2 * k + extra;
        let labels: Vec<usize> = (0..n).map(|i| if i < 2 * k { i % k } else { r.below(k) }).collect();
        let rows: Vec<Vec<f64>> = labels.iter().map(|&l| (0..dim).map(|_| l as f64 + 2.0 * r.normal()).collect()).collect();
        let x = Mat::from_rows(&rows).unwrap();
        let s = silhouette(&x, &labels).unwrap();
        prop_assert!((-1.0..=1.0).contains(&s));
        prop_assert!(davies_bouldin(&x, &labels).unwrap() >= 0.0);
    }

    #[test]
    fn constant_loss_leaves_theta_unchanged(loss in -5f64..5.0, steps in 1usize..12, seed in any::<u64>()) {
        let config = ReinforceConfig { steps, samples_per_iter: 4, images_per_iter: 2, ckpt_every: 4, seed, ..Default::default() };
        let mut state = ReinforceState::new(config, Plan::Single(0), 9).unwrap();
        let before = state.theta.clone();
        state.run(&Constant(loss), None).unwrap();
        prop_assert_eq!(state.step, steps);
        prop_assert_eq!(state.theta, before);
    }

    #[test]
    fn selections_are_deterministic(seed in any::<u64>(), count in 0usize..10) {
        let obj = planted(seed, 1.0);
        prop_assert_eq!(cma_select(&obj, 0, 5, 0.3, seed).unwrap(), cma_select(&obj, 0, 5, 0.3, seed).unwrap());
        prop_assert_eq!(random_groups(10, count, seed).unwrap(), random_groups(10, count, seed).unwrap());
        let scores: Vec<f64> = (0..10).map(|i| ((seed >> i) & 7) as f64).collect();
        let top = top_groups(&scores, count).unwrap();
        prop_assert_eq!(top.iter().filter(|&&m| m).count(), count);
        prop_assert_eq!(top, top_groups(&scores, count).unwrap());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(6))]

    #[test]
    fn rescaling_the_loss_keeps_the_selection(seed in 0u64..1000, up in any::<bool>()) {
        let scale = if up { 2.0 } else { 0.5 };
        let config = ReinforceConfig { steps: 80, samples_per_iter: 16, images_per_iter: 2, ckpt_every: 20, seed, ..Default::default() };
        let base = reinforce_search(&planted(seed, 1.0), 0, &config).unwrap();
        let scaled = reinforce_search(&planted(seed, scale), 0, &config).unwrap();
        prop_assert_eq!(base.mask, scaled.mask);
    }
}
