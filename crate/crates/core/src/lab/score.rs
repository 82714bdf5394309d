// SPDX-License-Identifier: MIT OR Apache-2.0

use alloc::collections::BTreeMap;
use alloc::vec;
use alloc::vec::Vec;

use super::ActivationStore;
use crate::error::{invalid, shape_err, Result};
use crate::model::{ModelConfig, SiteAddress, Stage};

/// Added to the intra-task denominator so constant-per-task sites score
/// finitely.
pub const RHO_EPS: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct TokenScore {
    pub site: SiteAddress,
    pub rho: f64,
}

/// Taskness ratio per site: pooled variance over mean intra-task variance.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreTable {
    pub n_tasks: usize,
    /// Sorted by site.
    pub tokens: Vec<TokenScore>,
}

/// Sum of `rho` per `(stage, layer, head)`.
pub type HeadScores = BTreeMap<(Stage, u16, u16), f64>;

impl ScoreTable {
    pub fn rho(&self, site: &SiteAddress) -> Option<f64> {
        let i = self.tokens.binary_search_by(|t| t.site.cmp(site)).ok()?;
        Some(self.tokens[i].rho)
    }

    pub fn head_scores(&self) -> HeadScores {
        let mut out = HeadScores::new();
        for t in &self.tokens {
            *out.entry((t.site.stage, t.site.layer, t.site.head)).or_insert(0.0) += t.rho;
        }
        out
    }

    /// `rho_layer` indexed by global layer (encoder first).
    pub fn layer_scores(&self, config: &ModelConfig) -> Vec<f64> {
        let mut out = vec![0.0; config.total_layers()];
        for t in &self.tokens {
            out[config.global_layer(t.site.stage, usize::from(t.site.layer))] += t.rho;
        }
        out
    }

    /// Global layer indices by descending `rho_layer`, ties by index.
    pub fn ranked_layers(&self, config: &ModelConfig) -> Vec<usize> {
        let scores = self.layer_scores(config);
        let mut order: Vec<usize> = (0..scores.len()).collect();
        order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
        order
    }
}

/// Population variance summed over dimensions, for rows `xs` of length `d`.
fn summed_variance<'a>(rows: impl Iterator<Item = &'a [f64]> + Clone, d: usize) -> f64 {
    let mut mean = vec![0.0; d];
    let mut n = 0usize;
    for r in rows.clone() {
        n += 1;
        for (m, v) in mean.iter_mut().zip(r) {
            *m += v;
        }
    }
    let inv = 1.0 / n as f64;
    mean.iter_mut().for_each(|m| *m *= inv);
    let mut ss = 0.0;
    for r in rows {
        for (m, v) in mean.iter().zip(r) {
            ss += (v - m) * (v - m);
        }
    }
    ss * inv
}

/// Score every site shared by the stores (one store per task).
pub fn score_tokens(stores: &[ActivationStore]) -> Result<ScoreTable> {
    if stores.len() < 2 {
        return Err(invalid!("scoring needs at least 2 tasks, got {}", stores.len()));
    }
    let first = &stores[0];
    for s in stores {
        if s.sites != first.sites || s.d_model != first.d_model {
            return Err(shape_err!("stores of {} and {} cover different sites", first.task, s.task));
        }
        if s.count < 2 {
            return Err(invalid!("task {} has {} samples, need at least 2", s.task, s.count));
        }
    }
    let d = first.d_model;
    let n = stores.len() as f64;
    let mut tokens = Vec::with_capacity(first.sites.len());
    for (k, site) in first.sites.iter().enumerate() {
        let pooled = stores.iter().flat_map(|s| (0..s.count).map(move |i| s.vector(i, k)));
        let inter = summed_variance(pooled, d);
        let intra: f64 =
            stores.iter().map(|s| summed_variance((0..s.count).map(|i| s.vector(i, k)), d)).sum::<f64>() / n;
        tokens.push(TokenScore { site: *site, rho: inter / (intra + RHO_EPS) });
    }
    Ok(ScoreTable { n_tasks: stores.len(), tokens })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Rng;
    use crate::tasks::TaskId;
    use proptest::prelude::{prop_assert, proptest};

    fn store(task: TaskId, sites: &[SiteAddress], d: usize, data: Vec<f64>) -> ActivationStore {
        let count = data.len() / (sites.len() * d);
        ActivationStore::from_raw(task, d, sites.to_vec(), count, data).unwrap()
    }

    fn s0() -> SiteAddress {
        SiteAddress::new(Stage::Encoder, 0, 0, 0)
    }

    #[test]
    fn worked_scalar_example() {
        let a = store(TaskId::Segmentation, &[s0()], 1, vec![0.0, 2.0]);
        let b = store(TaskId::Lowlight, &[s0()], 1, vec![4.0, 6.0]);
        let t = score_tokens(&[a, b]).unwrap();
        // union variance 5, mean intra variance 1
        assert!((t.tokens[0].rho - 5.0 / (1.0 + RHO_EPS)).abs() < 1e-15);
        assert!((t.tokens[0].rho - 5.0).abs() < 1e-11);
    }

    #[test]
    fn identical_tasks_score_zero_and_constants_score_huge() {
        let a = store(TaskId::Segmentation, &[s0()], 1, vec![1.5, 1.5]);
        let b = store(TaskId::Lowlight, &[s0()], 1, vec![1.5, 1.5]);
        assert_eq!(score_tokens(&[a, b]).unwrap().tokens[0].rho, 0.0);
        let a = store(TaskId::Segmentation, &[s0()], 1, vec![1.0, 1.0]);
        let b = store(TaskId::Lowlight, &[s0()], 1, vec![3.0, 3.0]);
        let rho = score_tokens(&[a, b]).unwrap().tokens[0].rho;
        assert!((rho - 1.0 / RHO_EPS).abs() < 1e-3 / RHO_EPS);
    }

    #[test]
    fn preconditions() {
        let a = store(TaskId::Segmentation, &[s0()], 1, vec![1.0, 3.0]);
        assert!(score_tokens(&[a.clone()]).is_err());
        let single = store(TaskId::Lowlight, &[s0()], 1, vec![1.0]);
        assert!(score_tokens(&[a.clone(), single]).is_err());
        let other = store(TaskId::Lowlight, &[SiteAddress::new(Stage::Decoder, 0, 0, 0)], 1, vec![1.0, 2.0]);
        assert!(score_tokens(&[a, other]).is_err());
    }

    #[test]
    fn aggregates_sum_tokens() {
        let c = ModelConfig { enc_layers: 2, dec_layers: 1, heads: 2, ..ModelConfig::default() };
        let sites = vec![
            SiteAddress::new(Stage::Encoder, 0, 0, 0),
            SiteAddress::new(Stage::Encoder, 0, 1, 0),
            SiteAddress::new(Stage::Encoder, 1, 0, 3),
            SiteAddress::new(Stage::Decoder, 0, 1, 7),
        ];
        let t = ScoreTable {
            n_tasks: 2,
            tokens: sites.iter().zip([1.0, 2.0, 0.5, 4.0]).map(|(s, rho)| TokenScore { site: *s, rho }).collect(),
        };
        assert_eq!(t.layer_scores(&c), vec![3.0, 0.5, 4.0]);
        assert_eq!(t.ranked_layers(&c), vec![2, 0, 1]);
        let heads = t.head_scores();
        assert_eq!(heads[&(Stage::Encoder, 0, 1)], 2.0);
        let per_layer: f64 = heads.iter().filter(|(k, _)| k.0 == Stage::Encoder && k.1 == 0).map(|(_, v)| v).sum();
        assert_eq!(per_layer, 3.0);
    }

    /// Planted sites (per-task constants) outrank task-independent noise.
    #[test]
    fn planted_sites_outrank_noise() {
        let sites: Vec<SiteAddress> = (0..20).map(|t| SiteAddress::new(Stage::Encoder, 0, 0, t)).collect();
        let planted = [3usize, 11, 17];
        let d = 4;
        let mut wins = 0;
        for trial in 0..20 {
            let root = Rng::new(trial);
            let stores: Vec<_> = TaskId::EVAL
                .iter()
                .enumerate()
                .map(|(j, &task)| {
                    let mut r = root.child(j as u64);
                    let mut data = vec![];
                    for _ in 0..100 {
                        for k in 0..sites.len() {
                            for e in 0..d {
                                data.push(if planted.contains(&k) { (j * 4 + e) as f64 } else { r.normal() });
                            }
                        }
                    }
                    store(task, &sites, d, data)
                })
                .collect();
            let t = score_tokens(&stores).unwrap();
            let min_planted = planted.iter().map(|&k| t.tokens[k].rho).fold(f64::INFINITY, f64::min);
            let max_noise = (0..20).filter(|k| !planted.contains(k)).map(|k| t.tokens[k].rho).fold(0.0, f64::max);
            wins += usize::from(min_planted > max_noise);
        }
        assert_eq!(wins, 20);
    }

    proptest! {
        #[test]
        fn invariant_to_order_relabeling_and_scale(
            xs in proptest::collection::vec(-5f64..5.0, 12),
            s in 0.1f64..10.0,
            rot in 0usize..6,
        ) {
            let tasks = [TaskId::Segmentation, TaskId::Lowlight, TaskId::Colorize];
            let mk = |vals: &[f64], order: &[usize]| -> Vec<ActivationStore> {
                order.iter().enumerate().map(|(slot, &j)| store(tasks[slot], &[s0()], 1, vals[j * 4..j * 4 + 4].to_vec())).collect()
            };
            let base = score_tokens(&mk(&xs, &[0, 1, 2])).unwrap().tokens[0].rho;
            let perms = [[0, 1, 2], [0, 2, 1], [1, 0, 2], [1, 2, 0], [2, 0, 1], [2, 1, 0]];
            let relabeled = score_tokens(&mk(&xs, &perms[rot])).unwrap().tokens[0].rho;
            prop_assert!((base - relabeled).abs() <= 1e-9 * (1.0 + base));
            let mut rev = xs.clone();
            for j in 0..3 {
                rev[j * 4..j * 4 + 4].reverse();
            }
            let reordered = score_tokens(&mk(&rev, &[0, 1, 2])).unwrap().tokens[0].rho;
            prop_assert!((base - reordered).abs() <= 1e-9 * (1.0 + base));
            let scaled: Vec<f64> = xs.iter().map(|x| x * s).collect();
            let sc = score_tokens(&mk(&scaled, &[0, 1, 2])).unwrap().tokens[0].rho;
            prop_assert!((base - sc).abs() <= 1e-6 * (1.0 + base));
            prop_assert!(base >= 0.0);
        }
    }
}
