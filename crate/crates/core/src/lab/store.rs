// SPDX-License-Identifier: MIT OR Apache-2.0

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{invalid, shape_err, Error, Result};
use crate::model::{forward, PatchSet, SiteAddress, SiteFilter, Weights};
use crate::tasks::{assemble_prompt, PromptMode, TaskId, TripletSample};

/// Recorded site activations of one task, `(sample, site, dim)` row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ActivationStore {
    pub task: TaskId,
    pub d_model: usize,
    /// Sorted site directory shared by every sample.
    pub sites: Vec<SiteAddress>,
    pub count: usize,
    pub data: Vec<f64>,
}

impl ActivationStore {
    /// Build a store from per-sample site maps; all maps must cover the same
    /// sites.
    pub fn from_samples(task: TaskId, samples: &[BTreeMap<SiteAddress, Vec<f64>>]) -> Result<Self> {
        let first = samples.first().ok_or_else(|| invalid!("no samples for {task}"))?;
        let sites: Vec<SiteAddress> = first.keys().copied().collect();
        let d_model = first.values().next().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(samples.len() * sites.len() * d_model);
        for (i, s) in samples.iter().enumerate() {
            if s.len() != sites.len() || !s.keys().eq(sites.iter()) {
                return Err(shape_err!("sample {i} covers a different site set"));
            }
            for v in s.values() {
                if v.len() != d_model {
                    return Err(shape_err!("sample {i}: vector of {} values, expected {d_model}", v.len()));
                }
                data.extend_from_slice(v);
            }
        }
        Ok(ActivationStore { task, d_model, sites, count: samples.len(), data })
    }

    pub fn from_raw(task: TaskId, d_model: usize, sites: Vec<SiteAddress>, count: usize, data: Vec<f64>) -> Result<Self> {
        if count == 0 {
            return Err(invalid!("store needs at least one sample"));
        }
        if data.len() != count * sites.len() * d_model {
            return Err(shape_err!(
                "{} values for {count} samples x {} sites x {d_model}",
                data.len(),
                sites.len()
            ));
        }
        if sites.windows(2).any(|w| w[0] >= w[1]) {
            return Err(invalid!("site directory must be strictly sorted"));
        }
        Ok(ActivationStore { task, d_model, sites, count, data })
    }

    pub fn site_index(&self, site: &SiteAddress) -> Option<usize> {
        self.sites.binary_search(site).ok()
    }

    pub fn vector(&self, sample: usize, site: usize) -> &[f64] {
        let off = (sample * self.sites.len() + site) * self.d_model;
        &self.data[off..off + self.d_model]
    }
}

/// Record one-shot activations of `filter`'s sites for the first
/// `n_samples` samples.
pub fn collect(
    w: &Weights,
    samples: &[TripletSample],
    n_samples: usize,
    filter: &SiteFilter,
) -> Result<ActivationStore> {
    if samples.is_empty() || n_samples == 0 {
        return Err(invalid!("collect needs at least one sample"));
    }
    let task = samples[0].task;
    let take = n_samples.min(samples.len());
    let mut maps = Vec::with_capacity(take);
    for s in &samples[..take] {
        if s.task != task {
            return Err(invalid!("mixed tasks in collection: {} and {}", task, s.task));
        }
        let prompt = assemble_prompt(s, PromptMode::OneShot, w.config.patch_side)?;
        maps.push(forward(w, &prompt, &PatchSet::new(), filter)?.sites);
    }
    ActivationStore::from_samples(task, &maps)
}

/// Per-site mean vectors of one task.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskMeans {
    pub count: usize,
    pub sites: Vec<SiteAddress>,
    /// `sites x d_model`.
    pub means: Vec<f64>,
}

impl TaskMeans {
    pub fn get(&self, site: &SiteAddress, d: usize) -> Option<&[f64]> {
        let i = self.sites.binary_search(site).ok()?;
        Some(&self.means[i * d..(i + 1) * d])
    }
}

/// Mean activations `mu[task][site]`.
#[derive(Debug, Clone, PartialEq)]
pub struct MeanActivationTable {
    pub d_model: usize,
    pub tasks: BTreeMap<TaskId, TaskMeans>,
}

impl MeanActivationTable {
    pub fn mean(&self, task: TaskId, site: &SiteAddress) -> Option<&[f64]> {
        self.tasks.get(&task)?.get(site, self.d_model)
    }

    /// Patch vectors of `task` for `sites`.
    pub fn patch_for<'a>(&self, task: TaskId, sites: impl IntoIterator<Item = &'a SiteAddress>) -> Result<PatchSet> {
        let means = self.tasks.get(&task).ok_or_else(|| Error::Missing(format!("mean activations for {task}")))?;
        let mut out = PatchSet::new();
        for site in sites {
            let v = means.get(site, self.d_model).ok_or_else(|| Error::Missing(format!("mean of {site} for {task}")))?;
            out.insert(*site, v.to_vec());
        }
        Ok(out)
    }

    /// Insert (or replace) one task's means; used for composed vectors.
    pub fn insert(&mut self, task: TaskId, means: TaskMeans) -> Result<()> {
        if means.means.len() != means.sites.len() * self.d_model {
            return Err(shape_err!("{} values for {} sites", means.means.len(), means.sites.len()));
        }
        self.tasks.insert(task, means);
        Ok(())
    }
}

/// One-pass running mean over a stream of equally shaped vectors.
#[derive(Debug, Clone)]
pub struct StreamingMean {
    count: usize,
    mean: Vec<f64>,
}

impl StreamingMean {
    pub fn new(len: usize) -> Self {
        StreamingMean { count: 0, mean: vec![0.0; len] }
    }

    pub fn push(&mut self, x: &[f64]) -> Result<()> {
        if x.len() != self.mean.len() {
            return Err(shape_err!("pushed {} values into a mean of {}", x.len(), self.mean.len()));
        }
        self.count += 1;
        let inv = 1.0 / self.count as f64;
        for (m, v) in self.mean.iter_mut().zip(x) {
            *m += (v - *m) * inv;
        }
        Ok(())
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn finish(self) -> Vec<f64> {
        self.mean
    }
}

/// Elementwise mean per `(task, site)`. Each task may appear only once.
pub fn mean_activations(stores: &[ActivationStore]) -> Result<MeanActivationTable> {
    let first = stores.first().ok_or_else(|| invalid!("no activation stores"))?;
    let d = first.d_model;
    let mut tasks = BTreeMap::new();
    for s in stores {
        if s.d_model != d {
            return Err(shape_err!("stores disagree on d_model: {} vs {d}", s.d_model));
        }
        let width = s.sites.len() * d;
        let mut acc = StreamingMean::new(width);
        for i in 0..s.count {
            acc.push(&s.data[i * width..(i + 1) * width])?;
        }
        let entry = TaskMeans { count: s.count, sites: s.sites.clone(), means: acc.finish() };
        if tasks.insert(s.task, entry).is_some() {
            return Err(invalid!("task {} given twice", s.task));
        }
    }
    Ok(MeanActivationTable { d_model: d, tasks })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{ModelConfig, Stage};
    use crate::numerics::Rng;
    use crate::tasks::gen_sample;
    use proptest::prelude::{prop_assert, proptest};

    fn site(t: usize) -> SiteAddress {
        SiteAddress::new(Stage::Encoder, 0, 0, t)
    }

    fn scalar_store(task: TaskId, values: &[f64]) -> ActivationStore {
        ActivationStore::from_raw(task, 1, vec![site(0)], values.len(), values.to_vec()).unwrap()
    }

    #[test]
    fn mean_of_two_scalars() {
        let t = mean_activations(&[scalar_store(TaskId::Segmentation, &[0.0, 2.0])]).unwrap();
        assert_eq!(t.mean(TaskId::Segmentation, &site(0)).unwrap(), &[1.0]);
        assert!(t.mean(TaskId::Lowlight, &site(0)).is_none());
    }

    #[test]
    fn mismatched_sites_are_rejected() {
        let mut a = BTreeMap::new();
        a.insert(site(0), vec![1.0]);
        let mut b = BTreeMap::new();
        b.insert(site(1), vec![1.0]);
        assert!(ActivationStore::from_samples(TaskId::Lowlight, &[a, b]).is_err());
        assert!(ActivationStore::from_samples(TaskId::Lowlight, &[]).is_err());
    }

    #[test]
    fn collect_counts_and_single_sample_mean() {
        let c = ModelConfig { enc_layers: 1, dec_layers: 1, ..ModelConfig::default() };
        let w = Weights::init(c, &Rng::new(1)).unwrap();
        let samples: Vec<_> = (0..3).map(|i| gen_sample(TaskId::Colorize, 8, &Rng::new(2).child(i)).unwrap()).collect();
        let store = collect(&w, &samples, 3, &SiteFilter::All).unwrap();
        let n_sites = c.sites(PromptMode::OneShot).len();
        assert_eq!(store.sites.len(), n_sites);
        assert_eq!(store.data.len(), 3 * n_sites * c.d_model);
        let one = collect(&w, &samples, 1, &SiteFilter::All).unwrap();
        let t = mean_activations(&[one.clone()]).unwrap();
        assert_eq!(t.tasks[&TaskId::Colorize].means, one.data);
        let twin = collect(&w, &[samples[0].clone(), samples[0].clone()], 2, &SiteFilter::All).unwrap();
        let m = mean_activations(&[twin.clone()]).unwrap();
        assert_eq!(m.tasks[&TaskId::Colorize].means, one.data);
        assert!(collect(&w, &[], 1, &SiteFilter::All).is_err());
    }

    proptest! {
        #[test]
        fn streaming_mean_matches_batch(xs in proptest::collection::vec(-1e3f64..1e3, 1..200)) {
            let mut s = StreamingMean::new(1);
            for x in &xs {
                s.push(&[*x]).unwrap();
            }
            let batch = xs.iter().sum::<f64>() / xs.len() as f64;
            let scale = xs.iter().fold(1.0f64, |m, x| m.max(x.abs()));
            prop_assert!((s.finish()[0] - batch).abs() <= 1e-12 * scale);
        }

        #[test]
        fn mean_is_linear(xs in proptest::collection::vec(-10f64..10.0, 1..40), a in -5f64..5.0) {
            let base = mean_activations(&[scalar_store(TaskId::Inpaint, &xs)]).unwrap();
            let scaled: Vec<f64> = xs.iter().map(|x| a * x).collect();
            let s = mean_activations(&[scalar_store(TaskId::Inpaint, &scaled)]).unwrap();
            let (m0, m1) = (base.tasks[&TaskId::Inpaint].means[0], s.tasks[&TaskId::Inpaint].means[0]);
            prop_assert!((a * m0 - m1).abs() < 1e-9);
        }
    }
}
