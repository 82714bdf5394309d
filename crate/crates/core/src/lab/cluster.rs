// SPDX-License-Identifier: MIT OR Apache-2.0

use alloc::vec;
use alloc::vec::Vec;

use super::ActivationStore;
use crate::error::{invalid, shape_err, Error, Result};
use crate::model::Stage;
use crate::numerics::{euclidean, pca_project, Mat};
use crate::tasks::TaskId;

/// Dense cluster ids `0..k` and their sizes.
fn relabel(labels: &[usize]) -> (Vec<usize>, Vec<usize>) {
    let mut ids: Vec<usize> = labels.to_vec();
    ids.sort_unstable();
    ids.dedup();
    let dense: Vec<usize> = labels.iter().map(|l| ids.binary_search(l).unwrap_or(0)).collect();
    let mut sizes = vec![0; ids.len()];
    for &l in &dense {
        sizes[l] += 1;
    }
    (dense, sizes)
}

fn check(x: &Mat, labels: &[usize]) -> Result<()> {
    if x.rows != labels.len() {
        return Err(shape_err!("{} rows for {} labels", x.rows, labels.len()));
    }
    Ok(())
}

/// Mean silhouette with Euclidean distance. Every cluster needs at least 2
/// points; a singleton has no defined intra-cluster distance and is an error.
pub fn silhouette(x: &Mat, labels: &[usize]) -> Result<f64> {
    check(x, labels)?;
    let (lab, sizes) = relabel(labels);
    let k = sizes.len();
    if k < 2 {
        return Err(invalid!("silhouette needs at least 2 clusters, got {k}"));
    }
    if let Some(c) = sizes.iter().position(|&s| s < 2) {
        return Err(invalid!("cluster {c} has a single point"));
    }
    let n = x.rows;
    let mut total = 0.0;
    let mut sums = vec![0.0; k];
    for i in 0..n {
        sums.iter_mut().for_each(|s| *s = 0.0);
        for j in 0..n {
            if j != i {
                sums[lab[j]] += euclidean(x.row(i), x.row(j));
            }
        }
        let own = lab[i];
        let a = sums[own] / (sizes[own] - 1) as f64;
        let b = (0..k).filter(|&c| c != own).map(|c| sums[c] / sizes[c] as f64).fold(f64::INFINITY, f64::min);
        let m = a.max(b);
        total += if m > 0.0 { (b - a) / m } else { 0.0 };
    }
    Ok(total / n as f64)
}

/// Davies-Bouldin index (lower is better).
pub fn davies_bouldin(x: &Mat, labels: &[usize]) -> Result<f64> {
    check(x, labels)?;
    let (lab, sizes) = relabel(labels);
    let k = sizes.len();
    if k < 2 {
        return Err(invalid!("davies-bouldin needs at least 2 clusters, got {k}"));
    }
    let d = x.cols;
    let mut centroids = vec![vec![0.0; d]; k];
    for (i, &l) in lab.iter().enumerate() {
        for (c, v) in centroids[l].iter_mut().zip(x.row(i)) {
            *c += v;
        }
    }
    for (c, &s) in centroids.iter_mut().zip(&sizes) {
        c.iter_mut().for_each(|v| *v /= s as f64);
    }
    let mut spread = vec![0.0; k];
    for (i, &l) in lab.iter().enumerate() {
        spread[l] += euclidean(x.row(i), &centroids[l]);
    }
    for (s, &n) in spread.iter_mut().zip(&sizes) {
        *s /= n as f64;
    }
    let mut total = 0.0;
    for a in 0..k {
        let mut worst = 0.0f64;
        for b in 0..k {
            if a == b {
                continue;
            }
            let m = euclidean(&centroids[a], &centroids[b]);
            if m == 0.0 {
                return Err(Error::DegenerateCentroids(a.min(b), a.max(b)));
            }
            worst = worst.max((spread[a] + spread[b]) / m);
        }
        total += worst;
    }
    Ok(total / k as f64)
}

/// Clustering quality of one head's activations across tasks.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadCluster {
    pub stage: Stage,
    pub layer: u16,
    pub head: u16,
    pub silhouette: f64,
    pub davies_bouldin: f64,
    /// PCA projection, one `(x, y, task)` per sample.
    pub points: Vec<(f64, f64, TaskId)>,
}

/// Per-sample vectors of one head: its token sites concatenated in site
/// order, rows grouped by store.
pub fn head_matrix(stores: &[ActivationStore], stage: Stage, layer: u16, head: u16) -> Result<(Mat, Vec<usize>)> {
    let first = stores.first().ok_or_else(|| invalid!("no stores"))?;
    let idx: Vec<usize> = first
        .sites
        .iter()
        .enumerate()
        .filter(|(_, s)| s.stage == stage && s.layer == layer && s.head == head)
        .map(|(i, _)| i)
        .collect();
    if idx.is_empty() {
        return Err(Error::Missing(alloc::format!("sites of head {}.L{layer}.H{head}", stage.name())));
    }
    let mut data = Vec::new();
    let mut labels = Vec::new();
    for (j, s) in stores.iter().enumerate() {
        if s.sites != first.sites {
            return Err(shape_err!("stores of {} and {} cover different sites", first.task, s.task));
        }
        for i in 0..s.count {
            for &k in &idx {
                data.extend_from_slice(s.vector(i, k));
            }
            labels.push(j);
        }
    }
    let rows = labels.len();
    Ok((Mat::from_vec(rows, idx.len() * first.d_model, data)?, labels))
}

/// Silhouette, Davies-Bouldin and a 2D PCA projection of one head, with
/// task labels.
pub fn cluster_report(stores: &[ActivationStore], stage: Stage, layer: u16, head: u16) -> Result<HeadCluster> {
    if stores.len() < 2 {
        return Err(invalid!("clustering needs at least 2 tasks"));
    }
    let (x, labels) = head_matrix(stores, stage, layer, head)?;
    let pca = pca_project(&x, 2.min(x.cols).min(x.rows))?;
    let points = (0..x.rows)
        .map(|r| {
            let p = pca.projection.row(r);
            (p[0], p.get(1).copied().unwrap_or(0.0), stores[labels[r]].task)
        })
        .collect();
    Ok(HeadCluster {
        stage,
        layer,
        head,
        silhouette: silhouette(&x, &labels)?,
        davies_bouldin: davies_bouldin(&x, &labels)?,
        points,
    })
}
