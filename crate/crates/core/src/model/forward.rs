// SPDX-License-Identifier: MIT OR Apache-2.0

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use super::weights::{BlockIdx, Weights};
use super::{ModelConfig, PatchSet, SiteAddress, SiteFilter, Stage};
use crate::error::{shape_err, Error, Result};
use crate::numerics::gelu;
use core::sync::atomic::{AtomicU64, Ordering};
use crate::tasks::{assemble_prompt, grid_position, patches_to_image, GridImage, PromptGrid, PromptMode, Quadrant, TokenRole, TripletSample};

pub(crate) const LN_EPS: f64 = 1e-5;

// ---------------------------------------------------------------------------
// Slice kernels (row-major)
// ---------------------------------------------------------------------------

/// `out[n x m] = x[n x k] * w[k x m] (+ b)`
pub(crate) fn linear(x: &[f64], n: usize, k: usize, w: &[f64], m: usize, b: Option<&[f64]>, out: &mut [f64]) {
    debug_assert_eq!(x.len(), n * k);
    debug_assert_eq!(w.len(), k * m);
    for r in 0..n {
        let orow = &mut out[r * m..(r + 1) * m];
        match b {
            Some(b) => orow.copy_from_slice(b),
            None => orow.iter_mut().for_each(|o| *o = 0.0),
        }
        let xrow = &x[r * k..(r + 1) * k];
        for (&xv, wrow) in xrow.iter().zip(w.chunks_exact(m)) {
            for (o, &wv) in orow.iter_mut().zip(wrow) {
                *o += xv * wv;
            }
        }
    }
}

/// Per-row layer norm; keeps normalised rows and inverse std for backward.
#[derive(Debug, Clone, Default)]
pub(crate) struct LnCache {
    pub xhat: Vec<f64>,
    pub inv: Vec<f64>,
}

pub(crate) fn layer_norm_rows(x: &[f64], n: usize, d: usize, g: &[f64], b: &[f64], out: &mut [f64]) -> LnCache {
    let mut xhat = vec![0.0; n * d];
    let mut inv = vec![0.0; n];
    for r in 0..n {
        let row = &x[r * d..(r + 1) * d];
        let mean = row.iter().sum::<f64>() / d as f64;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
        let iv = 1.0 / libm::sqrt(var + LN_EPS);
        inv[r] = iv;
        for e in 0..d {
            let xh = (row[e] - mean) * iv;
            xhat[r * d + e] = xh;
            out[r * d + e] = xh * g[e] + b[e];
        }
    }
    LnCache { xhat, inv }
}

/// Copy columns `off..off+dh` of an `n x d` matrix into a `dh x n` block.
pub(crate) fn transpose_head(x: &[f64], n: usize, d: usize, off: usize, dh: usize, out: &mut [f64]) {
    for (u, row) in x.chunks_exact(d).enumerate().take(n) {
        for e in 0..dh {
            out[e * n + u] = row[off + e];
        }
    }
}

// ---------------------------------------------------------------------------
// Forward with caches
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Default)]
pub(crate) struct LayerCache {
    pub x_in: Vec<f64>,
    pub ln1: LnCache,
    pub a: Vec<f64>,
    pub q: Vec<f64>,
    pub k: Vec<f64>,
    pub v: Vec<f64>,
    /// `heads x n x n` attention weights.
    pub att: Vec<f64>,
    /// Concatenated head outputs before the output projection, `n x d`.
    pub o: Vec<f64>,
    /// Per-head residual contributions actually added, `heads x n x d`.
    pub contrib: Vec<f64>,
    /// `heads x n`: contribution replaced by a patch.
    pub patched: Vec<bool>,
    pub ln2: LnCache,
    pub b: Vec<f64>,
    pub pre: Vec<f64>,
    pub hid: Vec<f64>,
    pub mlp_out: Vec<f64>,
    pub x_out: Vec<f64>,
}

#[derive(Debug, Clone, Default)]
pub(crate) struct ForwardCache {
    pub enc_positions: Vec<usize>,
    pub enc_layers: Vec<LayerCache>,
    pub enc_norm: LnCache,
    pub enc_out: Vec<f64>,
    pub dec_layers: Vec<LayerCache>,
    pub dec_norm: LnCache,
    pub dec_out: Vec<f64>,
    /// Raw (unclamped) bottom-right predictions, `q x patch_dim`.
    pub pred: Vec<f64>,
}

/// Dense lookup of patches for one stage: `[layer][head][frame token]`.
struct StagePatches<'a> {
    heads: usize,
    n: usize,
    slots: Vec<Option<&'a [f64]>>,
}

impl<'a> StagePatches<'a> {
    fn get(&self, layer: usize, head: usize, t: usize) -> Option<&'a [f64]> {
        self.slots[(layer * self.heads + head) * self.n + t]
    }
}

fn stage_patches<'a>(
    config: &ModelConfig,
    stage: Stage,
    frame: &[usize],
    patch: &'a PatchSet,
    mode: PromptMode,
) -> Result<StagePatches<'a>> {
    let layers = config.layers(stage);
    let n = frame.len();
    let mut slots = vec![None; layers * config.heads * n];
    for (site, value) in patch.range(SiteAddress::new(stage, 0, 0, 0)..) {
        if site.stage != stage {
            break;
        }
        let t = frame.binary_search(&usize::from(site.token));
        let (Ok(t), true) = (t, usize::from(site.layer) < layers && usize::from(site.head) < config.heads) else {
            return Err(Error::InvalidSite(format!("{site} for {} prompt", mode.name())));
        };
        if value.len() != config.d_model {
            return Err(shape_err!("patch for {site} has {} values, expected {}", value.len(), config.d_model));
        }
        if value.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("patch vector at {site}")));
        }
        slots[(usize::from(site.layer) * config.heads + usize::from(site.head)) * n + t] = Some(value.as_slice());
    }
    Ok(StagePatches { heads: config.heads, n, slots })
}

fn block_forward(
    w: &Weights,
    blk: &BlockIdx,
    x: Vec<f64>,
    n: usize,
    layer: usize,
    patches: &StagePatches<'_>,
) -> LayerCache {
    let c = &w.config;
    let p = &w.params;
    let (d, h, heads, dh) = (c.d_model, c.mlp_hidden, c.heads, c.d_head());
    let mut a = vec![0.0; n * d];
    let ln1 = layer_norm_rows(&x, n, d, &p[blk.ln1_g.clone()], &p[blk.ln1_b.clone()], &mut a);
    let mut q = vec![0.0; n * d];
    let mut k = vec![0.0; n * d];
    let mut v = vec![0.0; n * d];
    linear(&a, n, d, &p[blk.wq.clone()], d, None, &mut q);
    linear(&a, n, d, &p[blk.wk.clone()], d, None, &mut k);
    linear(&a, n, d, &p[blk.wv.clone()], d, None, &mut v);
    let scale = 1.0 / libm::sqrt(dh as f64);
    let mut att = vec![0.0; heads * n * n];
    let mut o = vec![0.0; n * d];
    let mut kt = vec![0.0; dh * n];
    for m in 0..heads {
        let off = m * dh;
        transpose_head(&k, n, d, off, dh, &mut kt);
        for t in 0..n {
            let row = &mut att[(m * n + t) * n..(m * n + t + 1) * n];
            for (e, ktr) in kt.chunks_exact(n).enumerate() {
                let qv = q[t * d + off + e] * scale;
                for (s, &kv) in row.iter_mut().zip(ktr) {
                    *s += qv * kv;
                }
            }
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for s in row.iter_mut() {
                *s = libm::exp(*s - max);
                sum += *s;
            }
            let inv = 1.0 / sum;
            row.iter_mut().for_each(|s| *s *= inv);
            let ot = &mut o[t * d + off..t * d + off + dh];
            for (&wt, vu) in row.iter().zip(v.chunks_exact(d)) {
                for (oe, ve) in ot.iter_mut().zip(&vu[off..off + dh]) {
                    *oe += wt * ve;
                }
            }
        }
    }
    let wo = &p[blk.wo.clone()];
    let mut contrib = vec![0.0; heads * n * d];
    let mut patched = vec![false; heads * n];
    let mut x_mid = x.clone();
    for m in 0..heads {
        for t in 0..n {
            let dst = &mut contrib[(m * n + t) * d..(m * n + t + 1) * d];
            if let Some(pv) = patches.get(layer, m, t) {
                dst.copy_from_slice(pv);
                patched[m * n + t] = true;
            } else {
                let ot = &o[t * d + m * dh..t * d + (m + 1) * dh];
                linear(ot, 1, dh, &wo[m * dh * d..(m + 1) * dh * d], d, None, dst);
            }
            for (xm, cv) in x_mid[t * d..(t + 1) * d].iter_mut().zip(dst.iter()) {
                *xm += cv;
            }
        }
    }
    let mut b = vec![0.0; n * d];
    let ln2 = layer_norm_rows(&x_mid, n, d, &p[blk.ln2_g.clone()], &p[blk.ln2_b.clone()], &mut b);
    let mut pre = vec![0.0; n * h];
    linear(&b, n, d, &p[blk.w1.clone()], h, Some(&p[blk.b1.clone()]), &mut pre);
    let hid: Vec<f64> = pre.iter().map(|&z| gelu(z)).collect();
    let mut mlp_out = vec![0.0; n * d];
    linear(&hid, n, h, &p[blk.w2.clone()], d, Some(&p[blk.b2.clone()]), &mut mlp_out);
    let x_out: Vec<f64> = x_mid.iter().zip(&mlp_out).map(|(a, b)| a + b).collect();
    LayerCache { x_in: x, ln1, a, q, k, v, att, o, contrib, patched, ln2, b, pre, hid, mlp_out, x_out }
}

pub(crate) fn check_prompt(config: &ModelConfig, prompt: &PromptGrid) -> Result<()> {
    if prompt.patch_side != config.patch_side || prompt.image_side != config.image_side {
        return Err(shape_err!(
            "prompt is {}px in {}px patches, model expects {}px in {}px patches",
            prompt.image_side,
            prompt.patch_side,
            config.image_side,
            config.patch_side
        ));
    }
    Ok(())
}

pub(crate) fn forward_cached(w: &Weights, prompt: &PromptGrid, patch: &PatchSet) -> Result<ForwardCache> {
    let c = &w.config;
    check_prompt(c, prompt)?;
    let p = &w.params;
    let idx = &w.index;
    let (d, npos, pd) = (c.d_model, c.n_positions(), c.patch_dim());
    let enc_positions = prompt.encoder_positions.clone();
    let enc_patches = stage_patches(c, Stage::Encoder, &enc_positions, patch, prompt.mode)?;
    let all_positions: Vec<usize> = (0..npos).collect();
    let dec_patches = stage_patches(c, Stage::Decoder, &all_positions, patch, prompt.mode)?;

    // encoder input: CLS or embedded patch, plus position
    let ne = enc_positions.len();
    let mut x = vec![0.0; ne * d];
    for (t, &pos) in enc_positions.iter().enumerate() {
        let row = &mut x[t * d..(t + 1) * d];
        if pos == 0 {
            row.copy_from_slice(&p[idx.cls.clone()]);
        } else {
            let patch_px = prompt.tokens[pos].as_deref().ok_or_else(|| Error::Missing(format!("patch at position {pos}")))?;
            linear(patch_px, 1, pd, &p[idx.patch_w.clone()], d, Some(&p[idx.patch_b.clone()]), row);
        }
        let pe = &p[idx.enc_pos.start + pos * d..idx.enc_pos.start + (pos + 1) * d];
        row.iter_mut().zip(pe).for_each(|(r, e)| *r += e);
    }
    let mut enc_layers = Vec::with_capacity(c.enc_layers);
    for (l, blk) in idx.enc.iter().enumerate() {
        let cache = block_forward(w, blk, x, ne, l, &enc_patches);
        x = cache.x_out.clone();
        enc_layers.push(cache);
    }
    let mut enc_out = vec![0.0; ne * d];
    let enc_norm = layer_norm_rows(&x, ne, d, &p[idx.enc_norm_g.clone()], &p[idx.enc_norm_b.clone()], &mut enc_out);

    // decoder input over the full grid
    let mut x = vec![0.0; npos * d];
    let mut embedded = vec![0.0; ne * d];
    linear(&enc_out, ne, d, &p[idx.dec_w.clone()], d, Some(&p[idx.dec_b.clone()]), &mut embedded);
    for pos in 0..npos {
        x[pos * d..(pos + 1) * d].copy_from_slice(&p[idx.mask_token.clone()]);
    }
    for (t, &pos) in enc_positions.iter().enumerate() {
        x[pos * d..(pos + 1) * d].copy_from_slice(&embedded[t * d..(t + 1) * d]);
    }
    for pos in 0..npos {
        let pe = &p[idx.dec_pos.start + pos * d..idx.dec_pos.start + (pos + 1) * d];
        x[pos * d..(pos + 1) * d].iter_mut().zip(pe).for_each(|(r, e)| *r += e);
    }
    let mut dec_layers = Vec::with_capacity(c.dec_layers);
    for (l, blk) in idx.dec.iter().enumerate() {
        let cache = block_forward(w, blk, x, npos, l, &dec_patches);
        x = cache.x_out.clone();
        dec_layers.push(cache);
    }
    let mut dec_out = vec![0.0; npos * d];
    let dec_norm = layer_norm_rows(&x, npos, d, &p[idx.dec_norm_g.clone()], &p[idx.dec_norm_b.clone()], &mut dec_out);

    let q = c.q();
    let br0 = grid_position(TokenRole::Quad(Quadrant::BR), 0, q);
    let mut pred = vec![0.0; q * pd];
    linear(&dec_out[br0 * d..(br0 + q) * d], q, d, &p[idx.head_w.clone()], pd, Some(&p[idx.head_b.clone()]), &mut pred);
    if pred.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("model output".into()));
    }
    Ok(ForwardCache { enc_positions, enc_layers, enc_norm, enc_out, dec_layers, dec_norm, dec_out, pred })
}

// ---------------------------------------------------------------------------
// Public surface
// ---------------------------------------------------------------------------

/// Residual-stream bookkeeping for one layer, `n x d` each.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerRecord {
    pub stage: Stage,
    pub layer: usize,
    /// Grid position of each row.
    pub positions: Vec<usize>,
    pub input: Vec<f64>,
    /// Per head, `n x d`.
    pub head_contrib: Vec<Vec<f64>>,
    pub mlp_out: Vec<f64>,
    pub output: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForwardTrace {
    pub sites: BTreeMap<SiteAddress, Vec<f64>>,
    /// Clamped bottom-right reconstruction.
    pub output: GridImage,
    /// Raw bottom-right patch predictions, `q x patch_dim`.
    pub raw: Vec<f64>,
}

impl ForwardCache {
    pub(crate) fn output_image(&self, c: &ModelConfig) -> GridImage {
        let pd = c.patch_dim();
        let patches: Vec<&[f64]> = self.pred.chunks(pd).collect();
        patches_to_image(&patches, c.image_side, c.patch_side)
    }

    fn record(&self, c: &ModelConfig, filter: &SiteFilter) -> BTreeMap<SiteAddress, Vec<f64>> {
        let mut out = BTreeMap::new();
        if filter.is_nothing() {
            return out;
        }
        let d = c.d_model;
        let all: Vec<usize> = (0..c.n_positions()).collect();
        for (stage, layers, frame) in
            [(Stage::Encoder, &self.enc_layers, &self.enc_positions), (Stage::Decoder, &self.dec_layers, &all)]
        {
            for (l, lc) in layers.iter().enumerate() {
                let n = frame.len();
                for m in 0..c.heads {
                    for (t, &pos) in frame.iter().enumerate() {
                        let site = SiteAddress::new(stage, l, m, pos);
                        if filter.accepts(&site) {
                            out.insert(site, lc.contrib[(m * n + t) * d..(m * n + t + 1) * d].to_vec());
                        }
                    }
                }
            }
        }
        out
    }

    pub(crate) fn layer_records(&self, c: &ModelConfig) -> Vec<LayerRecord> {
        let d = c.d_model;
        let all: Vec<usize> = (0..c.n_positions()).collect();
        let mut out = Vec::new();
        for (stage, layers, frame) in
            [(Stage::Encoder, &self.enc_layers, &self.enc_positions), (Stage::Decoder, &self.dec_layers, &all)]
        {
            for (l, lc) in layers.iter().enumerate() {
                let n = frame.len();
                out.push(LayerRecord {
                    stage,
                    layer: l,
                    positions: frame.clone(),
                    input: lc.x_in.clone(),
                    head_contrib: (0..c.heads).map(|m| lc.contrib[m * n * d..(m + 1) * n * d].to_vec()).collect(),
                    mlp_out: lc.mlp_out.clone(),
                    output: lc.x_out.clone(),
                });
            }
        }
        out
    }
}

static FORWARDS: AtomicU64 = AtomicU64::new(0);

/// Process-wide count of [`forward`] calls, for cache accounting.
pub fn forward_count() -> u64 {
    FORWARDS.load(Ordering::Relaxed)
}

/// Run the model on `prompt`, replacing patched site contributions and
/// recording the sites accepted by `record`.
pub fn forward(w: &Weights, prompt: &PromptGrid, patch: &PatchSet, record: &SiteFilter) -> Result<ForwardTrace> {
    FORWARDS.fetch_add(1, Ordering::Relaxed);
    let cache = forward_cached(w, prompt, patch)?;
    Ok(ForwardTrace { sites: cache.record(&w.config, record), output: cache.output_image(&w.config), raw: cache.pred })
}

/// Like [`forward`] but also returns per-layer residual bookkeeping.
pub fn forward_layers(w: &Weights, prompt: &PromptGrid, patch: &PatchSet) -> Result<Vec<LayerRecord>> {
    Ok(forward_cached(w, prompt, patch)?.layer_records(&w.config))
}

pub fn one_shot_predict(w: &Weights, sample: &TripletSample) -> Result<GridImage> {
    let prompt = assemble_prompt(sample, PromptMode::OneShot, w.config.patch_side)?;
    Ok(forward(w, &prompt, &PatchSet::new(), &SiteFilter::Nothing)?.output)
}

/// Query-only prediction steered by `patch`; no support pair is involved.
pub fn tv_predict(w: &Weights, x_q: &GridImage, patch: &PatchSet) -> Result<GridImage> {
    let prompt = query_prompt(x_q, w.config.patch_side)?;
    Ok(forward(w, &prompt, patch, &SiteFilter::Nothing)?.output)
}

/// Query-only prompt for a bare query image.
pub fn query_prompt(x_q: &GridImage, patch_side: usize) -> Result<PromptGrid> {
    let blank = GridImage::filled(x_q.side, 0.0);
    let sample = TripletSample {
        task: crate::tasks::TaskId::Identity,
        x_s: blank.clone(),
        y_s: blank.clone(),
        x_q: x_q.clone(),
        y_q: blank,
    };
    assemble_prompt(&sample, PromptMode::QueryOnly, patch_side)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{layer_norm, softmax, Rng};
    use crate::tasks::{gen_sample, TaskId};

    fn small() -> (Weights, PromptGrid) {
        let w = Weights::init(ModelConfig::default(), &Rng::new(1)).unwrap();
        let s = gen_sample(TaskId::Lowlight, 8, &Rng::new(2)).unwrap();
        let p = assemble_prompt(&s, PromptMode::OneShot, 2).unwrap();
        (w, p)
    }

    #[test]
    fn replaying_recorded_sites_is_bit_exact() {
        let (w, p) = small();
        let t = forward(&w, &p, &PatchSet::new(), &SiteFilter::All).unwrap();
        assert_eq!(t.sites.len(), w.config.sites(PromptMode::OneShot).len());
        let replay = forward(&w, &p, &t.sites, &SiteFilter::All).unwrap();
        assert_eq!(replay.raw, t.raw);
        assert_eq!(replay.sites, t.sites);
    }

    #[test]
    fn zero_output_projection_makes_zero_patches_inert() {
        let (mut w, p) = small();
        w.zero_attention_outputs();
        let base = forward(&w, &p, &PatchSet::new(), &SiteFilter::Nothing).unwrap();
        let zeros: PatchSet = w.config.sites(PromptMode::OneShot).into_iter().map(|s| (s, vec![0.0; 32])).collect();
        let patched = forward(&w, &p, &zeros, &SiteFilter::Nothing).unwrap();
        assert_eq!(base.raw, patched.raw);
    }

    #[test]
    fn invalid_and_non_finite_patches_are_rejected() {
        let (w, p) = small();
        let qo = PromptGrid { mode: PromptMode::QueryOnly, ..p.clone() };
        let mut bad = PatchSet::new();
        bad.insert(SiteAddress::new(Stage::Encoder, 0, 0, 60), vec![0.0; 32]);
        let e = forward(&w, &p, &bad, &SiteFilter::Nothing).unwrap_err();
        assert!(matches!(e, Error::InvalidSite(ref s) if s.contains("enc.L0.H0.T60")), "{e}");
        let mut nan = PatchSet::new();
        nan.insert(SiteAddress::new(Stage::Decoder, 0, 0, 3), vec![f64::NAN; 32]);
        assert!(matches!(forward(&w, &qo, &nan, &SiteFilter::Nothing), Err(Error::NonFinite(_))));
    }

    #[test]
    fn site_contributions_account_for_each_layer() {
        let (w, p) = small();
        for rec in forward_layers(&w, &p, &PatchSet::new()).unwrap() {
            for i in 0..rec.output.len() {
                let heads: f64 = rec.head_contrib.iter().map(|h| h[i]).sum();
                let total = rec.input[i] + heads + rec.mlp_out[i];
                assert!((total - rec.output[i]).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn untrained_outputs_are_finite_and_in_range() {
        let (w, _) = small();
        let s = gen_sample(TaskId::Inpaint, 8, &Rng::new(3)).unwrap();
        let a = one_shot_predict(&w, &s).unwrap();
        assert_eq!(a, one_shot_predict(&w, &s).unwrap());
        assert!(a.pixels.iter().all(|v| (0.0..=1.0).contains(v)));
        let b = tv_predict(&w, &s.x_q, &PatchSet::new()).unwrap();
        assert!(b.pixels.iter().all(|v| v.is_finite()));
    }

    /// Dense reference for a 1-layer, 1-head encoder block on two tokens.
    #[test]
    fn block_matches_dense_reference() {
        let cfg = ModelConfig { d_model: 4, enc_layers: 1, dec_layers: 0, heads: 1, mlp_hidden: 3, patch_side: 2, image_side: 4 };
        let w = Weights::init(cfg, &Rng::new(7)).unwrap();
        let blk = &w.index.enc[0];
        let p = &w.params;
        let mut r = Rng::new(8);
        let x: Vec<f64> = (0..8).map(|_| r.normal()).collect();
        let none = StagePatches { heads: 1, n: 2, slots: vec![None; 2] };
        let got = block_forward(&w, blk, x.clone(), 2, 0, &none).x_out;

        let mat = |r: &core::ops::Range<usize>, rows: usize, cols: usize| -> Vec<Vec<f64>> {
            (0..rows).map(|i| p[r.start + i * cols..r.start + (i + 1) * cols].to_vec()).collect()
        };
        let vecmat = |v: &[f64], m: &Vec<Vec<f64>>| -> Vec<f64> {
            (0..m[0].len()).map(|j| (0..v.len()).map(|i| v[i] * m[i][j]).sum()).collect()
        };
        let (wq, wk, wv, wo) = (mat(&blk.wq, 4, 4), mat(&blk.wk, 4, 4), mat(&blk.wv, 4, 4), mat(&blk.wo, 4, 4));
        let rows: Vec<Vec<f64>> = x.chunks(4).map(|c| c.to_vec()).collect();
        let a: Vec<Vec<f64>> = rows
            .iter()
            .map(|r| layer_norm(r, &p[blk.ln1_g.clone()], &p[blk.ln1_b.clone()], LN_EPS).unwrap())
            .collect();
        let qs: Vec<Vec<f64>> = a.iter().map(|r| vecmat(r, &wq)).collect();
        let ks: Vec<Vec<f64>> = a.iter().map(|r| vecmat(r, &wk)).collect();
        let vs: Vec<Vec<f64>> = a.iter().map(|r| vecmat(r, &wv)).collect();
        for t in 0..2 {
            let scores: Vec<f64> = (0..2).map(|u| crate::numerics::dot(&qs[t], &ks[u]) / 2.0).collect();
            let att = softmax(&scores).unwrap();
            let o: Vec<f64> = (0..4).map(|e| att[0] * vs[0][e] + att[1] * vs[1][e]).collect();
            let mid: Vec<f64> = rows[t].iter().zip(vecmat(&o, &wo)).map(|(a, b)| a + b).collect();
            let b = layer_norm(&mid, &p[blk.ln2_g.clone()], &p[blk.ln2_b.clone()], LN_EPS).unwrap();
            let hid: Vec<f64> = vecmat(&b, &mat(&blk.w1, 4, 3)).iter().zip(&p[blk.b1.clone()]).map(|(z, b)| gelu(z + b)).collect();
            let out: Vec<f64> = vecmat(&hid, &mat(&blk.w2, 3, 4)).iter().zip(&p[blk.b2.clone()]).zip(&mid).map(|((y, b), m)| y + b + m).collect();
            for e in 0..4 {
                assert!((out[e] - got[t * 4 + e]).abs() < 1e-12);
            }
        }
    }
}
