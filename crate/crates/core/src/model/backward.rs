// SPDX-License-Identifier: MIT OR Apache-2.0

//! Hand-derived reverse-mode gradients of the reconstruction loss.

use alloc::vec;
use alloc::vec::Vec;

use super::forward::{forward_cached, transpose_head, LayerCache, LnCache};
use super::weights::{BlockIdx, Weights};
use super::PatchSet;
use crate::error::{shape_err, Result};
use crate::numerics::{gelu_grad, Rng};
use crate::tasks::{grid_position, image_to_patches, GridImage, PromptGrid, Quadrant, TokenRole};

/// `dx += dy * w^T`, `dw += x^T * dy`, `db += colsum(dy)`.
#[allow(clippy::too_many_arguments)]
fn linear_back(
    x: &[f64],
    n: usize,
    k: usize,
    w: &[f64],
    m: usize,
    dy: &[f64],
    dx: Option<&mut [f64]>,
    dw: &mut [f64],
    db: Option<&mut [f64]>,
) {
    for r in 0..n {
        let dyr = &dy[r * m..(r + 1) * m];
        let xr = &x[r * k..(r + 1) * k];
        for (i, &xv) in xr.iter().enumerate() {
            if xv == 0.0 {
                continue;
            }
            for (g, &d) in dw[i * m..(i + 1) * m].iter_mut().zip(dyr) {
                *g += xv * d;
            }
        }
    }
    if let Some(dx) = dx {
        for r in 0..n {
            let dyr = &dy[r * m..(r + 1) * m];
            for i in 0..k {
                let wrow = &w[i * m..(i + 1) * m];
                dx[r * k + i] += wrow.iter().zip(dyr).map(|(a, b)| a * b).sum::<f64>();
            }
        }
    }
    if let Some(db) = db {
        for r in 0..n {
            for (g, &d) in db.iter_mut().zip(&dy[r * m..(r + 1) * m]) {
                *g += d;
            }
        }
    }
}

/// Backward of per-row layer norm; returns `dx`.
fn ln_back(cache: &LnCache, n: usize, d: usize, g: &[f64], dy: &[f64], dg: &mut [f64], db: &mut [f64]) -> Vec<f64> {
    let mut dx = vec![0.0; n * d];
    for r in 0..n {
        let xh = &cache.xhat[r * d..(r + 1) * d];
        let dyr = &dy[r * d..(r + 1) * d];
        let mut mean_dxh = 0.0;
        let mut mean_dxh_xh = 0.0;
        for e in 0..d {
            dg[e] += dyr[e] * xh[e];
            db[e] += dyr[e];
            let dxh = dyr[e] * g[e];
            mean_dxh += dxh;
            mean_dxh_xh += dxh * xh[e];
        }
        mean_dxh /= d as f64;
        mean_dxh_xh /= d as f64;
        for e in 0..d {
            let dxh = dyr[e] * g[e];
            dx[r * d + e] = cache.inv[r] * (dxh - mean_dxh - xh[e] * mean_dxh_xh);
        }
    }
    dx
}

/// Backward through one block. `dy` is the gradient w.r.t. the block
/// output; returns the gradient w.r.t. its input.
fn block_back(w: &Weights, blk: &BlockIdx, lc: &LayerCache, n: usize, dy: &[f64], grad: &mut [f64]) -> Vec<f64> {
    let c = &w.config;
    let p = &w.params;
    let (d, h, heads, dh) = (c.d_model, c.mlp_hidden, c.heads, c.d_head());

    // MLP branch
    let mut dhid = vec![0.0; n * h];
    linear_back(&lc.hid, n, h, &p[blk.w2.clone()], d, dy, Some(&mut dhid), &mut grad[blk.w2.clone()], None);
    add_into(grad, &blk.b2, &colsum(dy, n, d));
    let dpre: Vec<f64> = dhid.iter().zip(&lc.pre).map(|(g, &z)| g * gelu_grad(z)).collect();
    let mut db_ln = vec![0.0; n * d];
    linear_back(&lc.b, n, d, &p[blk.w1.clone()], h, &dpre, Some(&mut db_ln), &mut grad[blk.w1.clone()], None);
    add_into(grad, &blk.b1, &colsum(&dpre, n, h));
    let (mut dg, mut dbeta) = (vec![0.0; d], vec![0.0; d]);
    let dmid_ln = ln_back(&lc.ln2, n, d, &p[blk.ln2_g.clone()], &db_ln, &mut dg, &mut dbeta);
    add_into(grad, &blk.ln2_g, &dg);
    add_into(grad, &blk.ln2_b, &dbeta);
    let dmid: Vec<f64> = dy.iter().zip(&dmid_ln).map(|(a, b)| a + b).collect();

    // attention branch; patched contributions block the gradient
    let wo = &p[blk.wo.clone()];
    let mut do_ = vec![0.0; n * d];
    let mut dwo = vec![0.0; d * d];
    for m in 0..heads {
        for t in 0..n {
            if lc.patched[m * n + t] {
                continue;
            }
            let dct = &dmid[t * d..(t + 1) * d];
            let ot = &lc.o[t * d + m * dh..t * d + (m + 1) * dh];
            for j in 0..dh {
                let row = m * dh + j;
                let wrow = &wo[row * d..(row + 1) * d];
                do_[t * d + row] = wrow.iter().zip(dct).map(|(a, b)| a * b).sum();
                for (g, &dc) in dwo[row * d..(row + 1) * d].iter_mut().zip(dct) {
                    *g += ot[j] * dc;
                }
            }
        }
    }
    add_into(grad, &blk.wo, &dwo);
    let scale = 1.0 / libm::sqrt(dh as f64);
    let mut dq = vec![0.0; n * d];
    let mut dk = vec![0.0; n * d];
    let mut dv = vec![0.0; n * d];
    let mut datt = vec![0.0; n];
    let mut ds = vec![0.0; n];
    let mut kt = vec![0.0; dh * n];
    let mut vt = vec![0.0; dh * n];
    let mut dkt = vec![0.0; dh * n];
    let mut dvt = vec![0.0; dh * n];
    for m in 0..heads {
        let off = m * dh;
        transpose_head(&lc.k, n, d, off, dh, &mut kt);
        transpose_head(&lc.v, n, d, off, dh, &mut vt);
        dkt.iter_mut().for_each(|x| *x = 0.0);
        dvt.iter_mut().for_each(|x| *x = 0.0);
        for t in 0..n {
            let arow = &lc.att[(m * n + t) * n..(m * n + t + 1) * n];
            datt.iter_mut().for_each(|x| *x = 0.0);
            for e in 0..dh {
                let g = do_[t * d + off + e];
                if g == 0.0 {
                    continue;
                }
                for (da, &vv) in datt.iter_mut().zip(&vt[e * n..(e + 1) * n]) {
                    *da += g * vv;
                }
                for (dvv, &a) in dvt[e * n..(e + 1) * n].iter_mut().zip(arow) {
                    *dvv += g * a;
                }
            }
            let inner: f64 = arow.iter().zip(&datt).map(|(a, b)| a * b).sum();
            for ((dsu, &a), &da) in ds.iter_mut().zip(arow).zip(&datt) {
                *dsu = a * (da - inner) * scale;
            }
            for e in 0..dh {
                dq[t * d + off + e] = ds.iter().zip(&kt[e * n..(e + 1) * n]).map(|(a, b)| a * b).sum();
                let qv = lc.q[t * d + off + e];
                for (dkk, &dsu) in dkt[e * n..(e + 1) * n].iter_mut().zip(&ds) {
                    *dkk += qv * dsu;
                }
            }
        }
        for u in 0..n {
            for e in 0..dh {
                dk[u * d + off + e] = dkt[e * n + u];
                dv[u * d + off + e] = dvt[e * n + u];
            }
        }
    }
    let mut da = vec![0.0; n * d];
    linear_back(&lc.a, n, d, &p[blk.wq.clone()], d, &dq, Some(&mut da), &mut grad[blk.wq.clone()], None);
    linear_back(&lc.a, n, d, &p[blk.wk.clone()], d, &dk, Some(&mut da), &mut grad[blk.wk.clone()], None);
    linear_back(&lc.a, n, d, &p[blk.wv.clone()], d, &dv, Some(&mut da), &mut grad[blk.wv.clone()], None);
    let (mut dg, mut dbeta) = (vec![0.0; d], vec![0.0; d]);
    let dx_ln = ln_back(&lc.ln1, n, d, &p[blk.ln1_g.clone()], &da, &mut dg, &mut dbeta);
    add_into(grad, &blk.ln1_g, &dg);
    add_into(grad, &blk.ln1_b, &dbeta);
    dmid.iter().zip(&dx_ln).map(|(a, b)| a + b).collect()
}

fn add_into(grad: &mut [f64], r: &core::ops::Range<usize>, v: &[f64]) {
    for (g, x) in grad[r.clone()].iter_mut().zip(v) {
        *g += x;
    }
}

fn colsum(x: &[f64], n: usize, m: usize) -> Vec<f64> {
    let mut out = vec![0.0; m];
    for r in 0..n {
        for (o, v) in out.iter_mut().zip(&x[r * m..(r + 1) * m]) {
            *o += v;
        }
    }
    out
}

/// Mean squared error of the raw bottom-right prediction against `target`
/// and its gradient with respect to every parameter.
pub fn loss_and_grad(w: &Weights, prompt: &PromptGrid, target: &GridImage) -> Result<(f64, Vec<f64>)> {
    let c = &w.config;
    if target.side != c.image_side {
        return Err(shape_err!("target side {} for a {}px model", target.side, c.image_side));
    }
    let cache = forward_cached(w, prompt, &PatchSet::new())?;
    let (d, pd, q, npos) = (c.d_model, c.patch_dim(), c.q(), c.n_positions());
    let tgt: Vec<f64> = image_to_patches(target, c.patch_side).concat();
    let count = tgt.len() as f64;
    let mut loss = 0.0;
    let mut dpred = vec![0.0; tgt.len()];
    for ((g, p), t) in dpred.iter_mut().zip(&cache.pred).zip(&tgt) {
        let diff = p - t;
        loss += diff * diff;
        *g = 2.0 * diff / count;
    }
    loss /= count;

    let idx = &w.index;
    let p = &w.params;
    let mut grad = vec![0.0; w.params.len()];
    let br0 = grid_position(TokenRole::Quad(Quadrant::BR), 0, q);
    let mut ddec_out = vec![0.0; npos * d];
    linear_back(
        &cache.dec_out[br0 * d..(br0 + q) * d],
        q,
        d,
        &p[idx.head_w.clone()],
        pd,
        &dpred,
        Some(&mut ddec_out[br0 * d..(br0 + q) * d]),
        &mut grad[idx.head_w.clone()],
        None,
    );
    add_into(&mut grad, &idx.head_b, &colsum(&dpred, q, pd));
    let (mut dg, mut db) = (vec![0.0; d], vec![0.0; d]);
    let mut dx = ln_back(&cache.dec_norm, npos, d, &p[idx.dec_norm_g.clone()], &ddec_out, &mut dg, &mut db);
    add_into(&mut grad, &idx.dec_norm_g, &dg);
    add_into(&mut grad, &idx.dec_norm_b, &db);
    for (blk, lc) in idx.dec.iter().zip(&cache.dec_layers).rev() {
        dx = block_back(w, blk, lc, npos, &dx, &mut grad);
    }
    // decoder input: positions, mask token, embedded encoder output
    add_into(&mut grad, &idx.dec_pos, &dx);
    let ne = cache.enc_positions.len();
    let mut demb = vec![0.0; ne * d];
    let mut dmask = vec![0.0; d];
    for pos in 0..npos {
        match cache.enc_positions.binary_search(&pos) {
            Ok(t) => demb[t * d..(t + 1) * d].copy_from_slice(&dx[pos * d..(pos + 1) * d]),
            Err(_) => dmask.iter_mut().zip(&dx[pos * d..(pos + 1) * d]).for_each(|(a, b)| *a += b),
        }
    }
    add_into(&mut grad, &idx.mask_token, &dmask);
    let mut denc_out = vec![0.0; ne * d];
    linear_back(&cache.enc_out, ne, d, &p[idx.dec_w.clone()], d, &demb, Some(&mut denc_out), &mut grad[idx.dec_w.clone()], None);
    add_into(&mut grad, &idx.dec_b, &colsum(&demb, ne, d));
    let (mut dg, mut db) = (vec![0.0; d], vec![0.0; d]);
    let mut dx = ln_back(&cache.enc_norm, ne, d, &p[idx.enc_norm_g.clone()], &denc_out, &mut dg, &mut db);
    add_into(&mut grad, &idx.enc_norm_g, &dg);
    add_into(&mut grad, &idx.enc_norm_b, &db);
    for (blk, lc) in idx.enc.iter().zip(&cache.enc_layers).rev() {
        dx = block_back(w, blk, lc, ne, &dx, &mut grad);
    }
    // encoder input
    let mut dpatch_w = vec![0.0; pd * d];
    let mut dpatch_b = vec![0.0; d];
    let mut dcls = vec![0.0; d];
    for (t, &pos) in cache.enc_positions.iter().enumerate() {
        let dr = &dx[t * d..(t + 1) * d];
        add_into(&mut grad, &(idx.enc_pos.start + pos * d..idx.enc_pos.start + (pos + 1) * d), dr);
        if pos == 0 {
            dcls.iter_mut().zip(dr).for_each(|(a, b)| *a += b);
        } else if let Some(px) = prompt.tokens[pos].as_deref() {
            for (i, &xv) in px.iter().enumerate() {
                for (g, &dv) in dpatch_w[i * d..(i + 1) * d].iter_mut().zip(dr) {
                    *g += xv * dv;
                }
            }
            dpatch_b.iter_mut().zip(dr).for_each(|(a, b)| *a += b);
        }
    }
    add_into(&mut grad, &idx.patch_w, &dpatch_w);
    add_into(&mut grad, &idx.patch_b, &dpatch_b);
    add_into(&mut grad, &idx.cls, &dcls);
    Ok((loss, grad))
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheck {
    pub max_rel_error: f64,
    pub checked: usize,
    /// Parameter index with the largest error.
    pub worst: usize,
}

/// Relative errors use `max(|analytic|, |numeric|, 1e-7)` as denominator.
pub const GRAD_CHECK_FLOOR: f64 = 1e-7;

/// Compare analytic gradients against central differences on `n_params`
/// randomly chosen parameters.
pub fn gradient_check(
    w: &Weights,
    prompt: &PromptGrid,
    target: &GridImage,
    eps: f64,
    n_params: usize,
    rng: &Rng,
) -> Result<GradCheck> {
    let (_, analytic) = loss_and_grad(w, prompt, target)?;
    let mut r = *rng;
    let picks = r.choose_distinct(w.params.len(), n_params);
    let mut probe = w.clone();
    let loss_at = |probe: &Weights| -> Result<f64> {
        let cache = forward_cached(probe, prompt, &PatchSet::new())?;
        let tgt: Vec<f64> = image_to_patches(target, probe.config.patch_side).concat();
        Ok(cache.pred.iter().zip(&tgt).map(|(p, t)| (p - t) * (p - t)).sum::<f64>() / tgt.len() as f64)
    };
    let mut out = GradCheck { max_rel_error: 0.0, checked: 0, worst: 0 };
    for &i in &picks {
        let orig = probe.params[i];
        probe.params[i] = orig + eps;
        let up = loss_at(&probe)?;
        probe.params[i] = orig - eps;
        let down = loss_at(&probe)?;
        probe.params[i] = orig;
        let numeric = (up - down) / (2.0 * eps);
        let a = analytic[i];
        let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(GRAD_CHECK_FLOOR);
        if rel > out.max_rel_error {
            out.max_rel_error = rel;
            out.worst = i;
        }
        out.checked += 1;
    }
    Ok(out)
}
