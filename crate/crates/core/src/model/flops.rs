// SPDX-License-Identifier: MIT OR Apache-2.0

use super::ModelConfig;
use crate::tasks::PromptMode;

/// Dimensions that drive the analytic FLOP count. Encoder and decoder may
/// have different widths (as in large MAE models).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FlopSpec {
    pub enc_layers: u64,
    pub enc_d: u64,
    pub enc_mlp: u64,
    pub dec_layers: u64,
    pub dec_d: u64,
    pub dec_mlp: u64,
    /// Tokens per quadrant.
    pub q: u64,
}

impl From<&ModelConfig> for FlopSpec {
    fn from(c: &ModelConfig) -> Self {
        FlopSpec {
            enc_layers: c.enc_layers as u64,
            enc_d: c.d_model as u64,
            enc_mlp: c.mlp_hidden as u64,
            dec_layers: c.dec_layers as u64,
            dec_d: c.d_model as u64,
            dec_mlp: c.mlp_hidden as u64,
            q: c.q() as u64,
        }
    }
}

impl FlopSpec {
    /// ViT-L encoder (24 x 1024) with an 8 x 512 decoder on a 14x14 grid of
    /// 7x7 quadrants.
    pub fn vit_large() -> Self {
        FlopSpec { enc_layers: 24, enc_d: 1024, enc_mlp: 4096, dec_layers: 8, dec_d: 512, dec_mlp: 2048, q: 49 }
    }
}

fn layer_flops(n: u64, d: u64, h: u64) -> u64 {
    4 * n * d * d + 2 * n * n * d + 2 * n * d * h
}

/// Attention projections `4nd^2`, scores and mixing `2n^2 d`, MLP `2ndh`,
/// summed over encoder (visible tokens) and decoder (full grid).
pub fn flop_estimate(spec: &FlopSpec, mode: PromptMode) -> u64 {
    let enc_n = match mode {
        PromptMode::OneShot => 3 * spec.q + 1,
        PromptMode::QueryOnly => spec.q + 1,
    };
    let dec_n = 4 * spec.q + 1;
    spec.enc_layers * layer_flops(enc_n, spec.enc_d, spec.enc_mlp)
        + spec.dec_layers * layer_flops(dec_n, spec.dec_d, spec.dec_mlp)
}
