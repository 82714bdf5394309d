// SPDX-License-Identifier: MIT OR Apache-2.0

//! Toy MAE-style encoder/decoder transformer with patchable head outputs.
//!
//! A *site* is one head's contribution to the residual stream at one token,
//! after the head's slice of the output projection. Sites can be recorded
//! during a forward pass and replaced by external vectors (patches); a
//! patched value is what every downstream computation sees.

mod backward;
mod flops;
mod forward;
mod train;
mod weights;

pub use backward::{gradient_check, loss_and_grad, GradCheck};
pub use flops::{flop_estimate, FlopSpec};
pub use forward::{forward, forward_count, forward_layers, one_shot_predict, query_prompt, tv_predict, ForwardTrace, LayerRecord};
pub use train::{train, TrainHyper, TrainReport};
pub use weights::{TensorSpec, Weights};

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::vec::Vec;
use core::fmt;

use crate::error::{invalid, Result};
use crate::tasks::{role_of, PromptMode};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default))]
pub struct ModelConfig {
    pub d_model: usize,
    pub enc_layers: usize,
    pub dec_layers: usize,
    pub heads: usize,
    pub mlp_hidden: usize,
    pub patch_side: usize,
    pub image_side: usize,
}

impl Default for ModelConfig {
    /// The desk-scale toy: 8x8 images in 2x2 patches, 16 tokens per quadrant.
    fn default() -> Self {
        ModelConfig { d_model: 32, enc_layers: 4, dec_layers: 2, heads: 4, mlp_hidden: 64, patch_side: 2, image_side: 8 }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.d_model == 0 || self.heads == 0 || self.d_model % self.heads != 0 {
            return Err(invalid!("d_model {} not divisible by heads {}", self.d_model, self.heads));
        }
        if self.patch_side == 0 || self.image_side % self.patch_side != 0 {
            return Err(invalid!(
                "image side {} not divisible by patch side {}",
                self.image_side,
                self.patch_side
            ));
        }
        if self.mlp_hidden == 0 {
            return Err(invalid!("mlp_hidden must be positive"));
        }
        Ok(())
    }

    pub fn d_head(&self) -> usize {
        self.d_model / self.heads
    }

    /// Tokens per quadrant.
    pub fn q(&self) -> usize {
        let r = self.image_side / self.patch_side;
        r * r
    }

    /// CLS plus four quadrants.
    pub fn n_positions(&self) -> usize {
        4 * self.q() + 1
    }

    pub fn patch_dim(&self) -> usize {
        crate::tasks::CHANNELS * self.patch_side * self.patch_side
    }

    pub fn layers(&self, stage: Stage) -> usize {
        match stage {
            Stage::Encoder => self.enc_layers,
            Stage::Decoder => self.dec_layers,
        }
    }

    /// Layers numbered globally: encoder first, then decoder.
    pub fn total_layers(&self) -> usize {
        self.enc_layers + self.dec_layers
    }

    pub fn global_layer(&self, stage: Stage, layer: usize) -> usize {
        match stage {
            Stage::Encoder => layer,
            Stage::Decoder => self.enc_layers + layer,
        }
    }

    pub fn split_layer(&self, global: usize) -> (Stage, usize) {
        if global < self.enc_layers {
            (Stage::Encoder, global)
        } else {
            (Stage::Decoder, global - self.enc_layers)
        }
    }

    /// Grid positions the encoder sees in `mode`.
    pub fn encoder_positions(&self, mode: PromptMode) -> Vec<usize> {
        let q = self.q();
        (0..self.n_positions())
            .filter(|&p| {
                let (role, _) = role_of(p, q);
                match role {
                    crate::tasks::TokenRole::Cls => true,
                    crate::tasks::TokenRole::Quad(quad) => mode.visible_quadrants().contains(&quad),
                }
            })
            .collect()
    }

    /// Every site that exists in a forward pass of `mode`.
    pub fn sites(&self, mode: PromptMode) -> Vec<SiteAddress> {
        let mut out = Vec::new();
        let enc = self.encoder_positions(mode);
        for layer in 0..self.enc_layers {
            for head in 0..self.heads {
                for &p in &enc {
                    out.push(SiteAddress::new(Stage::Encoder, layer, head, p));
                }
            }
        }
        for layer in 0..self.dec_layers {
            for head in 0..self.heads {
                for p in 0..self.n_positions() {
                    out.push(SiteAddress::new(Stage::Decoder, layer, head, p));
                }
            }
        }
        out
    }

    pub fn site_valid(&self, site: &SiteAddress, mode: PromptMode) -> bool {
        let layer_ok = usize::from(site.layer) < self.layers(site.stage);
        let head_ok = usize::from(site.head) < self.heads;
        let token = usize::from(site.token);
        let token_ok = match site.stage {
            Stage::Encoder => self.encoder_positions(mode).binary_search(&token).is_ok(),
            Stage::Decoder => token < self.n_positions(),
        };
        layer_ok && head_ok && token_ok
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "lowercase"))]
pub enum Stage {
    Encoder,
    Decoder,
}

impl Stage {
    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn from_code(c: u8) -> Result<Stage> {
        match c {
            0 => Ok(Stage::Encoder),
            1 => Ok(Stage::Decoder),
            _ => Err(invalid!("stage code {c}")),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Stage::Encoder => "encoder",
            Stage::Decoder => "decoder",
        }
    }
}

/// `(stage, layer, head, token)`. `token` is the grid position (0 = CLS,
/// then TL, TR, BL, BR blocks of `q`), identical across prompt modes, so an
/// activation recorded in one-shot mode addresses the same site in
/// query-only mode.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SiteAddress {
    pub stage: Stage,
    pub layer: u16,
    pub head: u16,
    pub token: u16,
}

impl SiteAddress {
    pub fn new(stage: Stage, layer: usize, head: usize, token: usize) -> Self {
        SiteAddress { stage, layer: layer as u16, head: head as u16, token: token as u16 }
    }
}

impl fmt::Display for SiteAddress {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let stage = match self.stage {
            Stage::Encoder => "enc",
            Stage::Decoder => "dec",
        };
        write!(f, "{stage}.L{}.H{}.T{}", self.layer, self.head, self.token)
    }
}

/// Replacement vectors keyed by site.
pub type PatchSet = BTreeMap<SiteAddress, Vec<f64>>;

/// Which sites a forward pass records.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub enum SiteFilter {
    #[default]
    Nothing,
    All,
    Stage(Stage),
    Sites(BTreeSet<SiteAddress>),
    /// All token sites of the listed `(stage, layer, head)` triples.
    Heads(BTreeSet<(Stage, u16, u16)>),
}

impl SiteFilter {
    pub fn accepts(&self, site: &SiteAddress) -> bool {
        match self {
            SiteFilter::Nothing => false,
            SiteFilter::All => true,
            SiteFilter::Stage(s) => site.stage == *s,
            SiteFilter::Sites(set) => set.contains(site),
            SiteFilter::Heads(set) => set.contains(&(site.stage, site.layer, site.head)),
        }
    }

    pub fn is_nothing(&self) -> bool {
        matches!(self, SiteFilter::Nothing)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_shape() {
        let c = ModelConfig::default();
        c.validate().unwrap();
        assert_eq!(c.q(), 16);
        assert_eq!(c.d_head(), 8);
        assert_eq!(c.n_positions(), 65);
        assert_eq!(c.encoder_positions(PromptMode::OneShot).len(), 49);
        assert_eq!(c.encoder_positions(PromptMode::QueryOnly).len(), 17);
    }

    #[test]
    fn site_validity_depends_on_mode() {
        let c = ModelConfig::default();
        let tl = SiteAddress::new(Stage::Encoder, 0, 0, 1);
        assert!(c.site_valid(&tl, PromptMode::OneShot));
        assert!(!c.site_valid(&tl, PromptMode::QueryOnly));
        let br_enc = SiteAddress::new(Stage::Encoder, 0, 0, 50);
        assert!(!c.site_valid(&br_enc, PromptMode::OneShot));
        let br_dec = SiteAddress::new(Stage::Decoder, 1, 3, 64);
        assert!(c.site_valid(&br_dec, PromptMode::QueryOnly));
        assert!(!c.site_valid(&SiteAddress::new(Stage::Decoder, 2, 0, 0), PromptMode::OneShot));
        assert!(!c.site_valid(&SiteAddress::new(Stage::Decoder, 0, 4, 0), PromptMode::OneShot));
    }

    #[test]
    fn bad_configs() {
        let mut c = ModelConfig::default();
        c.heads = 5;
        assert!(c.validate().is_err());
        let mut c = ModelConfig::default();
        c.patch_side = 3;
        assert!(c.validate().is_err());
    }
}
