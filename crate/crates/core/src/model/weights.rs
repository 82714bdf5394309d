// SPDX-License-Identifier: MIT OR Apache-2.0

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::ops::Range;

use super::ModelConfig;
use crate::error::{shape_err, Error, Result};
use crate::numerics::Rng;

/// Name, shape and offset of one tensor inside the flat parameter vector.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TensorSpec {
    pub name: String,
    pub dims: Vec<usize>,
    pub offset: usize,
}

impl TensorSpec {
    pub fn len(&self) -> usize {
        self.dims.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> Range<usize> {
        self.offset..self.offset + self.len()
    }
}

#[derive(Debug, Clone)]
pub(crate) struct BlockIdx {
    pub ln1_g: Range<usize>,
    pub ln1_b: Range<usize>,
    pub wq: Range<usize>,
    pub wk: Range<usize>,
    pub wv: Range<usize>,
    pub wo: Range<usize>,
    pub ln2_g: Range<usize>,
    pub ln2_b: Range<usize>,
    pub w1: Range<usize>,
    pub b1: Range<usize>,
    pub w2: Range<usize>,
    pub b2: Range<usize>,
}

#[derive(Debug, Clone)]
pub(crate) struct ParamIndex {
    pub specs: Vec<TensorSpec>,
    pub total: usize,
    pub patch_w: Range<usize>,
    pub patch_b: Range<usize>,
    pub cls: Range<usize>,
    pub enc_pos: Range<usize>,
    pub enc: Vec<BlockIdx>,
    pub enc_norm_g: Range<usize>,
    pub enc_norm_b: Range<usize>,
    pub dec_w: Range<usize>,
    pub dec_b: Range<usize>,
    pub mask_token: Range<usize>,
    pub dec_pos: Range<usize>,
    pub dec: Vec<BlockIdx>,
    pub dec_norm_g: Range<usize>,
    pub dec_norm_b: Range<usize>,
    pub head_w: Range<usize>,
    pub head_b: Range<usize>,
}

struct Builder {
    specs: Vec<TensorSpec>,
    offset: usize,
}

impl Builder {
    fn add(&mut self, name: String, dims: &[usize]) -> Range<usize> {
        let spec = TensorSpec { name, dims: dims.to_vec(), offset: self.offset };
        let r = spec.range();
        self.offset = r.end;
        self.specs.push(spec);
        r
    }

    fn block(&mut self, prefix: &str, d: usize, h: usize) -> BlockIdx {
        BlockIdx {
            ln1_g: self.add(format!("{prefix}.ln1.gamma"), &[d]),
            ln1_b: self.add(format!("{prefix}.ln1.beta"), &[d]),
            wq: self.add(format!("{prefix}.attn.wq"), &[d, d]),
            wk: self.add(format!("{prefix}.attn.wk"), &[d, d]),
            wv: self.add(format!("{prefix}.attn.wv"), &[d, d]),
            wo: self.add(format!("{prefix}.attn.wo"), &[d, d]),
            ln2_g: self.add(format!("{prefix}.ln2.gamma"), &[d]),
            ln2_b: self.add(format!("{prefix}.ln2.beta"), &[d]),
            w1: self.add(format!("{prefix}.mlp.w1"), &[d, h]),
            b1: self.add(format!("{prefix}.mlp.b1"), &[h]),
            w2: self.add(format!("{prefix}.mlp.w2"), &[h, d]),
            b2: self.add(format!("{prefix}.mlp.b2"), &[d]),
        }
    }
}

impl ParamIndex {
    pub fn new(c: &ModelConfig) -> Self {
        let (d, h, p, n) = (c.d_model, c.mlp_hidden, c.patch_dim(), c.n_positions());
        let mut b = Builder { specs: Vec::new(), offset: 0 };
        let patch_w = b.add("patch_embed.w".into(), &[p, d]);
        let patch_b = b.add("patch_embed.b".into(), &[d]);
        let cls = b.add("cls".into(), &[d]);
        let enc_pos = b.add("enc.pos".into(), &[n, d]);
        let enc = (0..c.enc_layers).map(|l| b.block(&format!("enc.{l}"), d, h)).collect();
        let enc_norm_g = b.add("enc.norm.gamma".into(), &[d]);
        let enc_norm_b = b.add("enc.norm.beta".into(), &[d]);
        let dec_w = b.add("dec_embed.w".into(), &[d, d]);
        let dec_b = b.add("dec_embed.b".into(), &[d]);
        let mask_token = b.add("mask_token".into(), &[d]);
        let dec_pos = b.add("dec.pos".into(), &[n, d]);
        let dec = (0..c.dec_layers).map(|l| b.block(&format!("dec.{l}"), d, h)).collect();
        let dec_norm_g = b.add("dec.norm.gamma".into(), &[d]);
        let dec_norm_b = b.add("dec.norm.beta".into(), &[d]);
        let head_w = b.add("pixel_head.w".into(), &[d, p]);
        let head_b = b.add("pixel_head.b".into(), &[p]);
        ParamIndex {
            total: b.offset,
            specs: b.specs,
            patch_w,
            patch_b,
            cls,
            enc_pos,
            enc,
            enc_norm_g,
            enc_norm_b,
            dec_w,
            dec_b,
            mask_token,
            dec_pos,
            dec,
            dec_norm_g,
            dec_norm_b,
            head_w,
            head_b,
        }
    }
}

/// Model parameters: one flat vector plus its named layout.
#[derive(Debug, Clone)]
pub struct Weights {
    pub config: ModelConfig,
    pub params: Vec<f64>,
    pub(crate) index: ParamIndex,
}

impl PartialEq for Weights {
    fn eq(&self, other: &Self) -> bool {
        self.config == other.config && self.params == other.params
    }
}

impl Weights {
    /// Random initialisation: `N(0, 1/fan_in)` matrices, unit layer-norm
    /// gains, small embeddings.
    pub fn init(config: ModelConfig, rng: &Rng) -> Result<Self> {
        config.validate()?;
        let index = ParamIndex::new(&config);
        let mut params = vec![0.0; index.total];
        for (i, spec) in index.specs.iter().enumerate() {
            let mut r = rng.child(i as u64);
            let name = spec.name.as_str();
            let range = spec.range();
            if name.ends_with(".gamma") {
                params[range].iter_mut().for_each(|x| *x = 1.0);
            } else if spec.dims.len() == 2 && !name.ends_with(".pos") {
                let std = 1.0 / libm::sqrt(spec.dims[0] as f64);
                params[range].iter_mut().for_each(|x| *x = std * r.normal());
            } else if name.ends_with(".pos") || name == "cls" || name == "mask_token" {
                params[range].iter_mut().for_each(|x| *x = 0.1 * r.normal());
            }
        }
        Ok(Weights { config, params, index })
    }

    pub fn from_params(config: ModelConfig, params: Vec<f64>) -> Result<Self> {
        config.validate()?;
        let index = ParamIndex::new(&config);
        if params.len() != index.total {
            return Err(shape_err!("{} parameters, layout needs {}", params.len(), index.total));
        }
        if params.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("weights".into()));
        }
        Ok(Weights { config, params, index })
    }

    pub fn tensor_specs(&self) -> &[TensorSpec] {
        &self.index.specs
    }

    pub fn tensor(&self, name: &str) -> Option<&[f64]> {
        self.index.specs.iter().find(|s| s.name == name).map(|s| &self.params[s.range()])
    }

    pub fn tensor_mut(&mut self, name: &str) -> Option<&mut [f64]> {
        let r = self.index.specs.iter().find(|s| s.name == name)?.range();
        Some(&mut self.params[r])
    }

    pub fn n_params(&self) -> usize {
        self.params.len()
    }

    /// Zero every attention output projection (used by tests of the
    /// zero-contribution path).
    pub fn zero_attention_outputs(&mut self) {
        let ranges: Vec<Range<usize>> =
            self.index.enc.iter().chain(&self.index.dec).map(|b| b.wo.clone()).collect();
        for r in ranges {
            self.params[r].iter_mut().for_each(|x| *x = 0.0);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layout_is_contiguous_and_named() {
        let w = Weights::init(ModelConfig::default(), &Rng::new(0)).unwrap();
        let mut end = 0;
        for s in w.tensor_specs() {
            assert_eq!(s.offset, end);
            end = s.range().end;
        }
        assert_eq!(end, w.n_params());
        assert!(w.tensor("enc.3.attn.wo").is_some());
        assert!(w.tensor("dec.1.mlp.b2").is_some());
        assert!(w.tensor("enc.4.attn.wo").is_none());
        assert!(w.tensor("enc.0.ln1.gamma").unwrap().iter().all(|&g| g == 1.0));
    }

    #[test]
    fn from_params_checks_length() {
        let w = Weights::init(ModelConfig::default(), &Rng::new(0)).unwrap();
        let again = Weights::from_params(w.config, w.params.clone()).unwrap();
        assert_eq!(again, w);
        assert!(Weights::from_params(w.config, vec![0.0; 3]).is_err());
    }
}
