// SPDX-License-Identifier: MIT OR Apache-2.0

//! TVWT: weight checkpoints.
//!
//! Layout (little-endian): magic `TVWT`, u32 version, meta JSON, config
//! block of seven u32 (d_model, enc_layers, dec_layers, heads, mlp_hidden,
//! patch_side, image_side), u32 tensor count, then per tensor: u32 name
//! length, name, u32 rank, u32 dims, f64 values.

use std::collections::BTreeSet;
use std::path::Path;

use tvlab_core::model::{ModelConfig, Weights};

use super::{read_file, write_file, FormatError, FormatResult, In, Out};
use crate::meta::Meta;

pub const MAGIC: &str = "TVWT";
pub const FORMAT_VERSION: u32 = 1;

pub fn encode(w: &Weights, meta: &Meta) -> FormatResult<Vec<u8>> {
    let c = &w.config;
    let mut o = Out::default();
    o.bytes(MAGIC.as_bytes());
    o.u32(FORMAT_VERSION);
    o.meta(meta)?;
    for v in [c.d_model, c.enc_layers, c.dec_layers, c.heads, c.mlp_hidden, c.patch_side, c.image_side] {
        o.len_u32(v)?;
    }
    let specs = w.tensor_specs();
    o.len_u32(specs.len())?;
    for s in specs {
        o.str(&s.name)?;
        o.len_u32(s.dims.len())?;
        for &d in &s.dims {
            o.len_u32(d)?;
        }
        for &v in &w.params[s.range()] {
            o.f64(v);
        }
    }
    Ok(o.0)
}

pub fn decode(bytes: &[u8]) -> FormatResult<(Weights, Meta)> {
    let mut r = In::new(bytes);
    r.magic(MAGIC)?;
    r.version(MAGIC, FORMAT_VERSION)?;
    let meta = r.meta()?;
    let mut c = [0usize; 7];
    for v in &mut c {
        *v = r.usize("config block")?;
    }
    let config = ModelConfig {
        d_model: c[0],
        enc_layers: c[1],
        dec_layers: c[2],
        heads: c[3],
        mlp_hidden: c[4],
        patch_side: c[5],
        image_side: c[6],
    };
    config.validate()?;
    let mut w = Weights::init(config, &tvlab_core::numerics::Rng::new(0))?;
    let n = r.usize("tensor count")?;
    if n != w.tensor_specs().len() {
        return Err(FormatError::Invalid(format!("{n} tensors, the config needs {}", w.tensor_specs().len())));
    }
    let mut seen = BTreeSet::new();
    for _ in 0..n {
        let name = r.str("tensor name")?;
        let rank = r.usize("tensor rank")?;
        let mut dims = Vec::with_capacity(rank.min(8));
        for _ in 0..rank {
            dims.push(r.usize("tensor dims")?);
        }
        let spec = w
            .tensor_specs()
            .iter()
            .find(|s| s.name == name)
            .ok_or_else(|| FormatError::Invalid(format!("unknown tensor {name}")))?;
        if spec.dims != dims {
            return Err(FormatError::Invalid(format!("tensor {name} has dims {dims:?}, expected {:?}", spec.dims)));
        }
        if !seen.insert(name.clone()) {
            return Err(FormatError::Invalid(format!("tensor {name} appears twice")));
        }
        let values = r.f64s(spec.len(), "tensor values")?;
        if values.iter().any(|v| !v.is_finite()) {
            return Err(FormatError::Invalid(format!("tensor {name} holds non-finite values")));
        }
        w.tensor_mut(&name).expect("spec exists").copy_from_slice(&values);
    }
    r.finish()?;
    Ok((w, meta))
}

pub fn write(path: &Path, w: &Weights, meta: &Meta) -> FormatResult<()> {
    write_file(path, &encode(w, meta)?)
}

pub fn read(path: &Path) -> FormatResult<(Weights, Meta)> {
    decode(&read_file(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use tvlab_core::numerics::Rng;

    #[test]
    fn round_trip_is_bit_exact() {
        let w = Weights::init(ModelConfig::default(), &Rng::new(3)).unwrap();
        let meta = Meta::new("x", 3);
        let bytes = encode(&w, &meta).unwrap();
        let (back, m) = decode(&bytes).unwrap();
        assert_eq!(m, meta);
        assert!(back.params.iter().zip(&w.params).all(|(a, b)| a.to_bits() == b.to_bits()));
        assert_eq!(back.config, w.config);
    }

    #[test]
    fn rejects_bad_files() {
        let w = Weights::init(ModelConfig { enc_layers: 1, dec_layers: 1, ..Default::default() }, &Rng::new(0)).unwrap();
        let bytes = encode(&w, &Meta::new("x", 0)).unwrap();
        assert!(decode(&bytes[..bytes.len() - 8]).is_err());
        let mut nan = bytes.clone();
        let at = nan.len() - 8;
        nan[at..].copy_from_slice(&f64::NAN.to_le_bytes());
        assert!(decode(&nan).is_err());
        assert!(matches!(decode(b"TVDS...."), Err(FormatError::BadMagic { .. })));
    }
}
