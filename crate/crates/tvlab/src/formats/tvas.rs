// SPDX-License-Identifier: MIT OR Apache-2.0

//! TVAS: activation stores.
//!
//! Layout (little-endian): magic `TVAS`, u32 version, u8 task code, u32
//! d_model, u32 sample count, u32 site count, site directory of
//! `(u8 stage, u16 layer, u16 head, u16 token)`, then f32 values in
//! (sample, site, dim) order. A JSON sidecar `<file>.json` carries the
//! provenance.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use tvlab_core::lab::ActivationStore;
use tvlab_core::model::{SiteAddress, Stage};
use tvlab_core::tasks::TaskId;

use super::{exact_f32, read_file, write_file, FormatError, FormatResult, In, Out};
use crate::meta::Meta;

pub const MAGIC: &str = "TVAS";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Sidecar {
    pub meta: Meta,
    pub task: TaskId,
    pub count: usize,
    pub sites: usize,
    pub d_model: usize,
}

/// Round every value to `f32`, the precision the file keeps.
pub fn to_storage_precision(store: &ActivationStore) -> ActivationStore {
    let mut s = store.clone();
    s.data.iter_mut().for_each(|v| *v = f64::from(*v as f32));
    s
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut p = path.as_os_str().to_owned();
    p.push(".json");
    PathBuf::from(p)
}

/// Fails if a value is not exactly representable in 32 bits; see
/// [`to_storage_precision`].
pub fn encode(store: &ActivationStore) -> FormatResult<Vec<u8>> {
    let mut o = Out::default();
    o.bytes(MAGIC.as_bytes());
    o.u32(FORMAT_VERSION);
    o.u8(store.task.code());
    o.len_u32(store.d_model)?;
    o.len_u32(store.count)?;
    o.len_u32(store.sites.len())?;
    for s in &store.sites {
        o.u8(s.stage.code());
        o.u16(s.layer);
        o.u16(s.head);
        o.u16(s.token);
    }
    for &v in &store.data {
        o.f32(exact_f32(v, "activation")?);
    }
    Ok(o.0)
}

pub fn decode(bytes: &[u8]) -> FormatResult<ActivationStore> {
    let mut r = In::new(bytes);
    r.magic(MAGIC)?;
    r.version(MAGIC, FORMAT_VERSION)?;
    let task = TaskId::from_code(r.u8("task")?)?;
    let d_model = r.usize("d_model")?;
    let count = r.usize("sample count")?;
    let n_sites = r.usize("site count")?;
    let mut sites = Vec::with_capacity(n_sites.min(1 << 20));
    for _ in 0..n_sites {
        let stage = Stage::from_code(r.u8("site stage")?)?;
        let layer = r.u16("site layer")?;
        let head = r.u16("site head")?;
        let token = r.u16("site token")?;
        sites.push(SiteAddress { stage, layer, head, token });
    }
    let n = count
        .checked_mul(n_sites)
        .and_then(|x| x.checked_mul(d_model))
        .ok_or_else(|| FormatError::Invalid("store dimensions overflow".into()))?;
    let data = r.f32s(n, "activations")?;
    r.finish()?;
    Ok(ActivationStore::from_raw(task, d_model, sites, count, data)?)
}

pub fn write(path: &Path, store: &ActivationStore, meta: &Meta) -> FormatResult<()> {
    write_file(path, &encode(store)?)?;
    let side = Sidecar {
        meta: meta.clone(),
        task: store.task,
        count: store.count,
        sites: store.sites.len(),
        d_model: store.d_model,
    };
    write_file(&sidecar_path(path), serde_json::to_string_pretty(&side)?.as_bytes())
}

pub fn read(path: &Path) -> FormatResult<(ActivationStore, Sidecar)> {
    let store = decode(&read_file(path)?)?;
    let side: Sidecar = serde_json::from_slice(&read_file(&sidecar_path(path))?)?;
    if side.task != store.task || side.count != store.count || side.sites != store.sites.len() {
        return Err(FormatError::Invalid(format!("sidecar of {} does not describe the store", path.display())));
    }
    Ok((store, side))
}

#[cfg(test)]
mod tests {
    use super::*;
    use tvlab_core::lab::collect;
    use tvlab_core::model::{ModelConfig, SiteFilter, Weights};
    use tvlab_core::numerics::Rng;
    use tvlab_core::tasks::gen_sample;

    fn store() -> ActivationStore {
        let cfg = ModelConfig { enc_layers: 1, dec_layers: 1, ..Default::default() };
        let w = Weights::init(cfg, &Rng::new(1)).unwrap();
        let samples: Vec<_> = (0..3).map(|i| gen_sample(TaskId::Colorize, 8, &Rng::new(i)).unwrap()).collect();
        collect(&w, &samples, 3, &SiteFilter::All).unwrap()
    }

    #[test]
    fn round_trip_after_rounding() {
        let s = to_storage_precision(&store());
        let back = decode(&encode(&s).unwrap()).unwrap();
        assert_eq!(back, s);
        assert!(encode(&store()).is_err(), "f64 activations are not silently truncated");
    }

    #[test]
    fn sidecar_travels_with_the_store() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("colorize.tvas");
        let s = to_storage_precision(&store());
        write(&path, &s, &Meta::new("k", 1)).unwrap();
        let (back, side) = read(&path).unwrap();
        assert_eq!(back, s);
        assert_eq!(side.meta, Meta::new("k", 1));
        assert_eq!(side.d_model, 32);
        std::fs::remove_file(sidecar_path(&path)).unwrap();
        assert!(read(&path).is_err());
    }

    #[test]
    fn truncation_detected() {
        let bytes = encode(&to_storage_precision(&store())).unwrap();
        assert!(matches!(decode(&bytes[..bytes.len() - 3]), Err(FormatError::Truncated(_))));
    }
}
