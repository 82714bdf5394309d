// SPDX-License-Identifier: MIT OR Apache-2.0

//! On-disk formats: binary datasets (TVDS), weights (TVWT) and activation
//! stores (TVAS); JSON selections and planted configs; CSV tables at six
//! significant digits; PPM/PGM images.

pub mod csvio;
pub mod json;
pub mod pnm;
pub mod tvas;
pub mod tvds;
pub mod tvwt;

use std::path::Path;

use crate::meta::Meta;

#[derive(Debug, thiserror::Error)]
pub enum FormatError {
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("not a {expected} file (magic {found:?})")]
    BadMagic { expected: &'static str, found: Vec<u8> },
    #[error("{format} version {found} is not supported")]
    Version { format: &'static str, found: u32 },
    #[error("file ends early while reading {0}")]
    Truncated(&'static str),
    #[error("{0} unexpected trailing bytes")]
    Trailing(usize),
    #[error("invalid content: {0}")]
    Invalid(String),
    #[error(transparent)]
    Core(#[from] tvlab_core::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type FormatResult<T> = Result<T, FormatError>;

pub(crate) fn read_file(path: &Path) -> FormatResult<Vec<u8>> {
    std::fs::read(path).map_err(|source| FormatError::Io { path: path.display().to_string(), source })
}

/// Writes via a temporary sibling and a rename so readers never see a
/// partial file.
pub(crate) fn write_file(path: &Path, bytes: &[u8]) -> FormatResult<()> {
    let io = |source| FormatError::Io { path: path.display().to_string(), source };
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(io)?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".partial");
    std::fs::write(&tmp, bytes).map_err(io)?;
    std::fs::rename(&tmp, path).map_err(io)
}

/// Little-endian byte sink.
#[derive(Default)]
pub(crate) struct Out(pub Vec<u8>);

impl Out {
    pub fn bytes(&mut self, b: &[u8]) {
        self.0.extend_from_slice(b);
    }
    pub fn u8(&mut self, v: u8) {
        self.0.push(v);
    }
    pub fn u16(&mut self, v: u16) {
        self.bytes(&v.to_le_bytes());
    }
    pub fn u32(&mut self, v: u32) {
        self.bytes(&v.to_le_bytes());
    }
    pub fn len_u32(&mut self, v: usize) -> FormatResult<()> {
        let v = u32::try_from(v).map_err(|_| FormatError::Invalid(format!("count {v} exceeds 32 bits")))?;
        self.u32(v);
        Ok(())
    }
    pub fn f32(&mut self, v: f32) {
        self.bytes(&v.to_le_bytes());
    }
    pub fn f64(&mut self, v: f64) {
        self.bytes(&v.to_le_bytes());
    }
    /// u32 length followed by UTF-8 bytes.
    pub fn str(&mut self, s: &str) -> FormatResult<()> {
        self.len_u32(s.len())?;
        self.bytes(s.as_bytes());
        Ok(())
    }
    pub fn meta(&mut self, meta: &Meta) -> FormatResult<()> {
        self.str(&serde_json::to_string(meta)?)
    }
}

/// Little-endian byte source with truncation checks.
pub(crate) struct In<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> In<'a> {
    pub fn new(buf: &'a [u8]) -> Self {
        In { buf, pos: 0 }
    }
    pub fn take(&mut self, n: usize, what: &'static str) -> FormatResult<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len()).ok_or(FormatError::Truncated(what))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }
    fn array<const N: usize>(&mut self, what: &'static str) -> FormatResult<[u8; N]> {
        let mut a = [0u8; N];
        a.copy_from_slice(self.take(N, what)?);
        Ok(a)
    }
    pub fn magic(&mut self, expected: &'static str) -> FormatResult<()> {
        let found = self.take(4, "magic").map_err(|_| FormatError::BadMagic {
            expected,
            found: self.buf[..self.buf.len().min(4)].to_vec(),
        })?;
        if found != expected.as_bytes() {
            return Err(FormatError::BadMagic { expected, found: found.to_vec() });
        }
        Ok(())
    }
    pub fn version(&mut self, format: &'static str, supported: u32) -> FormatResult<u32> {
        let v = self.u32("version")?;
        if v != supported {
            return Err(FormatError::Version { format, found: v });
        }
        Ok(v)
    }
    pub fn u8(&mut self, what: &'static str) -> FormatResult<u8> {
        Ok(self.array::<1>(what)?[0])
    }
    pub fn u16(&mut self, what: &'static str) -> FormatResult<u16> {
        Ok(u16::from_le_bytes(self.array(what)?))
    }
    pub fn u32(&mut self, what: &'static str) -> FormatResult<u32> {
        Ok(u32::from_le_bytes(self.array(what)?))
    }
    pub fn usize(&mut self, what: &'static str) -> FormatResult<usize> {
        Ok(self.u32(what)? as usize)
    }
    pub fn str(&mut self, what: &'static str) -> FormatResult<String> {
        let n = self.usize(what)?;
        let b = self.take(n, what)?;
        String::from_utf8(b.to_vec()).map_err(|_| FormatError::Invalid(format!("{what} is not UTF-8")))
    }
    pub fn meta(&mut self) -> FormatResult<Meta> {
        Ok(serde_json::from_str(&self.str("meta")?)?)
    }
    /// `n` f32 values widened to f64.
    pub fn f32s(&mut self, n: usize, what: &'static str) -> FormatResult<Vec<f64>> {
        let bytes = n.checked_mul(4).ok_or(FormatError::Truncated(what))?;
        let raw = self.take(bytes, what)?;
        Ok(raw.chunks_exact(4).map(|c| f64::from(f32::from_le_bytes([c[0], c[1], c[2], c[3]]))).collect())
    }
    pub fn f64s(&mut self, n: usize, what: &'static str) -> FormatResult<Vec<f64>> {
        let bytes = n.checked_mul(8).ok_or(FormatError::Truncated(what))?;
        let raw = self.take(bytes, what)?;
        Ok(raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk"))).collect())
    }
    pub fn finish(self) -> FormatResult<()> {
        match self.buf.len() - self.pos {
            0 => Ok(()),
            n => Err(FormatError::Trailing(n)),
        }
    }
}

/// Narrow to f32, refusing values that would change.
pub(crate) fn exact_f32(v: f64, what: &str) -> FormatResult<f32> {
    let n = v as f32;
    if f64::from(n) != v {
        return Err(FormatError::Invalid(format!("{what} value {v} is not representable in 32 bits")));
    }
    Ok(n)
}
