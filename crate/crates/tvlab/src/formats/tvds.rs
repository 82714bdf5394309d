// SPDX-License-Identifier: MIT OR Apache-2.0

//! TVDS: one dataset split per file.
//!
//! Layout (little-endian): magic `TVDS`, u32 version, meta JSON (u32 length
//! + bytes), u8 split id, u32 image side, u32 channels, u32 run count, then
//! runs of `(u8 part, u8 task, u32 count)` describing the sample order,
//! then f32 pixels in (sample, role x_s/y_s/x_q/y_q, channel, row, col)
//! order.

use std::path::Path;

use tvlab_core::tasks::{DatasetSplit, GridImage, Part, TaskId, TripletSample, CHANNELS};

use super::{exact_f32, read_file, write_file, FormatError, FormatResult, In, Out};
use crate::meta::Meta;

pub const MAGIC: &str = "TVDS";
pub const FORMAT_VERSION: u32 = 1;

/// A maximal block of consecutive samples sharing part and task.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Run {
    pub part: Part,
    pub task: TaskId,
    pub count: usize,
}

fn part_code(p: Part) -> u8 {
    match p {
        Part::Train => 0,
        Part::Val => 1,
        Part::Test => 2,
    }
}

fn part_of(code: u8) -> FormatResult<Part> {
    Part::ALL.get(usize::from(code)).copied().ok_or_else(|| FormatError::Invalid(format!("part code {code}")))
}

pub fn runs(split: &DatasetSplit) -> Vec<Run> {
    let mut out: Vec<Run> = Vec::new();
    for part in Part::ALL {
        for s in split.part(part) {
            match out.last_mut() {
                Some(r) if r.part == part && r.task == s.task => r.count += 1,
                _ => out.push(Run { part, task: s.task, count: 1 }),
            }
        }
    }
    out
}

pub fn encode(split: &DatasetSplit, meta: &Meta) -> FormatResult<Vec<u8>> {
    let mut o = Out::default();
    o.bytes(MAGIC.as_bytes());
    o.u32(FORMAT_VERSION);
    o.meta(meta)?;
    o.u8(split.split_id);
    o.len_u32(split.side)?;
    o.len_u32(CHANNELS)?;
    let runs = runs(split);
    o.len_u32(runs.len())?;
    for r in &runs {
        o.u8(part_code(r.part));
        o.u8(r.task.code());
        o.len_u32(r.count)?;
    }
    let n = CHANNELS * split.side * split.side;
    for part in Part::ALL {
        for s in split.part(part) {
            for img in [&s.x_s, &s.y_s, &s.x_q, &s.y_q] {
                if img.side != split.side || img.pixels.len() != n {
                    return Err(FormatError::Invalid(format!("image of side {} in a split of side {}", img.side, split.side)));
                }
                for &p in &img.pixels {
                    o.f32(exact_f32(p, "pixel")?);
                }
            }
        }
    }
    Ok(o.0)
}

/// Header fields without the pixel payload.
#[derive(Debug, Clone, PartialEq)]
pub struct Header {
    pub meta: Meta,
    pub split_id: u8,
    pub side: usize,
    pub runs: Vec<Run>,
}

fn header(r: &mut In<'_>) -> FormatResult<Header> {
    r.magic(MAGIC)?;
    r.version(MAGIC, FORMAT_VERSION)?;
    let meta = r.meta()?;
    let split_id = r.u8("split id")?;
    let side = r.usize("image side")?;
    let channels = r.usize("channels")?;
    if channels != CHANNELS {
        return Err(FormatError::Invalid(format!("{channels} channels, expected {CHANNELS}")));
    }
    let n_runs = r.usize("run count")?;
    let mut runs = Vec::new();
    for _ in 0..n_runs {
        let part = part_of(r.u8("run part")?)?;
        let task = TaskId::from_code(r.u8("run task")?)?;
        let count = r.usize("run count")?;
        runs.push(Run { part, task, count });
    }
    Ok(Header { meta, split_id, side, runs })
}

pub fn read_header(bytes: &[u8]) -> FormatResult<Header> {
    header(&mut In::new(bytes))
}

pub fn decode(bytes: &[u8]) -> FormatResult<(DatasetSplit, Meta)> {
    let mut r = In::new(bytes);
    let h = header(&mut r)?;
    let n = CHANNELS * h.side * h.side;
    let mut split = DatasetSplit { split_id: h.split_id, side: h.side, train: vec![], val: vec![], test: vec![] };
    for run in &h.runs {
        for _ in 0..run.count {
            let mut img = || -> FormatResult<GridImage> { Ok(GridImage::from_pixels(h.side, r.f32s(n, "pixels")?)?) };
            let s = TripletSample { task: run.task, x_s: img()?, y_s: img()?, x_q: img()?, y_q: img()? };
            match run.part {
                Part::Train => split.train.push(s),
                Part::Val => split.val.push(s),
                Part::Test => split.test.push(s),
            }
        }
    }
    r.finish()?;
    Ok((split, h.meta))
}

pub fn write(path: &Path, split: &DatasetSplit, meta: &Meta) -> FormatResult<()> {
    write_file(path, &encode(split, meta)?)
}

pub fn read(path: &Path) -> FormatResult<(DatasetSplit, Meta)> {
    decode(&read_file(path)?)
}

/// Write every image of `split` as a PPM strip per sample (inspection aid).
pub fn export_ppm(dir: &Path, split: &DatasetSplit, meta: &Meta, limit: usize) -> FormatResult<()> {
    for part in Part::ALL {
        for (i, s) in split.part(part).iter().take(limit).enumerate() {
            let path = dir.join(format!("{}-{}-{i:03}.ppm", part.name(), s.task));
            super::pnm::write_strip(&path, &[&s.x_s, &s.y_s, &s.x_q, &s.y_q], 4, meta)?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use tvlab_core::numerics::Rng;
    use tvlab_core::tasks::{gen_split, SplitSizes};

    fn small() -> DatasetSplit {
        gen_split(&Rng::new(5), 2, &TaskId::ALL, SplitSizes { train: 3, val: 1, test: 2 }, 8).unwrap()
    }

    #[test]
    fn round_trip_is_exact() {
        let split = small();
        let meta = Meta::new("h", 5);
        let bytes = encode(&split, &meta).unwrap();
        let (back, m) = decode(&bytes).unwrap();
        assert_eq!(back, split);
        assert_eq!(m, meta);
        assert_eq!(encode(&back, &meta).unwrap(), bytes);
    }

    #[test]
    fn header_counts_match_enumeration() {
        let split = small();
        let h = read_header(&encode(&split, &Meta::new("h", 0)).unwrap()).unwrap();
        for task in TaskId::ALL {
            for part in Part::ALL {
                let declared: usize = h.runs.iter().filter(|r| r.task == task && r.part == part).map(|r| r.count).sum();
                assert_eq!(declared, split.of_task(part, task).len());
            }
        }
    }

    #[test]
    fn corrupt_files_are_rejected() {
        let bytes = encode(&small(), &Meta::new("h", 0)).unwrap();
        assert!(matches!(decode(&bytes[..bytes.len() - 1]), Err(FormatError::Truncated(_))));
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(matches!(decode(&extra), Err(FormatError::Trailing(1))));
        let mut magic = bytes.clone();
        magic[0] = b'X';
        assert!(matches!(decode(&magic), Err(FormatError::BadMagic { .. })));
        let mut version = bytes;
        version[4] = 9;
        assert!(matches!(decode(&version), Err(FormatError::Version { found: 9, .. })));
    }

    #[test]
    fn inexact_pixels_are_refused() {
        let mut split = small();
        split.train[0].x_q.pixels[0] = 0.1;
        assert!(encode(&split, &Meta::new("h", 0)).is_err());
    }
}
