// SPDX-License-Identifier: MIT OR Apache-2.0

//! Binary PPM (P6) image strips and PGM (P5) heatmaps, 8-bit.

use std::path::Path;

use tvlab_core::tasks::GridImage;

use super::{write_file, FormatError, FormatResult};
use crate::meta::Meta;

fn to_byte(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Images side by side, each upscaled by `scale`, separated by a one-pixel
/// white gutter.
pub fn encode_strip(images: &[&GridImage], scale: usize, meta: &Meta) -> FormatResult<Vec<u8>> {
    let side = images.first().ok_or_else(|| FormatError::Invalid("empty strip".into()))?.side;
    if images.iter().any(|i| i.side != side) || scale == 0 {
        return Err(FormatError::Invalid("strip images must share a side and scale must be positive".into()));
    }
    let cell = side * scale;
    let width = images.len() * cell + images.len() - 1;
    let mut out = format!("P6\n# {}\n{width} {cell}\n255\n", meta.comment()).into_bytes();
    for row in 0..cell {
        for (i, img) in images.iter().enumerate() {
            if i > 0 {
                out.extend_from_slice(&[255, 255, 255]);
            }
            for col in 0..cell {
                for c in 0..3 {
                    out.push(to_byte(img.at(c, row / scale, col / scale)));
                }
            }
        }
    }
    Ok(out)
}

pub fn write_strip(path: &Path, images: &[&GridImage], scale: usize, meta: &Meta) -> FormatResult<()> {
    write_file(path, &encode_strip(images, scale, meta)?)
}

/// Grayscale heatmap of `cells` (rows of equal length), min-max normalised
/// to 16..=255; `None` cells are gaps drawn as 0.
pub fn encode_heatmap(cells: &[Vec<Option<f64>>], scale: usize, meta: &Meta) -> FormatResult<Vec<u8>> {
    let cols = cells.first().map_or(0, Vec::len);
    if cells.is_empty() || cols == 0 || cells.iter().any(|r| r.len() != cols) || scale == 0 {
        return Err(FormatError::Invalid("heatmap needs a non-empty rectangular grid".into()));
    }
    let finite = cells.iter().flatten().flatten().copied().filter(|v| v.is_finite());
    let (lo, hi) = finite.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
    let level = |v: Option<f64>| -> u8 {
        match v.filter(|v| v.is_finite()) {
            None => 0,
            Some(_) if hi <= lo => 255,
            Some(v) => 16 + ((v - lo) / (hi - lo) * 239.0).round() as u8,
        }
    };
    let (w, h) = (cols * scale, cells.len() * scale);
    let mut out = format!("P5\n# {}\n{w} {h}\n255\n", meta.comment()).into_bytes();
    for r in 0..h {
        for c in 0..w {
            out.push(level(cells[r / scale][c / scale]));
        }
    }
    Ok(out)
}

pub fn write_heatmap(path: &Path, cells: &[Vec<Option<f64>>], scale: usize, meta: &Meta) -> FormatResult<()> {
    write_file(path, &encode_heatmap(cells, scale, meta)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn payload(bytes: &[u8]) -> &[u8] {
        // header is four newline-terminated lines
        let mut seen = 0;
        let at = bytes.iter().position(|&b| {
            seen += usize::from(b == b'\n');
            seen == 4
        });
        &bytes[at.unwrap() + 1..]
    }

    #[test]
    fn strip_geometry() {
        let a = GridImage::filled(2, 0.0);
        let b = GridImage::filled(2, 1.0);
        let bytes = encode_strip(&[&a, &b], 3, &Meta::new("h", 0)).unwrap();
        assert!(bytes.starts_with(b"P6\n# tvlab"));
        let px = payload(&bytes);
        assert_eq!(px.len(), (2 * 6 + 1) * 6 * 3);
        assert_eq!(&px[..3], &[0, 0, 0]);
        assert_eq!(&px[px.len() - 3..], &[255, 255, 255]);
    }

    #[test]
    fn heatmap_levels_and_gaps() {
        let cells = vec![vec![Some(0.0), Some(1.0)], vec![None, Some(0.5)]];
        let bytes = encode_heatmap(&cells, 1, &Meta::new("h", 0)).unwrap();
        assert_eq!(payload(&bytes), &[16, 255, 0, 136]);
        assert!(encode_heatmap(&[vec![Some(1.0)], vec![]], 1, &Meta::new("h", 0)).is_err());
    }
}
