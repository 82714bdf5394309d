// SPDX-License-Identifier: MIT OR Apache-2.0

//! CSV tables with a leading `# tvlab ...` provenance comment. Numbers are
//! written at six significant digits so reruns compare byte for byte.

use std::path::Path;

use super::{read_file, write_file, FormatError, FormatResult};
use crate::meta::Meta;

/// `%.6g`-style text: six significant digits, trailing zeros dropped,
/// exponent form outside `[1e-5, 1e6)`.
pub fn sig6(x: f64) -> String {
    if x.is_nan() {
        return "nan".into();
    }
    if x.is_infinite() {
        return if x > 0.0 { "inf".into() } else { "-inf".into() };
    }
    if x == 0.0 {
        return "0".into();
    }
    let e = format!("{x:.5e}");
    let (mant, exp) = e.split_once('e').expect("exponent form");
    let exp: i32 = exp.parse().expect("integer exponent");
    let trim = |s: &str| -> String {
        if s.contains('.') {
            s.trim_end_matches('0').trim_end_matches('.').to_string()
        } else {
            s.to_string()
        }
    };
    if (-5..6).contains(&exp) {
        let decimals = (5 - exp).max(0) as usize;
        trim(&format!("{x:.decimals$}"))
    } else {
        format!("{}e{exp}", trim(mant))
    }
}

/// Optional number: empty cell when absent.
pub fn sig6_opt(x: Option<f64>) -> String {
    x.map(sig6).unwrap_or_default()
}

#[derive(Debug, Clone, PartialEq)]
pub struct CsvTable {
    pub meta: Option<Meta>,
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl CsvTable {
    pub fn new(meta: &Meta, header: &[&str]) -> Self {
        CsvTable { meta: Some(meta.clone()), header: header.iter().map(|s| s.to_string()).collect(), rows: vec![] }
    }

    pub fn push(&mut self, row: Vec<String>) {
        self.rows.push(row);
    }

    pub fn column(&self, name: &str) -> FormatResult<usize> {
        self.header.iter().position(|h| h == name).ok_or_else(|| FormatError::Invalid(format!("no column {name}")))
    }

    pub fn encode(&self) -> FormatResult<Vec<u8>> {
        let mut out = Vec::new();
        if let Some(m) = &self.meta {
            out.extend_from_slice(format!("# {}\n", m.comment()).as_bytes());
        }
        let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(&mut out);
        w.write_record(&self.header)?;
        for r in &self.rows {
            if r.len() != self.header.len() {
                return Err(FormatError::Invalid(format!("row of {} cells under {} columns", r.len(), self.header.len())));
            }
            w.write_record(r)?;
        }
        w.flush().map_err(|source| FormatError::Io { path: "<csv buffer>".into(), source })?;
        drop(w);
        Ok(out)
    }

    pub fn decode(bytes: &[u8]) -> FormatResult<Self> {
        let text = std::str::from_utf8(bytes).map_err(|_| FormatError::Invalid("CSV is not UTF-8".into()))?;
        let meta = text.lines().next().filter(|l| l.starts_with('#')).and_then(Meta::parse_comment);
        let mut r = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(bytes);
        let header = r.headers()?.iter().map(str::to_string).collect();
        let mut rows = Vec::new();
        for rec in r.records() {
            rows.push(rec?.iter().map(str::to_string).collect());
        }
        Ok(CsvTable { meta, header, rows })
    }

    pub fn write(&self, path: &Path) -> FormatResult<()> {
        write_file(path, &self.encode()?)
    }

    pub fn read(path: &Path) -> FormatResult<Self> {
        Self::decode(&read_file(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn six_significant_digits() {
        assert_eq!(sig6(0.325), "0.325");
        assert_eq!(sig6(1.0 / 3.0), "0.333333");
        assert_eq!(sig6(123456789.0), "1.23457e8");
        assert_eq!(sig6(-2.5e-7), "-2.5e-7");
        assert_eq!(sig6(100.0), "100");
        assert_eq!(sig6(9.9999996), "10");
        assert_eq!(sig6(-0.0), "0");
        assert_eq!(sig6(f64::NAN), "nan");
    }

    proptest! {
        #[test]
        fn sig6_keeps_six_digits(x in -1e12f64..1e12) {
            let back: f64 = sig6(x).parse().unwrap();
            prop_assert!((back - x).abs() <= 5e-6 * x.abs() + 1e-300);
        }
    }

    #[test]
    fn table_round_trip() {
        let mut t = CsvTable::new(&Meta::new("abc", 4), &["method", "score"]);
        t.push(vec!["one, shot".into(), sig6(0.5)]);
        t.push(vec!["ours".into(), String::new()]);
        let back = CsvTable::decode(&t.encode().unwrap()).unwrap();
        assert_eq!(back, t);
        let mut bad = t.clone();
        bad.push(vec!["x".into()]);
        assert!(bad.encode().is_err());
    }
}
