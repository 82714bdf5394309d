// SPDX-License-Identifier: MIT OR Apache-2.0

//! Result tables (mean ± population std over splits) and heatmaps.

use std::collections::BTreeMap;
use std::path::Path;

use tvlab_core::lab::ScoreTable;
use tvlab_core::model::{ModelConfig, SiteAddress};
use tvlab_core::tasks::{grid_position, Metric, Quadrant, TaskId, TokenRole};

use crate::formats::csvio::{sig6, sig6_opt, CsvTable};
use crate::formats::pnm::write_heatmap;
use crate::formats::{FormatError, FormatResult};
use crate::meta::Meta;

pub const RESULT_COLUMNS: [&str; 5] = ["method", "task", "metric", "split", "score"];

/// One evaluated score.
#[derive(Debug, Clone, PartialEq)]
pub struct ResultRow {
    pub method: String,
    pub task: TaskId,
    pub split: u8,
    pub score: f64,
}

pub fn metric_name(m: Metric) -> &'static str {
    m.name()
}

pub fn results_csv(meta: &Meta, rows: &[ResultRow]) -> CsvTable {
    let mut t = CsvTable::new(meta, &RESULT_COLUMNS);
    for r in rows {
        t.push(vec![
            r.method.clone(),
            r.task.name().into(),
            metric_name(r.task.metric()).into(),
            r.split.to_string(),
            sig6(r.score),
        ]);
    }
    t
}

pub fn parse_results(t: &CsvTable) -> FormatResult<Vec<ResultRow>> {
    let col: Vec<usize> = RESULT_COLUMNS.iter().map(|c| t.column(c)).collect::<FormatResult<_>>()?;
    let bad = |what: &str, v: &str| FormatError::Invalid(format!("bad {what} {v:?}"));
    t.rows
        .iter()
        .map(|r| {
            Ok(ResultRow {
                method: r[col[0]].clone(),
                task: r[col[1]].parse().map_err(|_| bad("task", &r[col[1]]))?,
                split: r[col[3]].parse().map_err(|_| bad("split", &r[col[3]]))?,
                score: r[col[4]].parse().map_err(|_| bad("score", &r[col[4]]))?,
            })
        })
        .collect()
}

/// Population mean and standard deviation.
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Methods × tasks, each cell summarising the per-split scores.
#[derive(Debug, Clone, PartialEq)]
pub struct ReportTable {
    pub methods: Vec<String>,
    pub tasks: Vec<TaskId>,
    pub splits: Vec<u8>,
    pub cells: BTreeMap<(String, TaskId), BTreeMap<u8, f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CellSummary {
    pub mean: Option<f64>,
    pub std: Option<f64>,
    pub n: usize,
    pub missing: Vec<u8>,
}

impl ReportTable {
    /// Rows keep first-appearance order; `splits` are the splits every cell
    /// is expected to cover.
    pub fn build(rows: &[ResultRow], splits: &[u8]) -> Self {
        let mut methods: Vec<String> = Vec::new();
        let mut tasks: Vec<TaskId> = Vec::new();
        let mut cells: BTreeMap<(String, TaskId), BTreeMap<u8, f64>> = BTreeMap::new();
        for r in rows {
            if !methods.contains(&r.method) {
                methods.push(r.method.clone());
            }
            if !tasks.contains(&r.task) {
                tasks.push(r.task);
            }
            cells.entry((r.method.clone(), r.task)).or_default().insert(r.split, r.score);
        }
        tasks.sort();
        ReportTable { methods, tasks, splits: splits.to_vec(), cells }
    }

    pub fn summary(&self, method: &str, task: TaskId) -> CellSummary {
        let empty = BTreeMap::new();
        let scores = self.cells.get(&(method.to_string(), task)).unwrap_or(&empty);
        let present: Vec<f64> = self.splits.iter().filter_map(|s| scores.get(s).copied()).collect();
        let missing = self.splits.iter().copied().filter(|s| !scores.contains_key(s)).collect();
        let (mean, std) = if present.is_empty() {
            (None, None)
        } else {
            let (m, s) = mean_std(&present);
            (Some(m), Some(s))
        };
        CellSummary { mean, std, n: present.len(), missing }
    }

    pub fn to_markdown(&self) -> String {
        let mut out = String::from("| Method |");
        for t in &self.tasks {
            let arrow = if t.metric().higher_is_better() { "↑" } else { "↓" };
            out.push_str(&format!(" {} ({} {arrow}) |", t.name(), t.metric().name()));
        }
        out.push_str("\n|---|");
        out.push_str(&"---|".repeat(self.tasks.len()));
        out.push('\n');
        for m in &self.methods {
            out.push_str(&format!("| {m} |"));
            for &t in &self.tasks {
                out.push_str(&format!(" {} |", format_cell(&self.summary(m, t))));
            }
            out.push('\n');
        }
        out
    }

    pub fn to_csv(&self, meta: &Meta) -> CsvTable {
        let mut t = CsvTable::new(meta, &["method", "task", "metric", "direction", "mean", "std", "n", "missing_splits"]);
        for m in &self.methods {
            for &task in &self.tasks {
                let s = self.summary(m, task);
                let missing: Vec<String> = s.missing.iter().map(u8::to_string).collect();
                t.push(vec![
                    m.clone(),
                    task.name().into(),
                    task.metric().name().into(),
                    if task.metric().higher_is_better() { "higher".into() } else { "lower".into() },
                    sig6_opt(s.mean),
                    sig6_opt(s.std),
                    s.n.to_string(),
                    missing.join(" "),
                ]);
            }
        }
        t
    }
}

/// `mean ± std` with at least three decimals and three significant digits;
/// missing splits are flagged.
pub fn format_cell(s: &CellSummary) -> String {
    let (Some(mean), Some(std)) = (s.mean, s.std) else {
        return "— (no data)".into();
    };
    let mag = if mean == 0.0 { 0 } else { mean.abs().log10().floor() as i32 };
    let decimals = (2 - mag).max(3) as usize;
    let mut text = format!("{mean:.decimals$} ± {std:.decimals$}");
    if !s.missing.is_empty() {
        let list: Vec<String> = s.missing.iter().map(u8::to_string).collect();
        text.push_str(&format!(" (missing split {})", list.join(", ")));
    }
    text
}

/// Aggregate taskness per head: rows are global layers, columns heads.
pub fn head_grid(scores: &ScoreTable, config: &ModelConfig) -> Vec<Vec<Option<f64>>> {
    let heads = scores.head_scores();
    (0..config.total_layers())
        .map(|g| {
            let (stage, layer) = config.split_layer(g);
            (0..config.heads).map(|h| heads.get(&(stage, layer as u16, h as u16)).copied()).collect()
        })
        .collect()
}

/// Token scores of one head laid out as the 2x2 prompt grid of patches;
/// positions not recorded are `None`. CLS is not drawn.
pub fn token_grid(scores: &ScoreTable, config: &ModelConfig, site: SiteAddress) -> Vec<Vec<Option<f64>>> {
    let r = config.image_side / config.patch_side;
    let q = config.q();
    let mut grid = vec![vec![None; 2 * r]; 2 * r];
    for quad in Quadrant::ALL {
        let (qr, qc) = (quad.index() / 2, quad.index() % 2);
        for i in 0..q {
            let token = grid_position(TokenRole::Quad(quad), i, q) as u16;
            grid[qr * r + i / r][qc * r + i % r] = scores.rho(&SiteAddress { token, ..site });
        }
    }
    grid
}

/// CSV matrix plus PGM rendering of a grid. The CSV has one header line
/// naming the columns and then exactly one line per grid row.
pub fn write_grid(dir: &Path, stem: &str, cols: &[String], grid: &[Vec<Option<f64>>], meta: &Meta) -> FormatResult<()> {
    let header: Vec<&str> = cols.iter().map(String::as_str).collect();
    let mut t = CsvTable::new(meta, &header);
    for row in grid {
        t.push(row.iter().map(|v| sig6_opt(*v)).collect());
    }
    t.write(&dir.join(format!("{stem}.csv")))?;
    write_heatmap(&dir.join(format!("{stem}.pgm")), grid, 8, meta)
}
