// SPDX-License-Identifier: MIT OR Apache-2.0

//! `tvlab` command line. Exit codes: 0 success, 2 config error, 3 stage
//! failure.

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use tvlab_core::search::EvalMode;
use tvlab_core::tasks::TaskId;

use crate::config::{Algorithm, RunConfig};
use crate::error::RunError;
use crate::pipeline::{self, Pipeline};

#[derive(Debug, Parser)]
#[command(name = "tvlab", version, about = "Task-vector discovery on a toy patchable transformer")]
pub struct Cli {
    /// Suppress progress lines on stderr.
    #[arg(long, short, global = true)]
    pub quiet: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args, Clone, Default)]
pub struct Common {
    /// JSON run configuration; defaults apply when absent.
    #[arg(long, short)]
    pub config: Option<PathBuf>,
    /// Output root (beats the config and TVLAB_OUT).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Override the run seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Restrict to these splits, e.g. `0,2`.
    #[arg(long, value_delimiter = ',')]
    pub splits: Option<Vec<u8>>,
}

#[derive(Debug, Args, Clone, Default)]
pub struct SearchArgs {
    /// reinforce | grs | cma | random-quadrants | top-quadrants | random-k-layers
    #[arg(long)]
    pub algo: Option<String>,
    /// token | quadrant | head | layer
    #[arg(long)]
    pub granularity: Option<String>,
    /// Also search one selection shared by all tasks.
    #[arg(long)]
    pub multi_task: bool,
    /// encoder | decoder | both
    #[arg(long)]
    pub stage: Option<String>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate the four dataset splits.
    GenData(Common),
    /// Train the toy model on the pretraining pool.
    Train(Common),
    /// Record activation stores per split and task.
    Collect(Common),
    /// Taskness scores and heatmaps.
    Score(Common),
    /// Per-head clustering quality and PCA points.
    Cluster(Common),
    /// Site-subset search.
    Search {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        search: SearchArgs,
        /// model | planted
        #[arg(long, default_value = "model")]
        backend: String,
        /// Planted objective (JSON) for `--backend planted`.
        #[arg(long)]
        planted: Option<PathBuf>,
        /// Task of the planted objective.
        #[arg(long, default_value_t = 0)]
        task_index: usize,
    },
    /// Evaluate selections on the test parts.
    Eval {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        search: SearchArgs,
        /// query-only | one-shot-plus-tv (repeatable)
        #[arg(long)]
        mode: Vec<String>,
    },
    /// Evaluate a linear combination of task vectors.
    Compose {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        search: SearchArgs,
        /// Terms like `inpaint:1,segmentation:1,identity:-1`.
        #[arg(long)]
        terms: String,
        /// Task whose test images and metric score the composition.
        #[arg(long)]
        task: String,
        /// Selection JSON; defaults to the union of the searched
        /// selections of the positive terms.
        #[arg(long)]
        selection: Option<PathBuf>,
    },
    /// Tables and heatmaps from every results.csv below a directory.
    Report {
        /// Directory holding results (default: the output root).
        results: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
        /// Where to write the report (default: `<results>/report`).
        #[arg(long)]
        report_dir: Option<PathBuf>,
        /// Mix results produced by different configs.
        #[arg(long)]
        force: bool,
    },
    /// Everything: train, collect, score, cluster, search, eval, report.
    Pipeline {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        search: SearchArgs,
        /// query-only | one-shot-plus-tv (repeatable)
        #[arg(long)]
        mode: Vec<String>,
    },
}

fn cfg_err(msg: impl std::fmt::Display) -> RunError {
    RunError::Config(msg.to_string())
}

fn load(common: &Common) -> Result<RunConfig, RunError> {
    let mut cfg = match &common.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    if let Some(s) = &common.splits {
        cfg.splits.clone_from(s);
    }
    Ok(cfg)
}

fn apply_search(cfg: &mut RunConfig, s: &SearchArgs) -> Result<(), RunError> {
    if let Some(a) = &s.algo {
        if a != cfg.algorithm.name() {
            cfg.algorithm = Algorithm::from_name(a).ok_or_else(|| cfg_err(format!("unknown algorithm {a:?}")))?;
        }
    }
    if let Some(g) = &s.granularity {
        cfg.granularity = g.parse().map_err(cfg_err)?;
    }
    if let Some(st) = &s.stage {
        cfg.stages = st.parse().map_err(cfg_err)?;
    }
    cfg.multi_task |= s.multi_task;
    Ok(())
}

fn apply_modes(cfg: &mut RunConfig, modes: &[String]) -> Result<(), RunError> {
    if !modes.is_empty() {
        cfg.eval_modes = modes.iter().map(|m| m.parse::<EvalMode>().map_err(cfg_err)).collect::<Result<_, _>>()?;
    }
    Ok(())
}

fn pipeline_for(cfg: RunConfig, common: &Common, quiet: bool) -> Result<Pipeline, RunError> {
    let mut p = Pipeline::new(cfg)?;
    if let Some(out) = &common.out {
        p.root.clone_from(out);
    }
    p.quiet = quiet;
    Ok(p)
}

fn parse_terms(text: &str) -> Result<Vec<(TaskId, f64)>, RunError> {
    text.split(',')
        .map(|t| {
            let (name, coef) = t.split_once(':').unwrap_or((t, "1"));
            let task: TaskId = name.trim().parse().map_err(cfg_err)?;
            let coef: f64 = coef.trim().parse().map_err(|_| cfg_err(format!("bad coefficient in {t:?}")))?;
            Ok((task, coef))
        })
        .collect()
}

fn print_path(p: &std::path::Path) {
    println!("{}", p.display());
}

/// Run one parsed command.
pub fn run(cli: Cli) -> Result<(), RunError> {
    let quiet = cli.quiet;
    match cli.command {
        Command::GenData(c) => {
            let mut p = pipeline_for(load(&c)?, &c, quiet)?;
            print_path(&p.gen_data()?);
        }
        Command::Train(c) => {
            let mut p = pipeline_for(load(&c)?, &c, quiet)?;
            p.weights()?;
            print_path(&p.model_dir());
        }
        Command::Collect(c) => {
            let mut p = pipeline_for(load(&c)?, &c, quiet)?;
            for s in p.cfg.splits.clone() {
                p.stores(s)?;
                print_path(&p.stores_dir(s)?);
            }
        }
        Command::Score(c) => {
            let mut p = pipeline_for(load(&c)?, &c, quiet)?;
            for s in p.cfg.splits.clone() {
                p.scores(s)?;
                print_path(&p.scores_dir(s)?);
            }
        }
        Command::Cluster(c) => {
            let mut p = pipeline_for(load(&c)?, &c, quiet)?;
            for s in p.cfg.splits.clone() {
                print_path(&p.cluster(s)?);
            }
        }
        Command::Search { common, search, backend, planted, task_index } => {
            let mut cfg = load(&common)?;
            apply_search(&mut cfg, &search)?;
            match backend.as_str() {
                "model" => {
                    let mut p = pipeline_for(cfg, &common, quiet)?;
                    for s in p.cfg.splits.clone() {
                        p.search(s)?;
                        print_path(&p.search_dir(s)?);
                    }
                }
                "planted" => {
                    let path = planted.ok_or_else(|| cfg_err("--backend planted needs --planted FILE"))?;
                    let root = common.out.clone().unwrap_or_else(|| cfg.output_root());
                    print_path(&pipeline::planted_search(&cfg, &path, task_index, &root, quiet)?);
                }
                other => return Err(cfg_err(format!("unknown backend {other:?}"))),
            }
        }
        Command::Eval { common, search, mode } => {
            let mut cfg = load(&common)?;
            apply_search(&mut cfg, &search)?;
            apply_modes(&mut cfg, &mode)?;
            let mut p = pipeline_for(cfg, &common, quiet)?;
            for s in p.cfg.splits.clone() {
                p.eval(s)?;
                print_path(&p.eval_dir(s)?);
            }
        }
        Command::Compose { common, search, terms, task, selection } => {
            let mut cfg = load(&common)?;
            apply_search(&mut cfg, &search)?;
            let terms = parse_terms(&terms)?;
            let target: TaskId = task.parse().map_err(cfg_err)?;
            let mut p = pipeline_for(cfg, &common, quiet)?;
            for s in p.cfg.splits.clone() {
                print_path(&p.compose(s, &terms, target, selection.as_deref())?);
            }
        }
        Command::Report { results, common, report_dir, force } => {
            let cfg = load(&common)?;
            let root = results.or(common.out).unwrap_or_else(|| cfg.output_root());
            let out = report_dir.unwrap_or_else(|| root.join("report"));
            pipeline::report_dir(&root, &out, &cfg.splits, force)?;
            print_path(&out);
        }
        Command::Pipeline { common, search, mode } => {
            let mut cfg = load(&common)?;
            apply_search(&mut cfg, &search)?;
            apply_modes(&mut cfg, &mode)?;
            let mut p = pipeline_for(cfg, &common, quiet)?;
            print_path(&p.run()?);
        }
    }
    Ok(())
}

/// Parse, run, print any failure, and return the exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("tvlab: {e}");
            e.exit_code()
        }
    }
}
