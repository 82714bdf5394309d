// SPDX-License-Identifier: MIT OR Apache-2.0

//! Cached experiment stages: data → train → collect → score → cluster →
//! search → eval → report.
//!
//! Each stage writes into `<root>/<...>/<stage>-<key>` where the key hashes
//! the configuration the stage depends on plus the keys of its inputs. A
//! directory with a matching `stage.json` marker is reused without
//! recomputation; stages that only derive cheap quantities (scores, means)
//! recompute them from cached inputs, never running the model.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::rc::Rc;

use anyhow::{anyhow, bail, Context};
use serde::{Deserialize, Serialize};
use tvlab_core::lab::{
    cluster_report, collect, mean_activations, score_tokens, ActivationStore, MeanActivationTable, ScoreTable,
    SiteGrouping,
};
use tvlab_core::model::{train, SiteAddress, SiteFilter, Stage, Weights};
use tvlab_core::numerics::Rng;
use tvlab_core::planted::PlantedConfig;
use tvlab_core::search::{
    cma_select, compose_vectors, evaluate, grs_search, predict, random_groups, random_k_layers_grs,
    reinforce_multitask, reinforce_search, top_groups, EvalMode, GrsConfig, ModelObjective, ModelTask, MultiTask,
    Objective, PlantedObjective, ReinforceState,
};
use tvlab_core::tasks::{gen_sample, gen_split, DatasetSplit, Part, TaskId};

use crate::config::{sha256_hex, Algorithm, BaselineName, RunConfig};
use crate::error::{RunError, StageContext};
use crate::formats::csvio::{sig6, sig6_opt, CsvTable};
use crate::formats::json::{read_json, write_json, SelectionFile};
use crate::formats::{pnm, tvas, tvds, tvwt};
use crate::meta::Meta;
use crate::report::{head_grid, parse_results, results_csv, token_grid, write_grid, ReportTable, ResultRow};

/// What happened to one stage directory.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StageEvent {
    pub stage: &'static str,
    pub dir: PathBuf,
    pub cached: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
struct StageMarker {
    stage: String,
    key: String,
    meta: Meta,
}

/// Selections of one split, by task name, plus the multi-task one.
#[derive(Debug, Clone, PartialEq)]
pub struct Selections {
    pub main: BTreeMap<TaskId, SelectionFile>,
    pub baselines: BTreeMap<(TaskId, BaselineName), SelectionFile>,
    pub multi: Option<SelectionFile>,
}

pub fn key(parts: &[&str]) -> String {
    sha256_hex(parts.join("\u{1f}").as_bytes())
}

fn short(key: &str) -> &str {
    &key[..12]
}

fn json<T: Serialize>(v: &T) -> String {
    serde_json::to_string(v).expect("config values serialise")
}

pub struct Pipeline {
    pub cfg: RunConfig,
    pub hash: String,
    pub meta: Meta,
    pub root: PathBuf,
    pub quiet: bool,
    pub events: Vec<StageEvent>,
    model: tvlab_core::model::ModelConfig,
    splits: BTreeMap<u8, DatasetSplit>,
    weights: Option<Weights>,
    /// Stores of the most recently used split.
    stores: Option<(u8, Rc<Vec<ActivationStore>>)>,
}

impl Pipeline {
    pub fn new(cfg: RunConfig) -> Result<Self, RunError> {
        cfg.validate()?;
        let hash = cfg.hash()?;
        let model = cfg.resolved_model()?;
        let meta = Meta::new(hash.clone(), cfg.seed);
        let root = cfg.output_root();
        Ok(Pipeline { cfg, hash, meta, root, quiet: false, events: vec![], model, splits: BTreeMap::new(), weights: None, stores: None })
    }

    fn note(&self, msg: &str) {
        if !self.quiet {
            eprintln!("tvlab: {msg}");
        }
    }

    /// Run `produce` into `dir` unless a marker with `key` is present.
    fn stage(
        &mut self,
        stage: &'static str,
        dir: PathBuf,
        key: &str,
        produce: impl FnOnce(&Path) -> anyhow::Result<()>,
    ) -> Result<bool, RunError> {
        let marker = dir.join("stage.json");
        if let Ok(m) = read_json::<StageMarker>(&marker) {
            if m.key == key {
                if !self.events.iter().any(|e| e.dir == dir) {
                    self.note(&format!("{stage}: cached {}", dir.display()));
                    self.events.push(StageEvent { stage, dir, cached: true });
                }
                return Ok(true);
            }
        }
        if dir.exists() {
            std::fs::remove_dir_all(&dir).with_context(|| format!("clearing {}", dir.display())).stage(stage)?;
        }
        std::fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display())).stage(stage)?;
        self.note(&format!("{stage}: running into {}", dir.display()));
        produce(&dir).stage(stage)?;
        let m = StageMarker { stage: stage.into(), key: key.into(), meta: self.meta.clone() };
        write_json(&marker, &m).stage(stage)?;
        self.events.push(StageEvent { stage, dir, cached: false });
        Ok(false)
    }

    // ----------------------------------------------------------------- keys

    pub fn data_key(&self) -> Result<String, RunError> {
        Ok(match &self.cfg.datasets {
            Some(_) => key(&["data-files", &self.cfg.hash_input()?["datasets"].to_string()]),
            None => key(&["data", &self.cfg.seed.to_string(), &json(&self.cfg.sizes), &self.model.image_side.to_string()]),
        })
    }

    pub fn train_key(&self) -> String {
        key(&[
            "train",
            &self.cfg.seed.to_string(),
            &json(&self.model),
            &json(&self.cfg.train),
            &self.cfg.pretrain_samples.to_string(),
        ])
    }

    pub fn stores_key(&self, split: u8) -> Result<String, RunError> {
        Ok(key(&["collect", &self.train_key(), &self.data_key()?, &split.to_string(), &self.cfg.collect_samples.to_string()]))
    }

    pub fn scores_key(&self, split: u8) -> Result<String, RunError> {
        Ok(key(&["score", &self.stores_key(split)?, &json(&self.cfg.tasks)]))
    }

    pub fn search_key(&self, split: u8) -> Result<String, RunError> {
        Ok(key(&[
            "search",
            &self.scores_key(split)?,
            &json(&self.cfg.granularity),
            &json(&self.cfg.stages),
            &json(&self.cfg.algorithm),
            &json(&self.cfg.baselines),
            &self.cfg.multi_task.to_string(),
        ]))
    }

    pub fn eval_key(&self, split: u8) -> Result<String, RunError> {
        Ok(key(&["eval", &self.search_key(split)?, &json(&self.cfg.eval_modes)]))
    }

    fn split_dir(&self, split: u8) -> PathBuf {
        self.root.join(format!("split{split}"))
    }

    pub fn data_dir(&self) -> Result<PathBuf, RunError> {
        Ok(self.root.join(format!("data-{}", short(&self.data_key()?))))
    }

    pub fn model_dir(&self) -> PathBuf {
        self.root.join(format!("model-{}", short(&self.train_key())))
    }

    pub fn stores_dir(&self, split: u8) -> Result<PathBuf, RunError> {
        Ok(self.split_dir(split).join(format!("stores-{}", short(&self.stores_key(split)?))))
    }

    pub fn scores_dir(&self, split: u8) -> Result<PathBuf, RunError> {
        Ok(self.split_dir(split).join(format!("scores-{}", short(&self.scores_key(split)?))))
    }

    pub fn cluster_dir(&self, split: u8) -> Result<PathBuf, RunError> {
        Ok(self.split_dir(split).join(format!("cluster-{}", short(&self.scores_key(split)?))))
    }

    pub fn search_dir(&self, split: u8) -> Result<PathBuf, RunError> {
        let name = self.cfg.algorithm.name();
        Ok(self.split_dir(split).join(format!("search-{name}-{}", short(&self.search_key(split)?))))
    }

    pub fn eval_dir(&self, split: u8) -> Result<PathBuf, RunError> {
        Ok(self.split_dir(split).join(format!("eval-{}", short(&self.eval_key(split)?))))
    }

    pub fn report_dir(&self) -> Result<PathBuf, RunError> {
        let mut parts = vec!["report".to_string()];
        for &s in &self.cfg.splits {
            parts.push(self.eval_key(s)?);
        }
        let refs: Vec<&str> = parts.iter().map(String::as_str).collect();
        Ok(self.root.join(format!("report-{}", short(&key(&refs)))))
    }

    // --------------------------------------------------------------- stages

    /// Writes all four split files (unless the config names existing ones).
    pub fn gen_data(&mut self) -> Result<PathBuf, RunError> {
        if self.cfg.datasets.is_some() {
            return Err(RunError::Config("datasets are given in the config; nothing to generate".into()));
        }
        let dir = self.data_dir()?;
        let k = self.data_key()?;
        let (seed, sizes, side, meta) = (self.cfg.seed, self.cfg.sizes, self.model.image_side, self.meta.clone());
        self.stage("gen-data", dir.clone(), &k, |dir| {
            for s in 0..4u8 {
                let split = gen_split(&Rng::new(seed), s, &TaskId::ALL, sizes, side)?;
                tvds::write(&dir.join(format!("split{s}.tvds")), &split, &meta)?;
            }
            Ok(())
        })?;
        Ok(dir)
    }

    pub fn split_data(&mut self, split: u8) -> Result<DatasetSplit, RunError> {
        if let Some(d) = self.splits.get(&split) {
            return Ok(d.clone());
        }
        let path = match &self.cfg.datasets {
            Some(files) => files[usize::from(split)].clone(),
            None => self.gen_data()?.join(format!("split{split}.tvds")),
        };
        let (data, _) = tvds::read(&path).stage("gen-data")?;
        if data.split_id != split {
            return Err(RunError::Config(format!("{} holds split {}, expected {split}", path.display(), data.split_id)));
        }
        if data.side != self.model.image_side {
            return Err(RunError::Config(format!("{} has image side {}, model expects {}", path.display(), data.side, self.model.image_side)));
        }
        self.splits.insert(split, data.clone());
        Ok(data)
    }

    pub fn weights(&mut self) -> Result<Weights, RunError> {
        if let Some(w) = &self.weights {
            return Ok(w.clone());
        }
        let dir = self.model_dir();
        let k = self.train_key();
        let (seed, model, hyper, n, meta) =
            (self.cfg.seed, self.model, self.cfg.train, self.cfg.pretrain_samples, self.meta.clone());
        self.stage("train", dir.clone(), &k, |dir| {
            let pool = pretrain_pool(seed, n, model.image_side)?;
            let mut w = Weights::init(model, &Rng::new(seed).child_named("init"))?;
            let report = train(&mut w, &pool, &hyper)?;
            let mut t = CsvTable::new(&meta, &["step", "loss"]);
            for (i, l) in report.losses.iter().enumerate() {
                t.push(vec![i.to_string(), sig6(*l)]);
            }
            t.write(&dir.join("train_loss.csv"))?;
            tvwt::write(&dir.join("weights.tvwt"), &w, &meta)?;
            Ok(())
        })?;
        let (w, _) = tvwt::read(&dir.join("weights.tvwt")).stage("train")?;
        if w.config != self.model {
            return Err(RunError::Stage { stage: "train", source: anyhow!("checkpoint config differs from the run") });
        }
        self.weights = Some(w.clone());
        Ok(w)
    }

    /// Stores for every task (f32 precision), in `TaskId::ALL` order.
    pub fn stores(&mut self, split: u8) -> Result<Rc<Vec<ActivationStore>>, RunError> {
        let dir = self.stores_dir(split)?;
        let k = self.stores_key(split)?;
        let marker_ok = read_json::<StageMarker>(&dir.join("stage.json")).is_ok_and(|m| m.key == k);
        if !marker_ok {
            let w = self.weights()?;
            let data = self.split_data(split)?;
            let (n, meta) = (self.cfg.collect_samples, self.meta.clone());
            self.stage("collect", dir.clone(), &k, |dir| {
                for task in TaskId::ALL {
                    let samples: Vec<_> = data.of_task(Part::Train, task).into_iter().cloned().collect();
                    let store = tvas::to_storage_precision(&collect(&w, &samples, n, &SiteFilter::All)?);
                    tvas::write(&dir.join(format!("{task}.tvas")), &store, &meta)?;
                }
                Ok(())
            })?;
        } else {
            self.stage("collect", dir.clone(), &k, |_| Ok(()))?;
        }
        if let Some((s, stores)) = &self.stores {
            if *s == split {
                return Ok(Rc::clone(stores));
            }
        }
        let stores = TaskId::ALL
            .iter()
            .map(|t| Ok(tvas::read(&dir.join(format!("{t}.tvas")))?.0))
            .collect::<anyhow::Result<Vec<_>>>()
            .stage("collect")?;
        let stores = Rc::new(stores);
        self.stores = Some((split, Rc::clone(&stores)));
        Ok(stores)
    }

    fn task_stores<'a>(&self, stores: &'a [ActivationStore]) -> Vec<ActivationStore> {
        self.cfg.tasks.iter().map(|t| stores.iter().find(|s| s.task == *t).expect("all tasks collected").clone()).collect()
    }

    /// Taskness scores over the configured tasks; writes token and head
    /// tables plus heatmaps.
    pub fn scores(&mut self, split: u8) -> Result<ScoreTable, RunError> {
        let stores = self.stores(split)?;
        let chosen = self.task_stores(&stores);
        let table = if chosen.len() >= 2 {
            score_tokens(&chosen).stage("score")?
        } else {
            return Err(RunError::Config("scoring needs at least two tasks".into()));
        };
        let (dir, k) = (self.scores_dir(split)?, self.scores_key(split)?);
        let (model, meta) = (self.model, self.meta.clone());
        let t2 = table.clone();
        self.stage("score", dir, &k, move |dir| write_scores(dir, &t2, &model, &meta).map_err(Into::into))?;
        Ok(table)
    }

    pub fn cluster(&mut self, split: u8) -> Result<PathBuf, RunError> {
        let stores = self.stores(split)?;
        let chosen = self.task_stores(&stores);
        let (dir, k) = (self.cluster_dir(split)?, self.scores_key(split)?);
        let (model, meta) = (self.model, self.meta.clone());
        self.stage("cluster", dir.clone(), &k, move |dir| {
            let mut heads = CsvTable::new(&meta, &["stage", "layer", "head", "silhouette", "davies_bouldin"]);
            let mut points = CsvTable::new(&meta, &["stage", "layer", "head", "task", "pc1", "pc2"]);
            for stage in [Stage::Encoder, Stage::Decoder] {
                for layer in 0..model.layers(stage) as u16 {
                    for head in 0..model.heads as u16 {
                        let c = cluster_report(&chosen, stage, layer, head)?;
                        let id = [stage.name().to_string(), layer.to_string(), head.to_string()];
                        heads.push([id.to_vec(), vec![sig6(c.silhouette), sig6(c.davies_bouldin)]].concat());
                        for (x, y, task) in &c.points {
                            points.push([id.to_vec(), vec![task.name().into(), sig6(*x), sig6(*y)]].concat());
                        }
                    }
                }
            }
            heads.write(&dir.join("heads.csv"))?;
            points.write(&dir.join("points.csv"))?;
            Ok(())
        })?;
        Ok(dir)
    }

    fn grouping(&self) -> SiteGrouping {
        SiteGrouping::new(&self.model, self.cfg.granularity, self.cfg.stages)
    }

    fn model_tasks(&self, data: &DatasetSplit) -> Vec<ModelTask> {
        self.cfg
            .tasks
            .iter()
            .map(|&task| ModelTask {
                task,
                train: data.of_task(Part::Train, task).into_iter().cloned().collect(),
                heldout: data.of_task(Part::Val, task).into_iter().cloned().collect(),
            })
            .collect()
    }

    fn means(&mut self, split: u8) -> Result<MeanActivationTable, RunError> {
        let stores = self.stores(split)?;
        mean_activations(&stores).stage("collect")
    }

    /// Search seed of one `(split, task)`; `task = None` for the shared
    /// multi-task search.
    pub fn search_seed(&self, split: u8, task: Option<TaskId>) -> u64 {
        let t = task.map_or(u64::MAX, |t| u64::from(t.code()));
        Rng::new(self.cfg.seed).child_named("search").child_path(&[u64::from(split), t, self.cfg.algorithm.seed()]).next_u64()
    }

    pub fn search(&mut self, split: u8) -> Result<Selections, RunError> {
        let dir = self.search_dir(split)?;
        let k = self.search_key(split)?;
        let cached = read_json::<StageMarker>(&dir.join("stage.json")).is_ok_and(|m| m.key == k);
        if !cached {
            let w = self.weights()?;
            let data = self.split_data(split)?;
            let scores = self.scores(split)?;
            let means = self.means(split)?;
            let grouping = self.grouping();
            let obj = ModelObjective::new(&w, &grouping, &means, self.model_tasks(&data), EvalMode::QueryOnly)
                .stage("search")?;
            let gscores = grouping.group_scores(&scores);
            let layer_order = scores.ranked_layers(&self.model);
            let seeds: Vec<u64> = self.cfg.tasks.iter().map(|&t| self.search_seed(split, Some(t))).collect();
            let multi_seed = self.search_seed(split, None);
            let (cfg, meta) = (self.cfg.clone(), self.meta.clone());
            self.stage("search", dir.clone(), &k, |dir| {
                let ctx = SearchCtx { cfg: &cfg, meta: &meta, obj: &obj, grouping: &grouping, gscores: &gscores, layer_order: &layer_order };
                for (ti, &task) in cfg.tasks.iter().enumerate() {
                    ctx.run_task(dir, ti, task, seeds[ti])?;
                }
                if cfg.multi_task {
                    ctx.run_multi(dir, multi_seed)?;
                }
                Ok(())
            })?;
        } else {
            self.stage("search", dir.clone(), &k, |_| Ok(()))?;
        }
        self.load_selections(&dir).stage("search")
    }

    fn load_selections(&self, dir: &Path) -> anyhow::Result<Selections> {
        let mut main = BTreeMap::new();
        let mut baselines = BTreeMap::new();
        for &task in &self.cfg.tasks {
            main.insert(task, read_json(&dir.join(format!("{task}.json")))?);
            for &b in &self.cfg.baselines {
                baselines.insert((task, b), read_json(&dir.join(format!("{task}-{}.json", b.name())))?);
            }
        }
        let multi = if self.cfg.multi_task { Some(read_json(&dir.join("multi-task.json"))?) } else { None };
        Ok(Selections { main, baselines, multi })
    }

    pub fn eval(&mut self, split: u8) -> Result<Vec<ResultRow>, RunError> {
        let dir = self.eval_dir(split)?;
        let k = self.eval_key(split)?;
        let cached = read_json::<StageMarker>(&dir.join("stage.json")).is_ok_and(|m| m.key == k);
        if !cached {
            let sel = self.search(split)?;
            let w = self.weights()?;
            let data = self.split_data(split)?;
            let means = self.means(split)?;
            let grouping = self.grouping();
            let (cfg, meta) = (self.cfg.clone(), self.meta.clone());
            self.stage("eval", dir.clone(), &k, |dir| {
                let rows = eval_split(&cfg, &w, &grouping, &means, &data, &sel, split)?;
                results_csv(&meta, &rows).write(&dir.join("results.csv"))?;
                write_strips(dir, &cfg, &w, &grouping, &means, &data, &sel, &meta)?;
                Ok(())
            })?;
        } else {
            self.stage("eval", dir.clone(), &k, |_| Ok(()))?;
        }
        let t = CsvTable::read(&dir.join("results.csv")).stage("eval")?;
        parse_results(&t).stage("eval")
    }

    /// Everything, then the report. Returns the report directory.
    pub fn run(&mut self) -> Result<PathBuf, RunError> {
        let splits = self.cfg.splits.clone();
        let mut rows = Vec::new();
        for &s in &splits {
            self.scores(s)?;
            self.cluster(s)?;
            rows.extend(self.eval(s)?);
        }
        let dir = self.report_dir()?;
        let k = key(&["report", &dir.display().to_string()]);
        let (meta, model) = (self.meta.clone(), self.model);
        let score_dirs: Vec<PathBuf> = splits.iter().map(|&s| self.scores_dir(s)).collect::<Result<_, _>>()?;
        self.stage("report", dir.clone(), &k, |dir| {
            write_report(dir, &rows, &splits, &meta)?;
            write_mean_heatmap(dir, &score_dirs, &model, &meta)?;
            Ok(())
        })?;
        Ok(dir)
    }
}

impl Pipeline {
    /// Scores a linear combination of task vectors on `target`'s test part,
    /// next to `target`'s own vector under the same selection.
    pub fn compose(
        &mut self,
        split: u8,
        terms: &[(TaskId, f64)],
        target: TaskId,
        selection: Option<&Path>,
    ) -> Result<PathBuf, RunError> {
        let grouping = self.grouping();
        let (mask, sel_key) = match selection {
            Some(path) => {
                let f: SelectionFile = read_json(path).map_err(|e| RunError::Config(e.to_string()))?;
                let m = f.mask_for(&grouping).map_err(|e| RunError::Config(e.to_string()))?;
                (m, key(&["file", &json(&f.groups)]))
            }
            None => {
                let sel = self.search(split)?;
                let mut m = vec![false; grouping.len()];
                for (task, _) in terms.iter().filter(|(_, c)| *c > 0.0) {
                    if let Some(f) = sel.main.get(task) {
                        for (acc, v) in m.iter_mut().zip(f.mask_for(&grouping).stage("compose")?) {
                            *acc |= v;
                        }
                    }
                }
                (m, self.search_key(split)?)
            }
        };
        if !mask.iter().any(|m| *m) {
            return Err(RunError::Config("composition needs a non-empty selection".into()));
        }
        let label: String = terms.iter().map(|(t, c)| format!("{c:+}·{t}")).collect::<Vec<_>>().join(" ");
        let k = key(&["compose", &self.stores_key(split)?, &sel_key, &label, target.name()]);
        let dir = self.split_dir(split).join(format!("compose-{}", short(&k)));
        let cached = read_json::<StageMarker>(&dir.join("stage.json")).is_ok_and(|m| m.key == k);
        if !cached {
            let means = self.means(split)?;
            let w = self.weights()?;
            let data = self.split_data(split)?;
            let meta = self.meta.clone();
            self.stage("compose", dir.clone(), &k, |dir| {
                let mut table = means.clone();
                table.tasks.insert(target, compose_vectors(&means, terms)?);
                let test: Vec<_> = data.of_task(Part::Test, target).into_iter().cloned().collect();
                let m = target.metric();
                let mut rows = Vec::new();
                for (method, t) in [(format!("compose {label}"), &table), (format!("task vector {target}"), &means)] {
                    let score = evaluate(&w, &grouping, t, &mask, target, &test, m, EvalMode::QueryOnly)?;
                    rows.push(ResultRow { method, task: target, split, score });
                }
                results_csv(&meta, &rows).write(&dir.join("results.csv"))?;
                if let Some(sample) = test.first() {
                    let patch = table.patch_for(target, &grouping.expand(&mask)?)?;
                    let out = predict(&w, sample, &patch, EvalMode::QueryOnly)?;
                    pnm::write_strip(&dir.join("strip.ppm"), &[&sample.x_q, &out, &sample.y_q], 8, &meta)?;
                }
                Ok(())
            })?;
        } else {
            self.stage("compose", dir.clone(), &k, |_| Ok(()))?;
        }
        Ok(dir)
    }
}

/// Search against a planted objective read from `path`; writes
/// `selection.json` (and a log for iterative searches) below `root`.
pub fn planted_search(cfg: &RunConfig, path: &Path, task: usize, root: &Path, quiet: bool) -> Result<PathBuf, RunError> {
    let bytes = std::fs::read(path).map_err(|e| RunError::Config(format!("cannot read {}: {e}", path.display())))?;
    let planted: PlantedConfig =
        serde_json::from_slice(&bytes).map_err(|e| RunError::Config(format!("bad planted config: {e}")))?;
    planted.validate().map_err(|e| RunError::Config(e.to_string()))?;
    if task >= planted.tasks.len() {
        return Err(RunError::Config(format!("planted config has {} tasks, asked for {task}", planted.tasks.len())));
    }
    if matches!(cfg.algorithm, Algorithm::TopQuadrants(_)) {
        return Err(RunError::Config("top-quadrants needs taskness scores, which planted objectives lack".into()));
    }
    let mut p = Pipeline::new(cfg.clone())?;
    p.root = root.to_path_buf();
    p.quiet = quiet;
    let seed = Rng::new(cfg.seed).child_named("planted").child_path(&[task as u64, cfg.algorithm.seed()]).next_u64();
    let algo = cfg.algorithm.with_seed(seed);
    let k = key(&["planted", &sha256_hex(&bytes), &task.to_string(), &json(&algo)]);
    let dir = root.join(format!("planted-{}-{}", algo.name(), short(&k)));
    let meta = p.meta.clone();
    p.stage("search", dir.clone(), &k, |dir| {
        let obj = PlantedObjective::new(planted.clone(), seed)?;
        let n = obj.n_groups();
        let n_layers = planted.layer_of.iter().max().map_or(1, |m| m + 1);
        let (mask, theta, step) = match &algo {
            Algorithm::Reinforce(c) => {
                let r = reinforce_search(&obj, task, c)?;
                write_log(&dir.join("log.csv"), &meta, &r.state, None)?;
                write_json(&dir.join("state.json"), &r.state)?;
                let th = r.state.checkpoints.iter().find(|c| c.step == r.best_step).map(|c| c.theta.clone());
                (r.mask, th, Some(r.best_step))
            }
            Algorithm::Grs(c) => {
                let order: Vec<usize> = (0..n_layers).collect();
                let r = grs_search(&obj, task, &order, c)?;
                write_grs_log(&dir.join("log.csv"), &meta, &r, None)?;
                (r.mask, None, Some(r.evaluations))
            }
            Algorithm::RandomKLayers(c) => {
                let r = random_k_layers_grs(&obj, task, n_layers, c)?;
                write_grs_log(&dir.join("log.csv"), &meta, &r, None)?;
                (r.mask, None, Some(r.evaluations))
            }
            Algorithm::Cma(c) => (cma_select(&obj, task, c.n_images.min(obj.n_train), c.fraction, seed)?.mask, None, None),
            Algorithm::RandomQuadrants(c) => (random_groups(n, c.count.unwrap_or(n.div_ceil(4)).min(n), seed)?, None, None),
            Algorithm::TopQuadrants(_) => unreachable!("rejected above"),
        };
        let loss = planted.expected_loss(task, &mask)?;
        let f = SelectionFile::planted(&meta, algo.name(), vec![format!("planted-{task}")], &mask, theta.as_deref(), step, loss, seed);
        write_json(&dir.join("selection.json"), &f)?;
        Ok(())
    })?;
    Ok(dir)
}

/// Mixed-task pool the toy model is trained on, independent of the splits.
pub fn pretrain_pool(seed: u64, n: usize, side: usize) -> tvlab_core::Result<Vec<tvlab_core::tasks::TripletSample>> {
    let root = Rng::new(seed).child_named("pretrain");
    (0..n).map(|i| gen_sample(TaskId::ALL[i % TaskId::ALL.len()], side, &root.child(i as u64))).collect()
}

fn write_scores(
    dir: &Path,
    table: &ScoreTable,
    model: &tvlab_core::model::ModelConfig,
    meta: &Meta,
) -> crate::formats::FormatResult<()> {
    let mut t = CsvTable::new(meta, &["site", "stage", "layer", "head", "token", "rho"]);
    for s in &table.tokens {
        let a = s.site;
        t.push(vec![
            a.to_string(),
            a.stage.name().into(),
            a.layer.to_string(),
            a.head.to_string(),
            a.token.to_string(),
            sig6(s.rho),
        ]);
    }
    t.write(&dir.join("tokens.csv"))?;
    let heads: Vec<String> = (0..model.heads).map(|h| format!("head{h}")).collect();
    write_grid(dir, "heads", &heads, &head_grid(table, model), meta)?;
    let mut layers = CsvTable::new(meta, &["global_layer", "stage", "layer", "rho"]);
    for (g, rho) in table.layer_scores(model).iter().enumerate() {
        let (stage, l) = model.split_layer(g);
        layers.push(vec![g.to_string(), stage.name().into(), l.to_string(), sig6(*rho)]);
    }
    layers.write(&dir.join("layers.csv"))?;
    let r = model.image_side / model.patch_side;
    let cols: Vec<String> = (0..2 * r).map(|c| format!("col{c}")).collect();
    for stage in [Stage::Encoder, Stage::Decoder] {
        for layer in 0..model.layers(stage) {
            for head in 0..model.heads {
                let grid = token_grid(table, model, SiteAddress::new(stage, layer, head, 0));
                write_grid(&dir.join("tokens"), &format!("{}-L{layer}-H{head}", stage.name()), &cols, &grid, meta)?;
            }
        }
    }
    Ok(())
}

struct SearchCtx<'a> {
    cfg: &'a RunConfig,
    meta: &'a Meta,
    obj: &'a ModelObjective<'a>,
    grouping: &'a SiteGrouping,
    gscores: &'a [f64],
    layer_order: &'a [usize],
}

/// Held-out loss back to the task's score scale.
fn loss_to_score(task: TaskId, loss: f64) -> f64 {
    match task.metric() {
        tvlab_core::tasks::Metric::MIoU => 1.0 - loss,
        tvlab_core::tasks::Metric::Mse => loss,
    }
}

/// Search log; held-out losses are shown as task scores when `task` is
/// known (multi-task and planted runs keep the loss).
fn write_log(path: &Path, meta: &Meta, state: &ReinforceState, task: Option<TaskId>) -> anyhow::Result<()> {
    let mut t = CsvTable::new(meta, &["step", "mean_reward", "heldout_score"]);
    let score = |l: f64| task.map_or(l, |t| loss_to_score(t, l));
    for r in &state.log {
        t.push(vec![r.step.to_string(), sig6(r.mean_reward), sig6_opt(r.heldout.map(score))]);
    }
    t.write(path)?;
    Ok(())
}

impl SearchCtx<'_> {
    fn n_layers(&self) -> usize {
        self.layer_order.len()
    }

    fn grs_config(&self, seed: u64) -> GrsConfig {
        match &self.cfg.algorithm {
            Algorithm::Grs(c) | Algorithm::RandomKLayers(c) => GrsConfig { seed, ..c.clone() },
            _ => GrsConfig { seed, ..GrsConfig::default() },
        }
    }

    fn save(
        &self,
        path: &Path,
        algorithm: &str,
        tasks: &[TaskId],
        mask: &[bool],
        theta: Option<&[f64]>,
        step: Option<usize>,
        heldout: f64,
        seed: u64,
    ) -> anyhow::Result<()> {
        let names = tasks.iter().map(|t| t.name().to_string()).collect();
        let f = SelectionFile::for_grouping(self.meta, algorithm, self.grouping, names, mask, theta, step, heldout, seed)?;
        write_json(path, &f)?;
        Ok(())
    }

    fn run_task(&self, dir: &Path, ti: usize, task: TaskId, seed: u64) -> anyhow::Result<()> {
        let n = self.obj.n_groups();
        let algo = self.cfg.algorithm.with_seed(seed);
        let (mask, theta, step) = match &algo {
            Algorithm::Reinforce(c) => {
                let r = reinforce_search(self.obj, ti, c)?;
                write_log(&dir.join(format!("{task}-log.csv")), self.meta, &r.state, Some(task))?;
                write_json(&dir.join(format!("{task}-state.json")), &r.state)?;
                let ck = r.state.checkpoints.iter().find(|c| c.step == r.best_step).map(|c| c.theta.clone());
                (r.mask, ck, Some(r.best_step))
            }
            Algorithm::Grs(c) => {
                let r = grs_search(self.obj, ti, self.layer_order, c)?;
                write_grs_log(&dir.join(format!("{task}-log.csv")), self.meta, &r, Some(task))?;
                (r.mask, None, Some(r.evaluations))
            }
            Algorithm::RandomKLayers(c) => {
                let r = random_k_layers_grs(self.obj, ti, self.n_layers(), c)?;
                write_grs_log(&dir.join(format!("{task}-log.csv")), self.meta, &r, Some(task))?;
                (r.mask, None, Some(r.evaluations))
            }
            Algorithm::Cma(c) => {
                let images = c.n_images.min(self.obj.n_train(ti));
                let r = cma_select(self.obj, ti, images, c.fraction, seed)?;
                let mut t = CsvTable::new(self.meta, &["group", "score"]);
                for (g, s) in r.scores.iter().enumerate() {
                    t.push(vec![g.to_string(), sig6(*s)]);
                }
                t.write(&dir.join(format!("{task}-cma-scores.csv")))?;
                (r.mask, None, None)
            }
            Algorithm::RandomQuadrants(c) => (random_groups(n, c.count.unwrap_or(n.div_ceil(4)).min(n), seed)?, None, None),
            Algorithm::TopQuadrants(c) => (top_groups(self.gscores, c.count.unwrap_or(n.div_ceil(4)).min(n))?, None, None),
        };
        let heldout = loss_to_score(task, self.obj.heldout_loss(ti, &mask)?);
        self.save(&dir.join(format!("{task}.json")), algo.name(), &[task], &mask, theta.as_deref(), step, heldout, seed)?;

        let size = mask.iter().filter(|m| **m).count();
        for &b in &self.cfg.baselines {
            let bseed = Rng::new(seed).child_named(b.name()).next_u64();
            let bmask = match b {
                BaselineName::RandomQuadrants => random_groups(n, size, bseed)?,
                BaselineName::TopQuadrants => top_groups(self.gscores, size)?,
                BaselineName::RandomKLayers => random_k_layers_grs(self.obj, ti, self.n_layers(), &self.grs_config(bseed))?.mask,
            };
            let h = loss_to_score(task, self.obj.heldout_loss(ti, &bmask)?);
            self.save(&dir.join(format!("{task}-{}.json", b.name())), b.name(), &[task], &bmask, None, None, h, bseed)?;
        }
        Ok(())
    }

    fn run_multi(&self, dir: &Path, seed: u64) -> anyhow::Result<()> {
        let Algorithm::Reinforce(c) = &self.cfg.algorithm else {
            bail!("multi-task search is only defined for reinforce");
        };
        let t = self.cfg.tasks.len();
        let empty = vec![false; self.obj.n_groups()];
        let mut z = Vec::with_capacity(t);
        for ti in 0..t {
            z.push(self.obj.heldout_loss(ti, &empty)?.max(1e-12));
        }
        let per = 2;
        let filler = (c.images_per_iter > per * t).then(|| (0, z[0]));
        let plan = MultiTask {
            tasks: (0..t).collect(),
            normalizers: z.clone(),
            heldout_normalizers: z,
            images_per_task: per,
            filler,
        };
        let cfg = tvlab_core::search::ReinforceConfig { seed, ..c.clone() };
        let r = reinforce_multitask(self.obj, plan, &cfg)?;
        write_log(&dir.join("multi-task-log.csv"), self.meta, &r.state, None)?;
        write_json(&dir.join("multi-task-state.json"), &r.state)?;
        let theta = r.state.checkpoints.iter().find(|c| c.step == r.best_step).map(|c| c.theta.clone());
        self.save(&dir.join("multi-task.json"), "reinforce-multi-task", &self.cfg.tasks, &r.mask, theta.as_deref(), Some(r.best_step), r.heldout, seed)
    }
}

fn write_grs_log(path: &Path, meta: &Meta, r: &tvlab_core::search::GrsResult, task: Option<TaskId>) -> anyhow::Result<()> {
    let mut t = CsvTable::new(meta, &["step", "mean_reward", "heldout_score"]);
    let score = |l: f64| task.map_or(l, |t| loss_to_score(t, l));
    t.push(vec!["0".into(), String::new(), sig6(score(r.initial))]);
    for f in &r.flips {
        t.push(vec![f.iteration.to_string(), String::new(), sig6(score(f.heldout))]);
    }
    t.write(path)?;
    Ok(())
}

/// Method label of the main algorithm in result tables.
pub fn method_label(cfg: &RunConfig) -> String {
    format!("{} ({})", cfg.algorithm.name(), cfg.granularity.name())
}

fn eval_split(
    cfg: &RunConfig,
    w: &Weights,
    grouping: &SiteGrouping,
    means: &MeanActivationTable,
    data: &DatasetSplit,
    sel: &Selections,
    split: u8,
) -> anyhow::Result<Vec<ResultRow>> {
    let mut rows = Vec::new();
    let none = vec![false; grouping.len()];
    let label = method_label(cfg);
    for &task in &cfg.tasks {
        let test: Vec<_> = data.of_task(Part::Test, task).into_iter().cloned().collect();
        let m = task.metric();
        let mut push = |method: String, mask: &[bool], mode: EvalMode| -> anyhow::Result<()> {
            let score = evaluate(w, grouping, means, mask, task, &test, m, mode)?;
            rows.push(ResultRow { method, task, split, score });
            Ok(())
        };
        push("one-shot".into(), &none, EvalMode::OneShot)?;
        push("query-only (no patch)".into(), &none, EvalMode::QueryOnly)?;
        let main = sel.main[&task].mask_for(grouping)?;
        for &mode in &cfg.eval_modes {
            match mode {
                EvalMode::QueryOnly => push(label.clone(), &main, mode)?,
                EvalMode::OneShotPlusTv => push(format!("one-shot + {label}"), &main, mode)?,
                EvalMode::OneShot => {}
            }
        }
        for &b in &cfg.baselines {
            push(b.name().into(), &sel.baselines[&(task, b)].mask_for(grouping)?, EvalMode::QueryOnly)?;
        }
        if let Some(multi) = &sel.multi {
            push(format!("{label}, multi-task"), &multi.mask_for(grouping)?, EvalMode::QueryOnly)?;
        }
    }
    Ok(rows)
}

#[allow(clippy::too_many_arguments)]
fn write_strips(
    dir: &Path,
    cfg: &RunConfig,
    w: &Weights,
    grouping: &SiteGrouping,
    means: &MeanActivationTable,
    data: &DatasetSplit,
    sel: &Selections,
    meta: &Meta,
) -> anyhow::Result<()> {
    for &task in &cfg.tasks {
        let Some(sample) = data.of_task(Part::Test, task).first().copied() else { continue };
        let mask = sel.main[&task].mask_for(grouping)?;
        let patch = means.patch_for(task, &grouping.expand(&mask)?)?;
        let one = predict(w, sample, &patch, EvalMode::OneShot)?;
        let tv = predict(w, sample, &patch, EvalMode::QueryOnly)?;
        pnm::write_strip(&dir.join("strips").join(format!("{task}.ppm")), &[&sample.x_q, &one, &tv, &sample.y_q], 8, meta)?;
    }
    Ok(())
}

/// Markdown and CSV tables over `splits`.
pub fn write_report(dir: &Path, rows: &[ResultRow], splits: &[u8], meta: &Meta) -> anyhow::Result<ReportTable> {
    let table = ReportTable::build(rows, splits);
    let mut md = format!("<!-- {} -->\n\nScores are mean ± population std over splits {:?}.\n\n", meta.comment(), splits);
    md.push_str(&table.to_markdown());
    crate::formats::write_file(&dir.join("table.md"), md.as_bytes())?;
    table.to_csv(meta).write(&dir.join("table.csv"))?;
    Ok(table)
}

/// Head-taskness heatmap averaged over the splits that have one.
pub fn write_mean_heatmap(
    dir: &Path,
    score_dirs: &[PathBuf],
    model: &tvlab_core::model::ModelConfig,
    meta: &Meta,
) -> anyhow::Result<()> {
    let mut sum = vec![vec![0.0; model.heads]; model.total_layers()];
    let mut n = 0usize;
    for d in score_dirs {
        let Ok(t) = CsvTable::read(&d.join("heads.csv")) else { continue };
        if t.rows.len() != sum.len() {
            bail!("{} has {} rows, expected {}", d.display(), t.rows.len(), sum.len());
        }
        for (acc, row) in sum.iter_mut().zip(&t.rows) {
            for (a, v) in acc.iter_mut().zip(row) {
                *a += v.parse::<f64>().unwrap_or(f64::NAN);
            }
        }
        n += 1;
    }
    if n == 0 {
        return Ok(());
    }
    let grid: Vec<Vec<Option<f64>>> =
        sum.iter().map(|r| r.iter().map(|v| Some(v / n as f64).filter(|x| x.is_finite())).collect()).collect();
    let heads: Vec<String> = (0..model.heads).map(|h| format!("head{h}")).collect();
    write_grid(dir, "heads-mean", &heads, &grid, meta)?;
    Ok(())
}

/// Report over every `results.csv` below `root`. Mixed config hashes are
/// refused unless `force`.
pub fn report_dir(root: &Path, out: &Path, splits: &[u8], force: bool) -> Result<ReportTable, RunError> {
    let mut files = Vec::new();
    collect_results(root, &mut files).stage("report")?;
    files.sort();
    if files.is_empty() {
        return Err(RunError::Stage { stage: "report", source: anyhow!("no results.csv below {}", root.display()) });
    }
    let mut rows = Vec::new();
    let mut meta: Option<Meta> = None;
    for f in &files {
        let t = CsvTable::read(f).stage("report")?;
        let m = t.meta.clone().ok_or_else(|| anyhow!("{} has no provenance line", f.display())).stage("report")?;
        match &meta {
            Some(first) if first.config_hash != m.config_hash && !force => {
                return Err(RunError::Stage {
                    stage: "report",
                    source: anyhow!(
                        "{} comes from config {} but earlier results from {}; pass --force to mix",
                        f.display(),
                        m.config_hash,
                        first.config_hash
                    ),
                })
            }
            None => meta = Some(m),
            _ => {}
        }
        rows.extend(parse_results(&t).stage("report")?);
    }
    let meta = meta.expect("at least one file");
    write_report(out, &rows, splits, &meta).stage("report")
}

fn collect_results(dir: &Path, out: &mut Vec<PathBuf>) -> anyhow::Result<()> {
    for entry in std::fs::read_dir(dir).with_context(|| format!("reading {}", dir.display()))? {
        let p = entry?.path();
        if p.is_dir() {
            collect_results(&p, out)?;
        } else if p.file_name().is_some_and(|n| n == "results.csv") {
            out.push(p);
        }
    }
    Ok(())
}
