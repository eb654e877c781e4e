use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::condense::{condense, init_condensed, reconstruct_backbone, Backbone, CondensedGraph};
use crate::downstream::{
    evaluate_link, evaluate_node, finetune_link_head, finetune_node_head, sample_few_shot, EvalReport, HeadParams, Task,
};
use crate::encoder::EncoderParams;
use crate::error::{Error, Result};
use crate::fsutil::write_atomic;
use crate::graph::{generate_sbm, load_graph, partition_sources, save_graph, split_edges, EdgeSplit, Graph};
use crate::pseudo::{train_pseudo_labels, PseudoLabelResult};

use super::config::{condensed_size, ExperimentConfig};
use super::{derive_seed, stream};

const MARKER: &str = ".complete";

/// Directory layout of one pipeline run.
#[derive(Debug, Clone)]
pub struct RunLayout {
    root: PathBuf,
}

impl RunLayout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn graph_dir(&self) -> PathBuf {
        self.root.join("graph")
    }

    pub fn split_path(&self) -> PathBuf {
        self.root.join("graph").join("split.json")
    }

    pub fn source_dir(&self, i: usize) -> PathBuf {
        self.root.join("sources").join(i.to_string())
    }

    pub fn source_graph_dir(&self, i: usize) -> PathBuf {
        self.source_dir(i).join("graph")
    }

    pub fn pretrain_dir(&self, i: usize) -> PathBuf {
        self.source_dir(i).join("pretrain")
    }

    pub fn condensed_dir(&self, i: usize) -> PathBuf {
        self.source_dir(i).join("condensed")
    }

    pub fn backbone_dir(&self) -> PathBuf {
        self.root.join("backbone")
    }

    pub fn head_dir(&self) -> PathBuf {
        self.root.join("head")
    }

    pub fn results_path(&self) -> PathBuf {
        self.root.join("results.jsonl")
    }

    pub fn results_csv_path(&self) -> PathBuf {
        self.root.join("results.csv")
    }

    pub fn error_path(&self) -> PathBuf {
        self.root.join("error.json")
    }

    pub fn run_record_path(&self) -> PathBuf {
        self.root.join("run.json")
    }
}

fn is_complete(dir: &Path) -> bool {
    dir.join(MARKER).is_file()
}

fn mark_complete(dir: &Path) -> Result<()> {
    let p = dir.join(MARKER);
    write_atomic(&p, b"").map_err(|e| Error::io(&p, e))
}

pub(crate) fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let bytes = serde_json::to_vec_pretty(value).expect("value serializes");
    write_atomic(path, &bytes).map_err(|e| Error::io(path, e))
}

pub(crate) fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::artifact(path, e.to_string()))
}

fn require(dir: &Path, what: &str, producer: &str) -> Result<()> {
    if is_complete(dir) {
        Ok(())
    } else {
        Err(Error::Config(format!("{what} not found at {}; run `{producer}` first", dir.display())))
    }
}

/// The base graph for a seed: generated from the block model or loaded.
pub fn base_graph(cfg: &ExperimentConfig, seed: u64) -> Result<Graph<f64>> {
    match cfg.dataset_dir() {
        None => Ok(generate_sbm(&cfg.sbm(), derive_seed(seed, stream::GRAPH))?),
        Some(dir) => Ok(load_graph(&dir)?),
    }
}

/// Pseudo-label training for source `i`.
pub fn pretrain_source(cfg: &ExperimentConfig, g: &Graph<f64>, i: usize, seed: u64) -> Result<PseudoLabelResult<f64>> {
    let k = condensed_size(cfg.compression_ratio, g.num_nodes());
    if k > g.num_nodes() {
        return Err(Error::Config(format!("K = {k} exceeds the {} nodes of source {i}", g.num_nodes())));
    }
    let s = derive_seed(seed, stream::PRETRAIN + i as u64);
    train_pseudo_labels(g, &cfg.pseudo(k, s))
}

pub fn condense_source(
    cfg: &ExperimentConfig,
    g: &Graph<f64>,
    pl: &PseudoLabelResult<f64>,
    i: usize,
) -> Result<CondensedGraph<f64>> {
    let init = init_condensed(g, &pl.q_full, pl.bank.k())?;
    condense(init, &pl.encoder, &pl.bank, cfg.condense_steps, cfg.condense_lr, format!("source-{i}"))
}

pub fn build_backbone(cfg: &ExperimentConfig, sets: &[CondensedGraph<f64>], seed: u64) -> Result<Backbone<f64>> {
    let s = derive_seed(seed, stream::BACKBONE);
    reconstruct_backbone(sets, &cfg.encoder(s), cfg.backbone_epochs, cfg.backbone_lr, s)
}

/// Labeled nodes not in `train`.
pub fn held_out(labels: &[Option<usize>], train: &[usize]) -> Vec<usize> {
    let mut in_train = vec![false; labels.len()];
    for &i in train {
        in_train[i] = true;
    }
    (0..labels.len()).filter(|&i| labels[i].is_some() && !in_train[i]).collect()
}

fn num_classes(g: &Graph<f64>) -> Result<usize> {
    g.num_classes().ok_or_else(|| Error::Config("node classification needs a labeled graph".into()))
}

#[derive(Debug, PartialEq, Serialize, Deserialize)]
struct RunRecord {
    seed: u64,
    config: ExperimentConfig,
}

/// Opens `out` for a run with this config and seed: a fresh directory is
/// stamped with `run.json`; an existing one must carry the same stamp.
pub fn open_run(cfg: &ExperimentConfig, out: &Path, seed: u64) -> Result<RunLayout> {
    cfg.validate()?;
    let layout = RunLayout::new(out);
    fs::create_dir_all(layout.root()).map_err(|e| Error::io(layout.root(), e))?;
    let record = RunRecord { seed, config: cfg.clone() };
    let path = layout.run_record_path();
    if path.is_file() {
        let existing: RunRecord = read_json(&path)?;
        if existing != record {
            return Err(Error::Config(format!(
                "{} holds artifacts from a different configuration or seed; use a new --out directory",
                layout.root().display()
            )));
        }
        Ok(layout)
    } else {
        write_json(&path, &record)?;
        Ok(layout)
    }
}

pub fn stage_graph(cfg: &ExperimentConfig, layout: &RunLayout, seed: u64) -> Result<()> {
    let dir = layout.graph_dir();
    if is_complete(&dir) {
        return Ok(());
    }
    let g = base_graph(cfg, seed)?;
    save_graph(&g, &dir)?;
    let working = match cfg.task {
        Task::Node => g,
        Task::Link => {
            let split = split_edges(&g, derive_seed(seed, stream::SPLIT))?;
            write_json(&layout.split_path(), &SplitFile::from(&split))?;
            g.with_edges(split.train.clone())?
        }
    };
    let sources = partition_sources(&working, cfg.num_sources, derive_seed(seed, stream::PARTITION))?;
    for (i, src) in sources.iter().enumerate() {
        save_graph(&src.graph, &layout.source_graph_dir(i))?;
        write_json(&layout.source_dir(i).join("original_ids.json"), &src.original_ids)?;
    }
    mark_complete(&dir)
}

pub fn stage_pretrain(cfg: &ExperimentConfig, layout: &RunLayout, seed: u64) -> Result<()> {
    require(&layout.graph_dir(), "graph", "gen-sbm")?;
    for i in 0..cfg.num_sources {
        let dir = layout.pretrain_dir(i);
        if is_complete(&dir) {
            continue;
        }
        let g: Graph<f64> = load_graph(&layout.source_graph_dir(i))?;
        let pl = pretrain_source(cfg, &g, i, seed)?;
        log::info!("source {i}: pseudo-labels trained, prototype sizes {:?}", pl.q_full.counts());
        pl.save(&dir)?;
        mark_complete(&dir)?;
    }
    Ok(())
}

pub fn stage_condense(cfg: &ExperimentConfig, layout: &RunLayout, _seed: u64) -> Result<()> {
    for i in 0..cfg.num_sources {
        let dir = layout.condensed_dir(i);
        if is_complete(&dir) {
            continue;
        }
        require(&layout.pretrain_dir(i), "pseudo-label artifacts", "pretrain")?;
        let g: Graph<f64> = load_graph(&layout.source_graph_dir(i))?;
        let pl = PseudoLabelResult::<f64>::load(&layout.pretrain_dir(i))?;
        let c = condense_source(cfg, &g, &pl, i)?;
        log::info!("source {i}: condensed to {} nodes, loss {:.6}", c.k(), c.final_loss);
        c.save(&dir)?;
        mark_complete(&dir)?;
    }
    Ok(())
}

#[derive(Debug, Serialize, Deserialize)]
struct BackboneTrace {
    initial_loss: f64,
    final_loss: f64,
    history: Vec<f64>,
}

pub fn stage_backbone(cfg: &ExperimentConfig, layout: &RunLayout, seed: u64) -> Result<()> {
    let dir = layout.backbone_dir();
    if is_complete(&dir) {
        return Ok(());
    }
    let mut sets = Vec::with_capacity(cfg.num_sources);
    for i in 0..cfg.num_sources {
        require(&layout.condensed_dir(i), "condensed graph", "condense")?;
        sets.push(CondensedGraph::<f64>::load(&layout.condensed_dir(i))?);
    }
    let bb = build_backbone(cfg, &sets, seed)?;
    log::info!("backbone loss {:.6} -> {:.6}", bb.initial_loss, bb.final_loss);
    bb.params.save(&dir)?;
    let trace = BackboneTrace { initial_loss: bb.initial_loss, final_loss: bb.final_loss, history: bb.history };
    write_json(&dir.join("trace.json"), &trace)?;
    mark_complete(&dir)
}

#[derive(Debug, Serialize, Deserialize)]
struct SplitFile {
    train: Vec<(usize, usize)>,
    val: Vec<(usize, usize)>,
    test: Vec<(usize, usize)>,
    train_neg: Vec<(usize, usize)>,
    val_neg: Vec<(usize, usize)>,
    test_neg: Vec<(usize, usize)>,
}

impl From<&EdgeSplit> for SplitFile {
    fn from(s: &EdgeSplit) -> Self {
        Self {
            train: s.train.clone(),
            val: s.val.clone(),
            test: s.test.clone(),
            train_neg: s.train_neg.clone(),
            val_neg: s.val_neg.clone(),
            test_neg: s.test_neg.clone(),
        }
    }
}

impl From<SplitFile> for EdgeSplit {
    fn from(s: SplitFile) -> Self {
        EdgeSplit {
            train: s.train,
            val: s.val,
            test: s.test,
            train_neg: s.train_neg,
            val_neg: s.val_neg,
            test_neg: s.test_neg,
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct HeadFile {
    task: Task,
    train_idx: Vec<usize>,
    head: HeadParams<f64>,
}

pub fn stage_finetune(cfg: &ExperimentConfig, layout: &RunLayout, seed: u64) -> Result<()> {
    let dir = layout.head_dir();
    if is_complete(&dir) {
        return Ok(());
    }
    require(&layout.backbone_dir(), "backbone", "backbone")?;
    let backbone = EncoderParams::<f64>::load(&layout.backbone_dir())?;
    let g: Graph<f64> = load_graph(&layout.graph_dir())?;
    let head_seed = derive_seed(seed, stream::HEAD);
    let file = match cfg.task {
        Task::Node => {
            let c = num_classes(&g)?;
            let train_idx = sample_few_shot(g.labels(), c, cfg.few_shot, derive_seed(seed, stream::FEW_SHOT))?;
            let head = finetune_node_head(&backbone, &g, &train_idx, cfg.finetune_epochs, cfg.finetune_lr, head_seed)?;
            HeadFile { task: Task::Node, train_idx, head }
        }
        Task::Link => {
            let split: EdgeSplit = read_json::<SplitFile>(&layout.split_path())?.into();
            let head = finetune_link_head(&backbone, &g, &split, cfg.finetune_epochs, cfg.finetune_lr, head_seed)?;
            HeadFile { task: Task::Link, train_idx: Vec::new(), head }
        }
    };
    write_json(&dir.join("head.json"), &file)?;
    mark_complete(&dir)
}

pub fn stage_eval(cfg: &ExperimentConfig, layout: &RunLayout, seed: u64) -> Result<Vec<EvalReport>> {
    require(&layout.head_dir(), "fine-tuned head", "finetune")?;
    let backbone = EncoderParams::<f64>::load(&layout.backbone_dir())?;
    let g: Graph<f64> = load_graph(&layout.graph_dir())?;
    let file: HeadFile = read_json(&layout.head_dir().join("head.json"))?;
    let mut report = match file.task {
        Task::Node => evaluate_node(&backbone, &file.head, &g, &held_out(g.labels(), &file.train_idx))?,
        Task::Link => {
            let split: EdgeSplit = read_json::<SplitFile>(&layout.split_path())?.into();
            evaluate_link(&backbone, &file.head, &g, &split)?
        }
    };
    report.dataset = cfg.dataset_name();
    report.sources = cfg.num_sources;
    report.seed = seed;
    report.config = serde_json::to_value(cfg).expect("config serializes");
    let reports = vec![report];
    let jsonl: String = reports.iter().map(|r| r.to_json_line() + "\n").collect();
    let p = layout.results_path();
    write_atomic(&p, jsonl.as_bytes()).map_err(|e| Error::io(&p, e))?;
    let mut csv = String::from(EvalReport::CSV_HEADER);
    csv.push('\n');
    for r in &reports {
        csv.push_str(&r.to_csv_row());
        csv.push('\n');
    }
    let p = layout.results_csv_path();
    write_atomic(&p, csv.as_bytes()).map_err(|e| Error::io(&p, e))?;
    Ok(reports)
}

#[derive(Debug, Serialize, Deserialize)]
pub struct StageError {
    pub stage: String,
    pub message: String,
}

/// Runs `f` as pipeline stage `name`; a failure is written to
/// `error.json` and returned as [`Error::Stage`].
pub fn run_stage<T>(name: &str, layout: &RunLayout, f: impl FnOnce() -> Result<T>) -> Result<T> {
    log::info!("stage {name}");
    f().map_err(|e| {
        let record = StageError { stage: name.to_string(), message: e.to_string() };
        if let Err(w) = write_json(&layout.error_path(), &record) {
            log::error!("could not write error record: {w}");
        }
        Error::Stage { stage: name.to_string(), source: Box::new(e) }
    })
}

/// Full pipeline for one seed. Stages whose artifacts are already complete
/// in `out` are loaded rather than recomputed.
pub fn run_pipeline(cfg: &ExperimentConfig, out: &Path, seed: u64) -> Result<Vec<EvalReport>> {
    let layout = open_run(cfg, out, seed)?;
    let _ = fs::remove_file(layout.error_path());
    run_stage("graph", &layout, || stage_graph(cfg, &layout, seed))?;
    run_stage("pretrain", &layout, || stage_pretrain(cfg, &layout, seed))?;
    run_stage("condense", &layout, || stage_condense(cfg, &layout, seed))?;
    run_stage("backbone", &layout, || stage_backbone(cfg, &layout, seed))?;
    run_stage("finetune", &layout, || stage_finetune(cfg, &layout, seed))?;
    run_stage("eval", &layout, || stage_eval(cfg, &layout, seed))
}
