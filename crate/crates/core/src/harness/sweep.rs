use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::condense::{reconstruct_backbone, supervised_baseline_condense, CondensedGraph};
use crate::downstream::{node_accuracy, sample_few_shot, train_node_head, Task};
use crate::encoder::encode;
use crate::error::{Error, Result};
use crate::fsutil::write_atomic;
use crate::graph::{inject_label_noise, normalize_adjacency, partition_sources, Graph, SourceGraph};
use crate::pseudo::PseudoLabelResult;
use crate::tensor::Matrix;

use super::config::ExperimentConfig;
use super::pipeline::{base_graph, build_backbone, condense_source, held_out, pretrain_source, write_json};
use super::{derive_seed, stream};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    /// Label-free condensation.
    Plgc,
    /// Supervised class-mean matching on noisy labels.
    Baseline,
}

impl Method {
    pub const ALL: [Method; 2] = [Method::Plgc, Method::Baseline];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::Plgc => "plgc",
            Method::Baseline => "baseline",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepCell {
    pub noise_rate: f64,
    pub method: Method,
    pub seed: u64,
    pub accuracy: Option<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSummary {
    pub noise_rate: f64,
    pub method: Method,
    pub mean: f64,
    /// Sample standard deviation over seeds (0 for a single seed).
    pub std: f64,
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub dataset: String,
    pub sources: usize,
    pub noise_rates: Vec<f64>,
    pub seeds: Vec<u64>,
    pub cells: Vec<SweepCell>,
    pub summary: Vec<SweepSummary>,
}

impl SweepReport {
    pub fn summary_for(&self, method: Method, noise_rate: f64) -> Option<&SweepSummary> {
        self.summary.iter().find(|s| s.method == method && s.noise_rate == noise_rate)
    }

    pub fn failed_cells(&self) -> usize {
        self.cells.iter().filter(|c| c.accuracy.is_none()).count()
    }

    /// One row per cell plus `accuracy_mean` / `accuracy_std` rows per
    /// (method, noise rate) with seed `all`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("dataset,task,method,noise_rate,sources,seed,metric,value,status\n");
        for c in &self.cells {
            let (value, status) = match (&c.accuracy, &c.error) {
                (Some(v), _) => (v.to_string(), "ok"),
                (None, _) => (String::new(), "failed"),
            };
            let _ = writeln!(
                out,
                "{},node,{},{},{},{},accuracy,{},{}",
                self.dataset,
                c.method.as_str(),
                c.noise_rate,
                self.sources,
                c.seed,
                value,
                status
            );
        }
        for s in &self.summary {
            for (metric, v) in [("accuracy_mean", s.mean), ("accuracy_std", s.std)] {
                let _ = writeln!(
                    out,
                    "{},node,{},{},{},all,{metric},{v},ok",
                    self.dataset,
                    s.method.as_str(),
                    s.noise_rate,
                    self.sources
                );
            }
        }
        out
    }
}

fn summarize(noise_rates: &[f64], cells: &[SweepCell]) -> Vec<SweepSummary> {
    let mut out = Vec::new();
    for method in Method::ALL {
        for &rate in noise_rates {
            let vals: Vec<f64> = cells
                .iter()
                .filter(|c| c.method == method && c.noise_rate == rate)
                .filter_map(|c| c.accuracy)
                .collect();
            if vals.is_empty() {
                continue;
            }
            let n = vals.len();
            let mean = vals.iter().sum::<f64>() / n as f64;
            let std = if n > 1 {
                (vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64).sqrt()
            } else {
                0.0
            };
            out.push(SweepSummary { noise_rate: rate, method, mean, std, n });
        }
    }
    out
}

/// Per-seed state shared by every noise level: the graph, its sources,
/// the pseudo-label encoders and the label-free backbone's embeddings.
struct SeedState {
    graph: Graph<f64>,
    sources: Vec<SourceGraph<f64>>,
    pretrained: Vec<PseudoLabelResult<f64>>,
    plgc_embeddings: Matrix<f64>,
}

fn prepare_seed(cfg: &ExperimentConfig, seed: u64) -> Result<SeedState> {
    let graph = base_graph(cfg, seed)?;
    let sources = partition_sources(&graph, cfg.num_sources, derive_seed(seed, stream::PARTITION))?;
    let mut pretrained = Vec::with_capacity(sources.len());
    let mut sets = Vec::with_capacity(sources.len());
    for (i, src) in sources.iter().enumerate() {
        let pl = pretrain_source(cfg, &src.graph, i, seed)?;
        sets.push(condense_source(cfg, &src.graph, &pl, i)?);
        pretrained.push(pl);
    }
    let backbone = build_backbone(cfg, &sets, seed)?;
    let plgc_embeddings = encode(&backbone.params, &normalize_adjacency(&graph), graph.features())?;
    Ok(SeedState { graph, sources, pretrained, plgc_embeddings })
}

/// Noisy labels (per source, mapped back to graph ids) for one noise level.
fn noisy_labels(cfg: &ExperimentConfig, st: &SeedState, c: usize, level: usize, rate: f64, seed: u64) -> Result<Vec<Vec<Option<usize>>>> {
    st.sources
        .iter()
        .enumerate()
        .map(|(i, src)| {
            let s = derive_seed(seed, stream::NOISE.wrapping_mul(1 << 20) + (level as u64) * 1024 + i as u64);
            Ok(inject_label_noise(src.graph.labels(), rate, c, s)?)
        })
        .collect::<Result<_>>()
        .map_err(|e: Error| {
            Error::Config(format!("label noise {rate} on {} sources: {e}", cfg.num_sources))
        })
}

fn baseline_embeddings(
    cfg: &ExperimentConfig,
    st: &SeedState,
    noisy: &[Vec<Option<usize>>],
    seed: u64,
) -> Result<Matrix<f64>> {
    let mut sets: Vec<CondensedGraph<f64>> = Vec::with_capacity(st.sources.len());
    for (i, (src, labels)) in st.sources.iter().zip(noisy).enumerate() {
        let lc = supervised_baseline_condense(
            &src.graph,
            labels,
            &st.pretrained[i].encoder,
            cfg.baseline_per_class,
            cfg.condense_steps,
            cfg.condense_lr,
        )?;
        sets.push(lc.as_condensed(format!("baseline-{i}"))?);
    }
    let s = derive_seed(seed, stream::BASELINE_BACKBONE);
    let bb = reconstruct_backbone(&sets, &cfg.encoder(s), cfg.backbone_epochs, cfg.backbone_lr, s)?;
    encode(&bb.params, &normalize_adjacency(&st.graph), st.graph.features())
}

fn run_level(cfg: &ExperimentConfig, st: &SeedState, level: usize, rate: f64, seed: u64) -> Result<[Result<f64>; 2]> {
    let g = &st.graph;
    let c = g.num_classes().ok_or_else(|| Error::Config("the noise sweep needs a labeled graph".into()))?;
    let noisy = noisy_labels(cfg, st, c, level, rate, seed)?;
    // clean few-shot pool: nodes whose label survived corruption
    let mut clean: Vec<Option<usize>> = vec![None; g.num_nodes()];
    for (src, labels) in st.sources.iter().zip(&noisy) {
        for (local, &orig) in src.original_ids.iter().enumerate() {
            if labels[local] == g.labels()[orig] {
                clean[orig] = g.labels()[orig];
            }
        }
    }
    let train = sample_few_shot(&clean, c, cfg.few_shot, derive_seed(seed, stream::FEW_SHOT + level as u64))?;
    let test = held_out(g.labels(), &train);
    let head_seed = derive_seed(seed, stream::HEAD);
    let eval = |z: &Matrix<f64>| -> Result<f64> {
        let head = train_node_head(z, g.labels(), c, &train, cfg.finetune_epochs, cfg.finetune_lr, head_seed)?;
        node_accuracy(z, &head, g.labels(), &test)
    };
    let plgc = eval(&st.plgc_embeddings);
    let baseline = baseline_embeddings(cfg, st, &noisy, seed).and_then(|z| eval(&z));
    Ok([plgc, baseline])
}

/// Accuracy of both methods for every (noise rate, seed). Seeds run in
/// parallel on up to `cfg.workers` threads; a failing cell is recorded
/// and the sweep continues.
pub fn run_noise_sweep(cfg: &ExperimentConfig) -> Result<SweepReport> {
    cfg.validate()?;
    if cfg.task != Task::Node {
        return Err(Error::Config("the noise sweep evaluates node classification; set task = \"node\"".into()));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.workers)
        .build()
        .map_err(|e| Error::Config(format!("worker pool: {e}")))?;
    let per_seed: Vec<Vec<SweepCell>> = pool.install(|| {
        cfg.seeds
            .par_iter()
            .map(|&seed| {
                let failed_all = |msg: String| -> Vec<SweepCell> {
                    cfg.noise_rates
                        .iter()
                        .flat_map(|&r| {
                            let msg = msg.clone();
                            Method::ALL.into_iter().map(move |m| SweepCell {
                                noise_rate: r,
                                method: m,
                                seed,
                                accuracy: None,
                                error: Some(msg.clone()),
                            })
                        })
                        .collect()
                };
                let st = match prepare_seed(cfg, seed) {
                    Ok(st) => st,
                    Err(e) => {
                        log::error!("seed {seed}: {e}");
                        return failed_all(e.to_string());
                    }
                };
                let levels: Vec<Vec<SweepCell>> = cfg
                    .noise_rates
                    .par_iter()
                    .enumerate()
                    .map(|(level, &rate)| {
                        let results = match run_level(cfg, &st, level, rate, seed) {
                            Ok(r) => r,
                            Err(e) => [Err(Error::Training(e.to_string())), Err(e)],
                        };
                        Method::ALL
                            .into_iter()
                            .zip(results)
                            .map(|(method, r)| {
                                if let Err(e) = &r {
                                    log::error!("seed {seed}, noise {rate}, {}: {e}", method.as_str());
                                }
                                SweepCell {
                                    noise_rate: rate,
                                    method,
                                    seed,
                                    accuracy: r.as_ref().ok().copied(),
                                    error: r.err().map(|e| e.to_string()),
                                }
                            })
                            .collect()
                    })
                    .collect();
                levels.into_iter().flatten().collect()
            })
            .collect()
    });
    let cells: Vec<SweepCell> = per_seed.into_iter().flatten().collect();
    let summary = summarize(&cfg.noise_rates, &cells);
    Ok(SweepReport {
        dataset: cfg.dataset_name(),
        sources: cfg.num_sources,
        noise_rates: cfg.noise_rates.clone(),
        seeds: cfg.seeds.clone(),
        cells,
        summary,
    })
}

impl SweepReport {
    /// Writes `sweep.csv`, `sweep.svg` and `sweep.json` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let p = dir.join("sweep.csv");
        write_atomic(&p, self.to_csv().as_bytes()).map_err(|e| Error::io(&p, e))?;
        let p = dir.join("sweep.svg");
        write_atomic(&p, render_svg(self).as_bytes()).map_err(|e| Error::io(&p, e))?;
        write_json(&dir.join("sweep.json"), self)
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Accuracy against noise rate, one line per method with a mean ± std
/// band. Text labels carry only values that also appear in the CSV: the
/// noise-rate ticks and the lowest and highest plotted means.
pub fn render_svg(report: &SweepReport) -> String {
    const W: f64 = 640.0;
    const H: f64 = 400.0;
    const LEFT: f64 = 80.0;
    const RIGHT: f64 = 150.0;
    const TOP: f64 = 40.0;
    const BOTTOM: f64 = 60.0;
    let colors = |m: Method| match m {
        Method::Plgc => "#1f77b4",
        Method::Baseline => "#d62728",
    };

    let rates = &report.noise_rates;
    let (x_lo, x_hi) = rates.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &r| (a.min(r), b.max(r)));
    let x_of = |r: f64| {
        if x_hi > x_lo {
            LEFT + (r - x_lo) / (x_hi - x_lo) * (W - LEFT - RIGHT)
        } else {
            LEFT + (W - LEFT - RIGHT) / 2.0
        }
    };
    let mut y_lo = f64::INFINITY;
    let mut y_hi = f64::NEG_INFINITY;
    for s in &report.summary {
        y_lo = y_lo.min(s.mean - s.std);
        y_hi = y_hi.max(s.mean + s.std);
    }
    if !y_lo.is_finite() {
        (y_lo, y_hi) = (0.0, 1.0);
    }
    let pad = ((y_hi - y_lo) * 0.1).max(0.02);
    let (y_lo, y_hi) = (y_lo - pad, y_hi + pad);
    let y_of = |v: f64| TOP + (y_hi - v) / (y_hi - y_lo) * (H - TOP - BOTTOM);

    let mut svg = String::new();
    let _ = writeln!(svg, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}">"#);
    let _ = writeln!(svg, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(
        svg,
        r#"<text x="{:.2}" y="24" font-size="16" text-anchor="middle" font-family="sans-serif">accuracy vs label noise</text>"#,
        (LEFT + W - RIGHT) / 2.0
    );
    let (x0, x1, y0, y1) = (LEFT, W - RIGHT, TOP, H - BOTTOM);
    let _ = writeln!(svg, r#"<line x1="{x0}" y1="{y1}" x2="{x1}" y2="{y1}" stroke="black"/>"#);
    let _ = writeln!(svg, r#"<line x1="{x0}" y1="{y0}" x2="{x0}" y2="{y1}" stroke="black"/>"#);
    for &r in rates {
        let x = x_of(r);
        let _ = writeln!(svg, r#"<line x1="{x:.2}" y1="{y1}" x2="{x:.2}" y2="{:.2}" stroke="black"/>"#, y1 + 5.0);
        let _ = writeln!(
            svg,
            r#"<text x="{x:.2}" y="{:.2}" font-size="12" text-anchor="middle" font-family="sans-serif">{r}</text>"#,
            y1 + 20.0
        );
    }
    let _ = writeln!(
        svg,
        r#"<text x="{:.2}" y="{:.2}" font-size="13" text-anchor="middle" font-family="sans-serif">noise rate</text>"#,
        (x0 + x1) / 2.0,
        H - 15.0
    );
    let _ = writeln!(
        svg,
        r#"<text x="20" y="{:.2}" font-size="13" text-anchor="middle" font-family="sans-serif" transform="rotate(-90 20 {:.2})">accuracy</text>"#,
        (y0 + y1) / 2.0,
        (y0 + y1) / 2.0
    );
    let means: Vec<f64> = report.summary.iter().map(|s| s.mean).collect();
    if !means.is_empty() {
        let lo = means.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = means.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut ticks = vec![lo];
        if hi != lo {
            ticks.push(hi);
        }
        for v in ticks {
            let y = y_of(v);
            let _ = writeln!(svg, r#"<line x1="{:.2}" y1="{y:.2}" x2="{x0}" y2="{y:.2}" stroke="black"/>"#, x0 - 5.0);
            let _ = writeln!(
                svg,
                r#"<text x="{:.2}" y="{:.2}" font-size="11" text-anchor="end" font-family="sans-serif">{v}</text>"#,
                x0 - 8.0,
                y + 4.0
            );
        }
    }

    for (row, method) in Method::ALL.into_iter().enumerate() {
        let pts: Vec<&SweepSummary> = rates.iter().filter_map(|&r| report.summary_for(method, r)).collect();
        if pts.is_empty() {
            continue;
        }
        let color = colors(method);
        let upper: Vec<String> = pts.iter().map(|s| format!("{:.2},{:.2}", x_of(s.noise_rate), y_of(s.mean + s.std))).collect();
        let lower: Vec<String> =
            pts.iter().rev().map(|s| format!("{:.2},{:.2}", x_of(s.noise_rate), y_of(s.mean - s.std))).collect();
        let _ = writeln!(
            svg,
            r#"<polygon points="{} {}" fill="{color}" fill-opacity="0.2" stroke="none"/>"#,
            upper.join(" "),
            lower.join(" ")
        );
        let line: Vec<String> = pts.iter().map(|s| format!("{:.2},{:.2}", x_of(s.noise_rate), y_of(s.mean))).collect();
        let _ = writeln!(svg, r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="2"/>"#, line.join(" "));
        for s in &pts {
            let _ = writeln!(
                svg,
                r#"<circle cx="{:.2}" cy="{:.2}" r="3" fill="{color}"/>"#,
                x_of(s.noise_rate),
                y_of(s.mean)
            );
        }
        let ly = TOP + 20.0 + row as f64 * 20.0;
        let lx = W - RIGHT + 20.0;
        let _ = writeln!(svg, r#"<line x1="{lx}" y1="{ly}" x2="{:.2}" y2="{ly}" stroke="{color}" stroke-width="2"/>"#, lx + 20.0);
        let _ = writeln!(
            svg,
            r#"<text x="{:.2}" y="{:.2}" font-size="12" font-family="sans-serif">{}</text>"#,
            lx + 26.0,
            ly + 4.0,
            escape(method.as_str())
        );
    }
    svg.push_str("</svg>\n");
    svg
}
