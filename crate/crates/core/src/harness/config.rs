use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::downstream::Task;
use crate::encoder::EncoderConfig;
use crate::error::{Error, Result};
use crate::graph::SbmConfig;
use crate::pseudo::{PseudoLabelConfig, SinkhornConfig};
use crate::theory::{NoiseModel, StationarityConfig, TheoremParams};

/// Flat `key = value` experiment configuration. Unknown keys are errors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// `"sbm"` to generate a block-model graph, otherwise a graph directory.
    pub dataset: String,
    pub sbm_blocks: usize,
    pub sbm_nodes_per_block: usize,
    pub sbm_p_in: f64,
    pub sbm_p_out: f64,
    pub sbm_feature_dim: usize,
    pub sbm_center_separation: f64,
    pub sbm_feature_noise: f64,

    /// Condensed nodes per source as a fraction of its node count.
    pub compression_ratio: f64,
    pub num_sources: usize,
    pub seeds: Vec<u64>,
    pub noise_rates: Vec<f64>,
    /// Clean labeled nodes per class for fine-tuning.
    pub few_shot: usize,
    pub task: Task,

    pub hidden_dim: usize,
    pub embed_dim: usize,

    pub pretrain_epochs: usize,
    pub lr_encoder: f64,
    pub lr_bank: f64,
    pub tau: f64,
    pub sinkhorn_epsilon: f64,
    pub sinkhorn_iters: usize,
    pub sinkhorn_batch: Option<usize>,
    pub edge_drop: f64,
    pub feature_mask: f64,

    pub condense_steps: usize,
    pub condense_lr: f64,
    pub backbone_epochs: usize,
    pub backbone_lr: f64,
    pub finetune_epochs: usize,
    pub finetune_lr: f64,

    /// Synthetic rows per class for the supervised comparator.
    pub baseline_per_class: usize,
    pub workers: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let sbm = SbmConfig::default();
        Self {
            dataset: "sbm".into(),
            sbm_blocks: sbm.blocks,
            sbm_nodes_per_block: sbm.nodes_per_block,
            sbm_p_in: sbm.p_in,
            sbm_p_out: sbm.p_out,
            sbm_feature_dim: sbm.feature_dim,
            sbm_center_separation: sbm.center_separation,
            sbm_feature_noise: sbm.feature_noise,
            compression_ratio: 0.01,
            num_sources: 1,
            seeds: vec![0, 1, 2, 3, 4],
            noise_rates: vec![0.0, 0.3, 0.5, 0.7, 0.9],
            few_shot: 3,
            task: Task::Node,
            hidden_dim: 128,
            embed_dim: 64,
            pretrain_epochs: 50,
            lr_encoder: 0.01,
            lr_bank: 0.05,
            tau: 0.1,
            sinkhorn_epsilon: 0.05,
            sinkhorn_iters: 100,
            sinkhorn_batch: None,
            edge_drop: 0.2,
            feature_mask: 0.2,
            condense_steps: 300,
            condense_lr: 0.1,
            backbone_epochs: 300,
            backbone_lr: 0.1,
            finetune_epochs: 200,
            finetune_lr: 0.5,
            baseline_per_class: 1,
            workers: 1,
        }
    }
}

fn with_path(path: &Path, e: Error) -> Error {
    match e {
        Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
        other => other,
    }
}

/// `max(1, round_half_up(r·n))`.
pub fn condensed_size(ratio: f64, n: usize) -> usize {
    ((ratio * n as f64 + 0.5).floor() as usize).max(1)
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text).map_err(|e| with_path(path, e))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn is_sbm(&self) -> bool {
        self.dataset == "sbm"
    }

    pub fn dataset_dir(&self) -> Option<PathBuf> {
        (!self.is_sbm()).then(|| PathBuf::from(&self.dataset))
    }

    /// Short dataset name for reports.
    pub fn dataset_name(&self) -> String {
        match self.dataset_dir() {
            None => "sbm".into(),
            Some(p) => p.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_else(|| self.dataset.clone()),
        }
    }

    pub fn sbm(&self) -> SbmConfig {
        SbmConfig {
            blocks: self.sbm_blocks,
            nodes_per_block: self.sbm_nodes_per_block,
            p_in: self.sbm_p_in,
            p_out: self.sbm_p_out,
            feature_dim: self.sbm_feature_dim,
            center_separation: self.sbm_center_separation,
            feature_noise: self.sbm_feature_noise,
        }
    }

    pub fn encoder(&self, seed: u64) -> EncoderConfig {
        EncoderConfig { hidden_dim: self.hidden_dim, embed_dim: self.embed_dim, seed }
    }

    pub fn pseudo(&self, k: usize, seed: u64) -> PseudoLabelConfig {
        PseudoLabelConfig {
            k,
            epochs: self.pretrain_epochs,
            lr_encoder: self.lr_encoder,
            lr_bank: self.lr_bank,
            tau: self.tau,
            sinkhorn: SinkhornConfig {
                epsilon: self.sinkhorn_epsilon,
                iters: self.sinkhorn_iters,
                batch_size: self.sinkhorn_batch,
            },
            edge_drop: self.edge_drop,
            feature_mask: self.feature_mask,
            encoder: self.encoder(seed),
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if !(self.compression_ratio > 0.0 && self.compression_ratio <= 1.0) {
            return bad("compression_ratio must lie in (0, 1]");
        }
        if self.num_sources == 0 {
            return bad("num_sources must be >= 1");
        }
        if self.seeds.is_empty() {
            return bad("seeds must not be empty");
        }
        if self.noise_rates.is_empty() {
            return bad("noise_rates must not be empty");
        }
        if self.noise_rates.iter().any(|r| !(0.0..=1.0).contains(r)) {
            return bad("noise rates must lie in [0, 1]");
        }
        if self.few_shot == 0 || self.baseline_per_class == 0 {
            return bad("few_shot and baseline_per_class must be >= 1");
        }
        if self.hidden_dim == 0 || self.embed_dim == 0 {
            return bad("hidden_dim and embed_dim must be >= 1");
        }
        if !(self.tau > 0.0) || !(self.sinkhorn_epsilon > 0.0) || self.sinkhorn_iters == 0 {
            return bad("tau and sinkhorn_epsilon must be positive, sinkhorn_iters >= 1");
        }
        if !(0.0..=1.0).contains(&self.edge_drop) || !(0.0..=1.0).contains(&self.feature_mask) {
            return bad("edge_drop and feature_mask must lie in [0, 1]");
        }
        for (name, lr) in [
            ("lr_encoder", self.lr_encoder),
            ("lr_bank", self.lr_bank),
            ("condense_lr", self.condense_lr),
            ("backbone_lr", self.backbone_lr),
            ("finetune_lr", self.finetune_lr),
        ] {
            if !(lr > 0.0 && lr.is_finite()) {
                return Err(Error::Config(format!("{name} must be positive and finite, got {lr}")));
            }
        }
        if self.workers == 0 {
            return bad("workers must be >= 1");
        }
        if self.is_sbm() {
            let sbm = self.sbm();
            sbm.validate()?;
            let per_source = sbm.num_nodes() / self.num_sources;
            if per_source == 0 {
                return bad("more sources than nodes");
            }
            let k = condensed_size(self.compression_ratio, per_source);
            if k > per_source {
                return Err(Error::Config(format!("K = {k} exceeds the {per_source} nodes of a source")));
            }
        }
        Ok(())
    }
}

/// Settings for `validate-theory`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TheoryConfig {
    pub d: usize,
    pub k: usize,
    pub sigma: f64,
    pub min_sep: f64,
    pub delta: f64,
    pub beta: f64,
    pub trials: usize,
    pub base_seed: u64,
    pub noise: NoiseModel,
    /// Sampling-noise multiplier for the negative control.
    pub control_scale: f64,
    pub stationarity_trials: usize,
    pub stationarity_d: usize,
    pub stationarity_k: usize,
}

impl Default for TheoryConfig {
    fn default() -> Self {
        Self {
            d: 2,
            k: 4,
            sigma: 1.0,
            min_sep: 6.0,
            delta: 0.05,
            beta: 4.0,
            trials: 500,
            base_seed: 0,
            noise: NoiseModel::Gaussian,
            control_scale: 10.0,
            stationarity_trials: 20,
            stationarity_d: 5,
            stationarity_k: 3,
        }
    }
}

impl TheoryConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text).map_err(|e| with_path(path, e))
    }

    pub fn params(&self) -> Result<TheoremParams> {
        let mut p = TheoremParams::regular(self.d, self.k, self.sigma, self.min_sep, self.delta, self.beta)?;
        p.noise = self.noise;
        Ok(p)
    }

    pub fn stationarity(&self) -> StationarityConfig {
        StationarityConfig {
            trials: self.stationarity_trials,
            d: self.stationarity_d,
            k: self.stationarity_k,
            ..StationarityConfig::default()
        }
    }
}
