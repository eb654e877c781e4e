//! Experiment configuration, the persisted end-to-end pipeline, the
//! label-noise sweep and the theory report.

mod config;
mod pipeline;
mod sweep;
mod theory_report;

pub use config::{condensed_size, ExperimentConfig, TheoryConfig};
pub use pipeline::{
    base_graph, build_backbone, condense_source, held_out, open_run, pretrain_source, run_pipeline, run_stage,
    stage_backbone, stage_condense, stage_eval, stage_finetune, stage_graph, stage_pretrain, RunLayout, StageError,
};
pub use sweep::{render_svg, run_noise_sweep, Method, SweepCell, SweepReport, SweepSummary};
pub use theory_report::{run_theory_report, TheoremSummary, TheoryReport};

/// Independent seed streams derived from one base seed.
pub mod stream {
    pub const GRAPH: u64 = 1;
    pub const PARTITION: u64 = 2;
    pub const SPLIT: u64 = 3;
    pub const BACKBONE: u64 = 4;
    pub const FEW_SHOT: u64 = 5;
    pub const HEAD: u64 = 6;
    pub const NOISE: u64 = 7;
    pub const BASELINE_BACKBONE: u64 = 8;
    /// Offset by the source index.
    pub const PRETRAIN: u64 = 1000;
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Seed for stream `s` of base seed `base`.
pub fn derive_seed(base: u64, s: u64) -> u64 {
    splitmix64(base ^ splitmix64(s))
}
