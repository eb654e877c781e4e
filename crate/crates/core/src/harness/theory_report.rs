use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fsutil::write_atomic;
use crate::theory::{validate_stationarity, validate_theorem, StationarityReport, TheoremReport};

use super::config::TheoryConfig;
use super::pipeline::write_json;

/// Summary of one theorem run without the per-trial outcomes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TheoremSummary {
    pub noise_scale: f64,
    pub trials: usize,
    pub samples_per_cluster: Vec<usize>,
    pub concentration_violation_rate: f64,
    pub violation_threshold: f64,
    pub interior_failures: usize,
    pub separation_failures: usize,
    pub separation_floor: f64,
    pub pass: bool,
}

impl From<&TheoremReport> for TheoremSummary {
    fn from(r: &TheoremReport) -> Self {
        Self {
            noise_scale: r.params.noise_scale,
            trials: r.trials,
            samples_per_cluster: r.params.samples.clone(),
            concentration_violation_rate: r.concentration_violation_rate,
            violation_threshold: r.violation_threshold,
            interior_failures: r.interior_failures,
            separation_failures: r.separation_failures,
            separation_floor: r.separation_floor,
            pass: r.pass,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TheoryReport {
    pub config: TheoryConfig,
    pub theorem: TheoremSummary,
    /// Same trials with the sampling noise inflated by `control_scale` while
    /// the bounds keep the nominal sigma.
    pub control: TheoremSummary,
    /// The control detects the inflated noise when its violation rate
    /// exceeds delta.
    pub control_detected: bool,
    pub stationarity: StationarityReport,
    pub pass: bool,
}

fn deviations_csv(runs: &[(&str, &TheoremReport)]) -> String {
    let mut out = String::from("run,trial,seed,cluster,deviation,bound,holds,normalized_deviation\n");
    for (name, report) in runs {
        for (t, o) in report.outcomes.iter().enumerate() {
            for k in 0..o.deviations.len() {
                let _ = writeln!(
                    out,
                    "{name},{t},{},{k},{},{},{},{}",
                    o.seed, o.deviations[k], o.bounds[k], o.bound_holds[k], o.normalized_deviations[k]
                );
            }
        }
    }
    out
}

/// Runs the concentration check, its inflated-noise control and the
/// stationarity check, writing `theory_report.json` and
/// `theory_deviations.csv` under `out`.
pub fn run_theory_report(cfg: &TheoryConfig, out: &Path) -> Result<TheoryReport> {
    if !(cfg.control_scale > 1.0) {
        return Err(Error::Config(format!("control_scale must exceed 1, got {}", cfg.control_scale)));
    }
    let params = cfg.params()?;
    let theorem = validate_theorem(&params, cfg.trials, cfg.base_seed)?;
    let mut inflated = params.clone();
    inflated.noise_scale = cfg.control_scale;
    let control = validate_theorem(&inflated, cfg.trials, cfg.base_seed)?;
    let stationarity = validate_stationarity(&cfg.stationarity(), cfg.base_seed)?;
    let control_detected = control.concentration_violation_rate > cfg.delta;
    log::info!(
        "concentration violation rate {:.4} (threshold {:.4}), control {:.4}",
        theorem.concentration_violation_rate,
        theorem.violation_threshold,
        control.concentration_violation_rate
    );
    let report = TheoryReport {
        config: cfg.clone(),
        pass: theorem.pass && control_detected && stationarity.pass,
        theorem: (&theorem).into(),
        control: (&control).into(),
        control_detected,
        stationarity,
    };
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    write_json(&out.join("theory_report.json"), &report)?;
    let csv = deviations_csv(&[("theorem", &theorem), ("control", &control)]);
    let p = out.join("theory_deviations.csv");
    write_atomic(&p, csv.as_bytes()).map_err(|e| Error::io(&p, e))?;
    Ok(report)
}
