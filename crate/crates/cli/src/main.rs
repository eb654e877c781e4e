use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use plgc::error::Result;
use plgc::harness::{self, ExperimentConfig, RunLayout, TheoryConfig};

#[derive(Parser, Debug)]
#[command(name = "plgc", version, about = "Label-free graph condensation pipeline")]
struct Cli {
    /// TOML config file. Defaults are used when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Output directory.
    #[arg(long, global = true, default_value = "plgc-out")]
    out: PathBuf,

    /// Run seed. Defaults to the first entry of `seeds` (or `base_seed` for
    /// validate-theory).
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Worker threads.
    #[arg(long, global = true)]
    workers: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug, Clone, Copy, PartialEq, Eq)]
enum Command {
    /// Generate (or load) the graph and split it into sources.
    GenSbm,
    /// Train pseudo-labels on every source.
    Pretrain,
    /// Condense every source against its prototypes.
    Condense,
    /// Reconstruct the backbone from the condensed graphs.
    Backbone,
    /// Fine-tune a task head on the backbone.
    Finetune,
    /// Evaluate and write results.jsonl / results.csv.
    Eval,
    /// All stages in order, resuming from completed ones.
    Pipeline,
    /// Accuracy against label-noise rate for PLGC and the supervised baseline.
    SweepNoise,
    /// Monte Carlo check of the concentration and stationarity results.
    ValidateTheory,
}

fn experiment_config(cli: &Cli) -> Result<ExperimentConfig> {
    let mut cfg = match &cli.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(w) = cli.workers {
        cfg.workers = w;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run_stage_command(cli: &Cli, cfg: &ExperimentConfig, seed: u64) -> Result<()> {
    let layout: RunLayout = harness::open_run(cfg, &cli.out, seed)?;
    let l = &layout;
    match cli.command {
        Command::GenSbm => harness::run_stage("graph", l, || harness::stage_graph(cfg, l, seed)),
        Command::Pretrain => harness::run_stage("pretrain", l, || harness::stage_pretrain(cfg, l, seed)),
        Command::Condense => harness::run_stage("condense", l, || harness::stage_condense(cfg, l, seed)),
        Command::Backbone => harness::run_stage("backbone", l, || harness::stage_backbone(cfg, l, seed)),
        Command::Finetune => harness::run_stage("finetune", l, || harness::stage_finetune(cfg, l, seed)),
        Command::Eval => {
            let reports = harness::run_stage("eval", l, || harness::stage_eval(cfg, l, seed))?;
            for r in reports {
                println!("{}", r.to_json_line());
            }
            Ok(())
        }
        _ => unreachable!("not a stage command"),
    }
}

fn run(cli: &Cli) -> Result<bool> {
    if let Some(w) = cli.workers {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(w.max(1)).build_global() {
            log::warn!("could not size the thread pool: {e}");
        }
    }
    match cli.command {
        Command::ValidateTheory => {
            let mut cfg = match &cli.config {
                Some(p) => TheoryConfig::load(p)?,
                None => TheoryConfig::default(),
            };
            if let Some(s) = cli.seed {
                cfg.base_seed = s;
            }
            let r = harness::run_theory_report(&cfg, &cli.out)?;
            println!(
                "concentration: violation rate {:.4} (threshold {:.4}), interior failures {}, separation failures {}",
                r.theorem.concentration_violation_rate,
                r.theorem.violation_threshold,
                r.theorem.interior_failures,
                r.theorem.separation_failures
            );
            println!(
                "control (noise x{}): violation rate {:.4}, detected {}",
                cfg.control_scale, r.control.concentration_violation_rate, r.control_detected
            );
            println!(
                "stationarity: {}/{} converged, min cosine {:.12}",
                r.stationarity.converged, r.stationarity.config.trials, r.stationarity.min_cosine
            );
            println!("{}", if r.pass { "PASS" } else { "FAIL" });
            println!("wrote {}", cli.out.join("theory_report.json").display());
            Ok(r.pass)
        }
        Command::SweepNoise => {
            let cfg = experiment_config(cli)?;
            let report = harness::run_noise_sweep(&cfg)?;
            report.write(&cli.out)?;
            for s in &report.summary {
                println!("{:<8} noise {:.2}  {:.4} ± {:.4} (n={})", s.method.as_str(), s.noise_rate, s.mean, s.std, s.n);
            }
            if report.failed_cells() > 0 {
                log::warn!("{} sweep cells failed; see sweep.csv", report.failed_cells());
            }
            println!("wrote {}", cli.out.join("sweep.csv").display());
            Ok(true)
        }
        Command::Pipeline => {
            let cfg = experiment_config(cli)?;
            let seed = cli.seed.unwrap_or(cfg.seeds[0]);
            for r in harness::run_pipeline(&cfg, &cli.out, seed)? {
                println!("{}", r.to_json_line());
            }
            Ok(true)
        }
        _ => {
            let cfg = experiment_config(cli)?;
            let seed = cli.seed.unwrap_or(cfg.seeds[0]);
            run_stage_command(cli, &cfg, seed)?;
            Ok(true)
        }
    }
}

fn init_logging() {
    let env = env_logger::Env::new().filter_or("PLGC_LOG", "info");
    env_logger::Builder::from_env(env).format_target(false).init();
}

fn report_error(out: &Path, e: &plgc::error::Error) {
    log::error!("{e}");
    let mut source = std::error::Error::source(e);
    while let Some(s) = source {
        log::debug!("caused by: {s}");
        source = s.source();
    }
    if matches!(e, plgc::error::Error::Stage { .. }) {
        eprintln!("error: {e} (details in {})", out.join("error.json").display());
    } else {
        eprintln!("error: {e}");
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    init_logging();
    match run(&cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(2),
        Err(e) => {
            report_error(&cli.out, &e);
            ExitCode::FAILURE
        }
    }
}
