//! Experiment harness CLI.
//!
//! Every subcommand reads one JSON experiment config (see
//! `ExperimentConfig` in `secest-core`) and writes its outputs under an
//! `--out` prefix. Exit status: 0 on success, 2 when the config fails
//! validation (malformed JSON, unknown fields, out-of-range parameters),
//! 1 on any other failure.

use clap::{Args, Parser, Subcommand};
use std::path::PathBuf;
use std::process::ExitCode;

use secest_core::harness::{
    export_estimation, export_learn, export_roc, export_sweep, export_system,
    export_trajectory, run_constrained_sweep, run_estimation_experiment, run_learn, run_roc,
    ExperimentConfig, SystemSpec,
};
use secest_core::process_model::simulate;
use secest_core::Error;

#[derive(Parser)]
#[command(name = "secest", version, about = "Secure state estimation experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct CommonArgs {
    /// Experiment config (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Output path prefix; files are written as `<out>_<name>.<ext>`.
    #[arg(long)]
    out: String,
    /// Replaces the config's replicate seed list with this single seed
    /// (for gen-system: overrides the generator seed).
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Resolve the plant description and write its matrices to
    /// `<out>_system.json`.
    GenSystem(CommonArgs),
    /// Simulate attack-free trajectories, one CSV per replicate seed.
    Simulate(CommonArgs),
    /// Run the paired-stream estimator/detector comparison.
    Estimate(CommonArgs),
    /// Sweep the covariance budget multiplier over the config's `xi_list`.
    SweepXi(CommonArgs),
    /// Tune thresholds across the config's `alpha_grid` and measure
    /// false-alarm/detection rates.
    Roc(CommonArgs),
    /// Tune detector thresholds to their target false-alarm rates.
    LearnEta(CommonArgs),
}

fn load_config(args: &CommonArgs) -> Result<ExperimentConfig, Error> {
    let mut cfg = ExperimentConfig::from_json_file(&args.config)?;
    if let Some(seed) = args.seed {
        cfg.seeds = vec![seed];
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Cached artifacts (the detector's subset covariance table) live next to
/// the outputs.
fn cache_dir(out: &str) -> Option<PathBuf> {
    let probe = PathBuf::from(format!("{out}_x"));
    let parent = probe.parent()?;
    if parent.as_os_str().is_empty() {
        Some(PathBuf::from("."))
    } else {
        Some(parent.to_path_buf())
    }
}

fn run(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::GenSystem(args) => {
            let mut cfg = ExperimentConfig::from_json_file(&args.config)?;
            if let Some(seed) = args.seed {
                if let SystemSpec::Generator(g) = &mut cfg.system {
                    g.seed = seed;
                }
            }
            let model = cfg.system.resolve()?;
            export_system(&model, &args.out)
        }
        Command::Simulate(args) => {
            let cfg = load_config(&args)?;
            let model = cfg.system.resolve()?;
            for &seed in &cfg.seeds {
                let traj = simulate(
                    &model,
                    cfg.horizon,
                    None,
                    secest_core::harness::derive_seed(seed, secest_core::harness::STREAM_PLANT),
                )?;
                export_trajectory(&traj, &args.out, seed)?;
            }
            export_system(&model, &args.out)
        }
        Command::Estimate(args) => {
            let cfg = load_config(&args)?;
            let report = run_estimation_experiment(&cfg, cache_dir(&args.out).as_deref())?;
            export_estimation(&report, &args.out)
        }
        Command::SweepXi(args) => {
            let cfg = load_config(&args)?;
            let report = run_constrained_sweep(&cfg)?;
            export_sweep(&report, &args.out)
        }
        Command::Roc(args) => {
            let cfg = load_config(&args)?;
            let report = run_roc(&cfg, cache_dir(&args.out).as_deref())?;
            export_roc(&report, &args.out)
        }
        Command::LearnEta(args) => {
            let cfg = load_config(&args)?;
            let report = run_learn(&cfg, cache_dir(&args.out).as_deref())?;
            export_learn(&report, &args.out)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e @ Error::Validation(_)) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
