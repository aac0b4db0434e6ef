//! `mfg` — solver, verifier and simulator for finite risk-sensitive
//! mean-field games.

mod commands;
mod manifest;

use std::path::PathBuf;

use anyhow::Result;
use clap::{Args, Parser, Subcommand};

use commands::{Format, EXIT_CAP_EXCEEDED, EXIT_VALIDATION};
use manifest::ManifestCommand;
use mfg_core::augmented::AugmentedError;
use mfg_core::dp::DpError;
use mfg_core::sim::SimError;

#[derive(Parser)]
#[command(
    name = "mfg",
    version,
    about = "Risk-sensitive mean-field games on finite spaces: equilibrium solver, verifier and N-agent simulator"
)]
struct Cli {
    /// Worker thread cap for parallel replications (defaults to all cores).
    #[arg(long, global = true, env = "MFG_THREADS")]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct OutputArgs {
    /// Write the primary output here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Manifest location (default: `<out>.manifest.json`, or
    /// `mfg-manifest.json` with stdout output).
    #[arg(long)]
    manifest: Option<PathBuf>,
}

#[derive(Args)]
struct StudyArgs {
    model: PathBuf,
    /// Solver result JSON providing the policy and reference flow.
    result: PathBuf,
    /// Simulation horizon (default: the result's horizon).
    #[arg(long)]
    horizon: Option<usize>,
    /// Monte-Carlo replications.
    #[arg(long, default_value_t = 1000)]
    reps: usize,
    /// Master seed; all randomness derives from it.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_enum, default_value_t = Format::Json)]
    format: Format,
    #[command(flatten)]
    output: OutputArgs,
}

#[derive(Subcommand)]
enum Command {
    /// Validate a model file and print diagnostics (Lipschitz constants,
    /// exponent bound, warnings).
    Validate {
        model: PathBuf,
        #[command(flatten)]
        output: OutputArgs,
    },
    /// Compute a mean-field equilibrium by damped fixed-point iteration.
    SolveMfe {
        model: PathBuf,
        /// Horizon-truncation tolerance.
        #[arg(long, default_value_t = 1e-6)]
        tol_dp: f64,
        /// Fixed-point tolerance on successive iterates.
        #[arg(long, default_value_t = 1e-6)]
        tol_fp: f64,
        #[arg(long, default_value_t = 1000)]
        max_iter: usize,
        /// Picard damping in (0, 1]; 1 is the undamped update.
        #[arg(long, default_value_t = 1.0)]
        damping: f64,
        #[command(flatten)]
        output: OutputArgs,
    },
    /// Re-verify a solver result through four independent checks
    /// (residuals, occupation-measure certificate, entropy duality,
    /// augmented-chain equivalence).
    Verify {
        model: PathBuf,
        result: PathBuf,
        #[arg(long, default_value_t = 1e-6)]
        tol: f64,
        #[command(flatten)]
        output: OutputArgs,
    },
    /// Monte-Carlo simulation of the N-agent game under the result's policy.
    Simulate {
        #[command(flatten)]
        study: StudyArgs,
        /// Number of agents.
        #[arg(long, default_value_t = 100)]
        agents: usize,
    },
    /// Estimate accuracy against the mean-field value across population
    /// sizes.
    Convergence {
        #[command(flatten)]
        study: StudyArgs,
        /// Comma-separated population sizes.
        #[arg(long, value_delimiter = ',', default_value = "10,100,1000")]
        agents: Vec<usize>,
    },
    /// Monte-Carlo Nash gap for agent 1: all-on-policy vs. unilateral best
    /// response.
    NashGap {
        #[command(flatten)]
        study: StudyArgs,
        #[arg(long, default_value_t = 100)]
        agents: usize,
    },
    /// Re-execute a recorded run from its manifest; the output is
    /// byte-identical for unchanged inputs.
    Rerun {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn resolve_horizon(result_path: &std::path::Path, horizon: Option<usize>) -> Result<usize> {
    if let Some(h) = horizon {
        return Ok(h);
    }
    let text = std::fs::read_to_string(result_path)?;
    let result: mfg_core::mfe::MfeResult<f64> = serde_json::from_str(&text)?;
    Ok(result.horizon)
}

fn run(command: Command) -> Result<i32> {
    match command {
        Command::Validate { model, output } => commands::run_with_manifest(
            ManifestCommand::Validate,
            &model,
            None,
            Format::Json,
            output.out.as_deref(),
            output.manifest.as_deref(),
        ),
        Command::SolveMfe {
            model,
            tol_dp,
            tol_fp,
            max_iter,
            damping,
            output,
        } => commands::run_with_manifest(
            ManifestCommand::SolveMfe {
                tol_dp,
                tol_fp,
                max_iter,
                damping,
            },
            &model,
            None,
            Format::Json,
            output.out.as_deref(),
            output.manifest.as_deref(),
        ),
        Command::Verify {
            model,
            result,
            tol,
            output,
        } => commands::run_with_manifest(
            ManifestCommand::Verify { tol },
            &model,
            Some(&result),
            Format::Json,
            output.out.as_deref(),
            output.manifest.as_deref(),
        ),
        Command::Simulate { study, agents } => {
            let horizon = resolve_horizon(&study.result, study.horizon)?;
            commands::run_with_manifest(
                ManifestCommand::Simulate {
                    agents,
                    horizon,
                    reps: study.reps,
                    seed: study.seed,
                },
                &study.model,
                Some(&study.result),
                study.format,
                study.output.out.as_deref(),
                study.output.manifest.as_deref(),
            )
        }
        Command::Convergence { study, agents } => {
            let horizon = resolve_horizon(&study.result, study.horizon)?;
            commands::run_with_manifest(
                ManifestCommand::Convergence {
                    agents,
                    horizon,
                    reps: study.reps,
                    seed: study.seed,
                },
                &study.model,
                Some(&study.result),
                study.format,
                study.output.out.as_deref(),
                study.output.manifest.as_deref(),
            )
        }
        Command::NashGap { study, agents } => {
            let horizon = resolve_horizon(&study.result, study.horizon)?;
            commands::run_with_manifest(
                ManifestCommand::NashGap {
                    agents,
                    horizon,
                    reps: study.reps,
                    seed: study.seed,
                },
                &study.model,
                Some(&study.result),
                study.format,
                study.output.out.as_deref(),
                study.output.manifest.as_deref(),
            )
        }
        Command::Rerun { manifest, out } => commands::rerun(&manifest, &out),
    }
}

/// Maps failures to the exit-code contract: 4 for any enumeration or horizon
/// cap, 2 for everything else (bad inputs, validation failures).
fn exit_code_for(err: &anyhow::Error) -> i32 {
    for cause in err.chain() {
        if let Some(dp) = cause.downcast_ref::<DpError>() {
            if matches!(dp, DpError::HorizonCapExceeded { .. }) {
                return EXIT_CAP_EXCEEDED;
            }
        }
        if let Some(sim) = cause.downcast_ref::<SimError>() {
            if matches!(sim, SimError::OracleCapExceeded { .. }) {
                return EXIT_CAP_EXCEEDED;
            }
        }
        if let Some(aug) = cause.downcast_ref::<AugmentedError>() {
            if matches!(aug, AugmentedError::AtomCapExceeded { .. }) {
                return EXIT_CAP_EXCEEDED;
            }
        }
    }
    EXIT_VALIDATION
}

fn main() {
    let cli = Cli::parse();
    if let Some(threads) = cli.threads {
        if let Err(err) = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
        {
            eprintln!("warning: could not configure {threads} threads: {err}");
        }
    }
    let code = match run(cli.command) {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err:#}");
            exit_code_for(&err)
        }
    };
    std::process::exit(code);
}
