//! Command implementations. Each command produces one primary output (JSON
//! or CSV) plus a run manifest, and maps its outcome to the exit-code
//! contract: 0 success, 2 validation failure, 3 solver non-convergence,
//! 4 enumeration/horizon cap exceeded.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{Context, Result};
use serde::Serialize;

use mfg_core::mfe::{self, MfeOptions, MfeResult};
use mfg_core::model::MfgModel;
use mfg_core::sim;
use mfg_core::verify;

use crate::manifest::{default_manifest_path, sha256_file, ManifestCommand, RunManifest};

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Format {
    Json,
    Csv,
}

impl Format {
    fn as_str(self) -> &'static str {
        match self {
            Format::Json => "json",
            Format::Csv => "csv",
        }
    }
}

pub const EXIT_OK: i32 = 0;
pub const EXIT_VALIDATION: i32 = 2;
pub const EXIT_NON_CONVERGED: i32 = 3;
pub const EXIT_CAP_EXCEEDED: i32 = 4;

fn load_model(path: &Path) -> Result<MfgModel<f64>> {
    MfgModel::from_path(path).with_context(|| format!("loading model {}", path.display()))
}

fn load_result(path: &Path) -> Result<MfeResult<f64>> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading result {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing result {}", path.display()))
}

fn json_bytes<T: Serialize>(value: &T) -> Result<Vec<u8>> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    Ok(bytes)
}

fn emit(out: Option<&Path>, bytes: &[u8]) -> Result<()> {
    match out {
        Some(path) => std::fs::write(path, bytes)
            .with_context(|| format!("writing output {}", path.display())),
        None => {
            std::io::stdout().write_all(bytes)?;
            Ok(())
        }
    }
}

#[derive(Serialize)]
struct Diagnostics {
    num_states: usize,
    num_actions: usize,
    beta: f64,
    lambda: f64,
    cost_bound: f64,
    /// Total-variation Lipschitz constant of the kernel in the mean field.
    lipschitz_kernel: f64,
    /// Lipschitz constant of the cost in the mean field.
    lipschitz_cost: f64,
    exponent_bound: f64,
    log_space_recommended: bool,
    warnings: Vec<String>,
}

/// Executes a resolved command against its inputs and returns the primary
/// output bytes together with the exit code.
pub fn execute(
    command: &ManifestCommand,
    model_path: &Path,
    result_path: Option<&Path>,
    format: Format,
) -> Result<(Vec<u8>, i32)> {
    let model = load_model(model_path)?;
    match command {
        ManifestCommand::Validate => {
            let (lp, lc) = model.lipschitz_constants();
            let diag = Diagnostics {
                num_states: model.nx(),
                num_actions: model.na(),
                beta: model.beta(),
                lambda: model.lambda(),
                cost_bound: model.cost_bound(),
                lipschitz_kernel: lp,
                lipschitz_cost: lc,
                exponent_bound: model.exponent_bound(),
                log_space_recommended: model.log_space_recommended(),
                warnings: model.warnings(),
            };
            Ok((json_bytes(&diag)?, EXIT_OK))
        }
        ManifestCommand::SolveMfe {
            tol_dp,
            tol_fp,
            max_iter,
            damping,
        } => {
            let opts = MfeOptions {
                tol_dp: *tol_dp,
                tol_fp: *tol_fp,
                max_iter: *max_iter,
                damping: *damping,
                ..Default::default()
            };
            let result = mfe::solve_mfe_with(&model, &opts)?;
            let code = if result.converged {
                EXIT_OK
            } else {
                EXIT_NON_CONVERGED
            };
            Ok((json_bytes(&result)?, code))
        }
        ManifestCommand::Verify { tol } => {
            let result = load_result(result_path.expect("verify requires a result file"))?;
            let report = verify::verify_candidate(
                &model,
                &result.policy,
                &result.flow,
                result.horizon,
                *tol,
            )?;
            let code = if report.pass { EXIT_OK } else { EXIT_VALIDATION };
            Ok((json_bytes(&report)?, code))
        }
        ManifestCommand::Simulate {
            agents,
            horizon,
            reps,
            seed,
        } => {
            let result = load_result(result_path.expect("simulate requires a result file"))?;
            let cfg = sim::SimConfig::new(*agents, *horizon, *reps, *seed)
                .with_reference_flow(result.flow.clone());
            let report = sim::simulate(&model, &result.policy, &cfg)?;
            let bytes = match format {
                Format::Json => json_bytes(&report)?,
                Format::Csv => simulate_csv(&report)?,
            };
            Ok((bytes, EXIT_OK))
        }
        ManifestCommand::Convergence {
            agents,
            horizon,
            reps,
            seed,
        } => {
            let result = load_result(result_path.expect("convergence requires a result file"))?;
            let study = sim::convergence_study(
                &model,
                &result.policy,
                &result.flow,
                agents,
                *horizon,
                *reps,
                *seed,
            )?;
            let bytes = match format {
                Format::Json => json_bytes(&study)?,
                Format::Csv => convergence_csv(&study)?,
            };
            Ok((bytes, EXIT_OK))
        }
        ManifestCommand::NashGap {
            agents,
            horizon,
            reps,
            seed,
        } => {
            let result = load_result(result_path.expect("nash-gap requires a result file"))?;
            let report = sim::nash_gap(
                &model,
                &result.policy,
                &result.flow,
                *agents,
                *horizon,
                *reps,
                *seed,
            )?;
            let bytes = match format {
                Format::Json => json_bytes(&report)?,
                Format::Csv => nash_gap_csv(&report)?,
            };
            Ok((bytes, EXIT_OK))
        }
    }
}

fn simulate_csv(report: &sim::SimReport<f64>) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["agent", "estimate", "stderr"])?;
    for (i, (est, se)) in report
        .agent_estimates
        .iter()
        .zip(&report.agent_stderrs)
        .enumerate()
    {
        w.write_record([i.to_string(), est.to_string(), se.to_string()])?;
    }
    Ok(w.into_inner()?)
}

fn convergence_csv(study: &sim::ConvergenceStudy<f64>) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["N", "estimate", "stderr", "abs_error", "mean_tv_by_t"])?;
    for row in &study.rows {
        let tv = row
            .mean_tv_by_t
            .iter()
            .map(f64::to_string)
            .collect::<Vec<_>>()
            .join(";");
        w.write_record([
            row.num_agents.to_string(),
            row.estimate.to_string(),
            row.stderr.to_string(),
            row.abs_error.to_string(),
            tv,
        ])?;
    }
    Ok(w.into_inner()?)
}

fn nash_gap_csv(report: &sim::NashGapReport<f64>) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([
        "N",
        "horizon",
        "reps",
        "seed",
        "equilibrium_value",
        "equilibrium_stderr",
        "deviation_value",
        "deviation_stderr",
        "gap_estimate",
        "combined_stderr",
    ])?;
    w.write_record([
        report.num_agents.to_string(),
        report.horizon.to_string(),
        report.replications.to_string(),
        report.seed.to_string(),
        report.equilibrium_value.to_string(),
        report.equilibrium_stderr.to_string(),
        report.deviation_value.to_string(),
        report.deviation_stderr.to_string(),
        report.gap_estimate.to_string(),
        report.combined_stderr.to_string(),
    ])?;
    Ok(w.into_inner()?)
}

/// Runs a command end to end: execute, write the primary output, write the
/// manifest.
pub fn run_with_manifest(
    command: ManifestCommand,
    model_path: &Path,
    result_path: Option<&Path>,
    format: Format,
    out: Option<&Path>,
    manifest_path: Option<&Path>,
) -> Result<i32> {
    let started = Instant::now();
    let (bytes, code) = execute(&command, model_path, result_path, format)?;
    emit(out, &bytes)?;

    let manifest = RunManifest {
        tool: "mfg".into(),
        version: env!("CARGO_PKG_VERSION").into(),
        command,
        model_path: model_path.to_path_buf(),
        model_sha256: sha256_file(model_path)?,
        result_path: result_path.map(Path::to_path_buf),
        result_sha256: result_path.map(sha256_file).transpose()?,
        format: format.as_str().into(),
        output_path: out.map(Path::to_path_buf),
        duration_ms: started.elapsed().as_millis(),
    };
    let manifest_path: PathBuf = manifest_path
        .map(Path::to_path_buf)
        .unwrap_or_else(|| default_manifest_path(out));
    manifest.write(&manifest_path)?;
    Ok(code)
}

/// Re-executes a recorded run and writes the regenerated primary output to
/// `out`; byte-identical to the original for the same inputs.
pub fn rerun(manifest_path: &Path, out: &Path) -> Result<i32> {
    let manifest = RunManifest::load(manifest_path)?;
    manifest.check_inputs()?;
    let format = match manifest.format.as_str() {
        "csv" => Format::Csv,
        _ => Format::Json,
    };
    let (bytes, code) = execute(
        &manifest.command,
        &manifest.model_path,
        manifest.result_path.as_deref(),
        format,
    )?;
    emit(Some(out), &bytes)?;
    Ok(code)
}
