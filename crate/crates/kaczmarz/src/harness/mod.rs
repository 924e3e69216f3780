//! Experiment runner: build a problem from a config, run the requested
//! method, and write the artifact set (`trace.csv`, `cycles.csv`,
//! `recon.pgm`, `truth.pgm`, `summary.txt`) into the output directory.
//!
//! Artifacts are deterministic per seed: the same config always produces
//! byte-identical files. Wall-clock time therefore never appears in
//! artifacts; the CLI prints it to stdout instead.

pub mod config;
pub mod pgm;

use std::fmt::Write as _;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::cgne::{cgne_run, CgneOutput};
use crate::doping::{build_doping_problem, parse_profile, DopingError, DopingProblem, DopingSetup};
use crate::operator::ProblemSystem;
use crate::radon::{build_radon_problem, parse_scene, RadonError, RadonProblem, RadonSetup};
use crate::relax::RelaxationFunction;
use crate::solver::{run, IterationTrace, SolverConfig, SolverError, StopReason, Variant};
use crate::space::ParameterVector;

pub use config::{parse_config, ConfigError, ExperimentConfig, MethodKind, ProblemKind};
pub use pgm::{read_pgm_minmax, write_pgm};

/// Environment variable consulted for the default output directory.
pub const OUTPUT_DIR_ENV: &str = "KACZMARZ_OUTPUT_DIR";

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Radon(#[from] RadonError),
    #[error(transparent)]
    Doping(#[from] DopingError),
    #[error(transparent)]
    Solver(#[from] SolverError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
}

impl HarnessError {
    /// 1 for configuration/input problems, 2 for numerical or I/O failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Config(_) => 1,
            HarnessError::Radon(RadonError::Scene(_)) => 1,
            HarnessError::Radon(RadonError::InvalidSetup(_)) => 1,
            HarnessError::Doping(DopingError::Profile { .. }) => 1,
            HarnessError::Doping(DopingError::InvalidSetup(_)) => 1,
            HarnessError::Solver(SolverError::InvalidConfig(_))
            | HarnessError::Solver(SolverError::Relaxation(_))
            | HarnessError::Solver(SolverError::UnsupportedVariant(_)) => 1,
            _ => 2,
        }
    }
}

fn read_file(path: &Path) -> Result<String, HarnessError> {
    fs::read_to_string(path).map_err(|source| HarnessError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Deterministic per-run facts recorded in `summary.txt`.
#[derive(Debug, Clone, PartialEq)]
pub struct SummaryData {
    pub problem: String,
    pub variant: String,
    pub stop_reason: String,
    pub cycles: usize,
    pub stop_cycle: Option<usize>,
    pub total_updates: usize,
    pub forward_evals: usize,
    pub adjoint_evals: usize,
    pub final_error_rel: Option<f64>,
    pub max_residual_ratio: f64,
}

pub fn render_summary(s: &SummaryData) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "problem = {}", s.problem);
    let _ = writeln!(out, "variant = {}", s.variant);
    let _ = writeln!(out, "stop_reason = {}", s.stop_reason);
    let _ = writeln!(out, "cycles = {}", s.cycles);
    match s.stop_cycle {
        Some(c) => {
            let _ = writeln!(out, "stop_cycle = {c}");
        }
        None => {
            let _ = writeln!(out, "stop_cycle = none");
        }
    }
    let _ = writeln!(out, "total_updates = {}", s.total_updates);
    let _ = writeln!(out, "forward_evals = {}", s.forward_evals);
    let _ = writeln!(out, "adjoint_evals = {}", s.adjoint_evals);
    match s.final_error_rel {
        Some(e) => {
            let _ = writeln!(out, "final_error_rel = {e}");
        }
        None => {
            let _ = writeln!(out, "final_error_rel = none");
        }
    }
    let _ = writeln!(out, "max_residual_ratio = {}", s.max_residual_ratio);
    out
}

/// Everything a caller may want to inspect after a run; the artifact files
/// hold the same information.
#[derive(Debug)]
pub struct ExperimentOutcome {
    pub variant: MethodKind,
    pub tau: f64,
    pub n_blocks: usize,
    pub x_report: ParameterVector,
    pub truth: ParameterVector,
    pub trace: Option<IterationTrace>,
    pub cgne: Option<CgneOutput>,
    pub noise_levels: Vec<f64>,
    pub summary: SummaryData,
    pub output_dir: PathBuf,
}

fn default_phi(problem: ProblemKind, variant: MethodKind, norm_bound: f64) -> RelaxationFunction {
    let steepest = matches!(variant, MethodKind::Lsdk | MethodKind::Sdk);
    match problem {
        ProblemKind::Radon => {
            if steepest {
                RelaxationFunction::ClampedLinear { scale: 0.4, cap: 2.0 }
            } else {
                RelaxationFunction::Constant(0.4)
            }
        }
        ProblemKind::Doping => {
            let base = 1.0 / (norm_bound * norm_bound);
            if steepest {
                RelaxationFunction::ClampedLinear { scale: 1.0, cap: 10.0 * base }
            } else {
                RelaxationFunction::Constant(base)
            }
        }
    }
}

fn variant_of(kind: MethodKind) -> Variant {
    match kind {
        MethodKind::Lsdk => Variant::Lsdk,
        MethodKind::Sdk => Variant::Sdk,
        MethodKind::Llk => Variant::Llk,
        MethodKind::Lk => Variant::Lk,
        MethodKind::Cgne => unreachable!("cgne is not a Kaczmarz variant"),
    }
}

/// Resolves the directory artifacts go to: explicit override, then the
/// config, then `KACZMARZ_OUTPUT_DIR`, then `./kaczmarz-out`.
pub fn resolve_output_dir(config: &ExperimentConfig, output_override: Option<&Path>) -> PathBuf {
    if let Some(dir) = output_override {
        return dir.to_path_buf();
    }
    if let Some(dir) = &config.output_dir {
        return dir.clone();
    }
    if let Some(dir) = std::env::var_os(OUTPUT_DIR_ENV) {
        return PathBuf::from(dir);
    }
    PathBuf::from("kaczmarz-out")
}

struct BuiltProblem {
    system: ProblemSystem,
    truth: ParameterVector,
    x0: ParameterVector,
    norm_bound: f64,
    clamp: Option<(f64, f64)>,
}

fn build_problem(config: &ExperimentConfig) -> Result<BuiltProblem, HarnessError> {
    match config.problem {
        ProblemKind::Radon => {
            let shapes = match &config.phantom {
                Some(path) => parse_scene(&read_file(path)?).map_err(RadonError::from)?,
                None => crate::radon::default_scene(),
            };
            let (rows, cols) = config.resolved_grid();
            let setup = RadonSetup {
                n_detectors: config.resolved_n(),
                rows,
                cols,
                n_t: None,
                n_sigma: None,
                refinement: config.refinement,
                shapes,
                noise_rel: config.resolved_noise_rel(),
                seed: config.seed,
            };
            let RadonProblem { system, truth, grid, .. } = build_radon_problem(&setup)?;
            let x0 = ParameterVector::zeros(grid.rows, grid.cols, grid.cell_weight())
                .expect("grid weights are valid");
            Ok(BuiltProblem {
                system,
                truth,
                x0,
                norm_bound: 1.0,
                clamp: None,
            })
        }
        ProblemKind::Doping => {
            let truth = match &config.truth_profile {
                Some(path) => Some(parse_profile(&read_file(path)?)?),
                None => None,
            };
            let init = match &config.init_profile {
                Some(path) => Some(parse_profile(&read_file(path)?)?),
                None => None,
            };
            let setup = DopingSetup {
                m: config.m,
                mu_n: config.mu_n,
                n_profiles: config.resolved_n(),
                bump_halfwidth: config.h,
                noise_rel: config.resolved_noise_rel(),
                seed: config.seed,
                x_min: config.x_min,
                x_max: config.x_max,
                truth,
                init,
                contact_weight: config.contact_weight.clone(),
            };
            let DopingProblem {
                system,
                truth,
                x0,
                norm_bound,
                ..
            } = build_doping_problem(&setup)?;
            Ok(BuiltProblem {
                system,
                truth,
                x0,
                norm_bound,
                clamp: Some((config.x_min, config.x_max)),
            })
        }
    }
}

fn residual_ratio(
    system: &ProblemSystem,
    x: &ParameterVector,
    tau: f64,
) -> Result<f64, HarnessError> {
    let mut worst = 0.0f64;
    for (i, block) in system.blocks().iter().enumerate() {
        let predicted = block
            .apply(x)
            .map_err(|source| SolverError::Block { k: 0, source })?;
        let rn = predicted
            .diff_norm(&system.noisy_data()[i])
            .map_err(SolverError::from)?;
        let bound = tau * system.noise_levels()[i];
        let ratio = if bound == 0.0 {
            if rn == 0.0 {
                0.0
            } else {
                f64::INFINITY
            }
        } else {
            rn / bound
        };
        worst = worst.max(ratio);
    }
    Ok(worst)
}

/// Runs one experiment end to end and writes the artifact set. Partial
/// artifacts are removed when a write fails.
pub fn run_experiment(
    config: &ExperimentConfig,
    output_override: Option<&Path>,
) -> Result<ExperimentOutcome, HarnessError> {
    let tau = config.resolved_tau();
    let built = build_problem(config)?;
    let n = built.system.len();

    // validate the solver configuration before any heavy computation
    let is_cgne = config.variant == MethodKind::Cgne;
    let solver_config = if is_cgne {
        None
    } else {
        let phi = config
            .phi
            .clone()
            .unwrap_or_else(|| default_phi(config.problem, config.variant, built.norm_bound));
        let sc = SolverConfig {
            variant: variant_of(config.variant),
            tau,
            eta: 0.0,
            norm_bound: built.norm_bound,
            phi,
            max_cycles: config.max_cycles,
            exact_data_residual_tol: None,
            clamp_bounds: built.clamp,
        };
        sc.validate()?;
        Some(sc)
    };

    let truth_norm = built.truth.norm();
    let (x_report, trace, cgne, summary_core) = if let Some(sc) = &solver_config {
        let out = run(&built.system, sc, &built.x0)?;
        let trace = out.trace;
        let stop_cycle = trace.stop_index.map(|k| k / n);
        let core = SummaryData {
            problem: config.problem.name().to_string(),
            variant: config.variant.name().to_string(),
            stop_reason: trace.stop_reason.name().to_string(),
            cycles: trace.cycles(),
            stop_cycle,
            total_updates: trace.total_updates(),
            forward_evals: trace.forward_evals,
            adjoint_evals: trace.adjoint_evals,
            final_error_rel: None,
            max_residual_ratio: 0.0,
        };
        (out.x_final, Some(trace), None, core)
    } else {
        let out = cgne_run(&built.system, &built.x0, config.max_cycles)?;
        let capped = out.best.as_ref().map(|b| b.cycle).unwrap_or(out.records.len());
        let x_report = out.x_best.clone().unwrap_or_else(|| out.x_final.clone());
        let core = SummaryData {
            problem: config.problem.name().to_string(),
            variant: config.variant.name().to_string(),
            stop_reason: if out.best.is_some() {
                "min_error_cap".to_string()
            } else {
                "max_cycles".to_string()
            },
            cycles: capped,
            stop_cycle: out.best.as_ref().map(|b| b.cycle),
            total_updates: capped * n,
            forward_evals: (capped + 1) * n,
            adjoint_evals: (capped + 1) * n,
            final_error_rel: None,
            max_residual_ratio: 0.0,
        };
        (x_report, None, Some(out), core)
    };

    let mut summary = summary_core;
    if truth_norm > 0.0 {
        summary.final_error_rel = Some(
            x_report
                .diff_norm(&built.truth)
                .map_err(SolverError::from)?
                / truth_norm,
        );
    }
    summary.max_residual_ratio = residual_ratio(&built.system, &x_report, tau)?;

    let output_dir = resolve_output_dir(config, output_override);
    let outcome = ExperimentOutcome {
        variant: config.variant,
        tau,
        n_blocks: n,
        x_report,
        truth: built.truth,
        trace,
        cgne,
        noise_levels: built.system.noise_levels().to_vec(),
        summary,
        output_dir,
    };
    write_artifacts(&outcome)?;
    Ok(outcome)
}

pub const TRACE_HEADER: &str =
    "cycle, k, op_index, omega, alpha, residual_norm, step_norm, error_rel";

fn render_trace_csv(outcome: &ExperimentOutcome) -> String {
    let mut out = String::new();
    out.push_str(TRACE_HEADER);
    out.push('\n');
    let fmt_opt = |v: Option<f64>| v.map(|v| v.to_string()).unwrap_or_default();
    if let Some(trace) = &outcome.trace {
        let n = outcome.n_blocks;
        for s in &trace.steps {
            let _ = writeln!(
                out,
                "{}, {}, {}, {}, {}, {}, {}, {}",
                s.k / n,
                s.k,
                s.op_index,
                s.omega as u8,
                s.alpha,
                s.residual_norm,
                fmt_opt(s.step_norm),
                fmt_opt(s.error_rel),
            );
        }
    } else if let Some(cgne) = &outcome.cgne {
        let cap = outcome.summary.cycles;
        let n = outcome.n_blocks;
        for record in cgne.records.iter().take(cap) {
            let cycle = record.cycle - 1;
            for i in 0..n {
                let _ = writeln!(
                    out,
                    "{}, {}, {}, 1, {}, {}, {}, {}",
                    cycle,
                    cycle * n + i,
                    i,
                    record.alpha,
                    record.residual_norms[i],
                    record.direction_norm,
                    fmt_opt(record.error_rel),
                );
            }
        }
    }
    out
}

fn render_cycles_csv(outcome: &ExperimentOutcome) -> String {
    let mut out = String::from("cycle,updates\n");
    if let Some(trace) = &outcome.trace {
        for (cycle, updates) in trace.per_cycle_updates.iter().enumerate() {
            let _ = writeln!(out, "{cycle},{updates}");
        }
    } else {
        for cycle in 0..outcome.summary.cycles {
            let _ = writeln!(out, "{cycle},{}", outcome.n_blocks);
        }
    }
    out
}

fn write_artifacts(outcome: &ExperimentOutcome) -> Result<(), HarnessError> {
    let dir = &outcome.output_dir;
    fs::create_dir_all(dir).map_err(|source| HarnessError::Io {
        path: dir.clone(),
        source,
    })?;
    let mut written: Vec<PathBuf> = Vec::new();
    let mut write = |name: &str, bytes: &[u8]| -> Result<(), HarnessError> {
        let path = dir.join(name);
        match fs::write(&path, bytes) {
            Ok(()) => {
                written.push(path);
                Ok(())
            }
            Err(source) => {
                for p in &written {
                    let _ = fs::remove_file(p);
                }
                Err(HarnessError::Io { path, source })
            }
        }
    };
    write("trace.csv", render_trace_csv(outcome).as_bytes())?;
    write("cycles.csv", render_cycles_csv(outcome).as_bytes())?;
    write("recon.pgm", pgm::render_pgm(&outcome.x_report).as_bytes())?;
    write("truth.pgm", pgm::render_pgm(&outcome.truth).as_bytes())?;
    write("summary.txt", render_summary(&outcome.summary).as_bytes())?;
    Ok(())
}

/// True when the run ended by the loping rule and every residual in the
/// final (all-loped) cycle is strictly below its threshold — the invariant
/// the stopping theory promises.
pub fn stopping_residuals_strict(outcome: &ExperimentOutcome) -> Option<bool> {
    let trace = outcome.trace.as_ref()?;
    if trace.stop_reason != StopReason::AllLoped {
        return None;
    }
    let n = outcome.n_blocks;
    let last = trace.steps.len().checked_sub(n)?;
    Some(trace.steps[last..].iter().all(|s| {
        s.residual_norm < outcome.tau * outcome.noise_levels[s.op_index]
    }))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn summary_rendering_is_stable() {
        let s = SummaryData {
            problem: "radon".into(),
            variant: "lsdk".into(),
            stop_reason: "all_loped".into(),
            cycles: 6,
            stop_cycle: Some(5),
            total_updates: 143,
            forward_evals: 298,
            adjoint_evals: 143,
            final_error_rel: Some(0.182),
            max_residual_ratio: 0.91,
        };
        let text = render_summary(&s);
        assert!(text.contains("variant = lsdk\n"));
        assert!(text.contains("stop_cycle = 5\n"));
        assert!(text.contains("final_error_rel = 0.182\n"));
        assert!(!text.to_lowercase().contains("time"));
        let none = SummaryData {
            stop_cycle: None,
            final_error_rel: None,
            ..s
        };
        let text = render_summary(&none);
        assert!(text.contains("stop_cycle = none\n"));
        assert!(text.contains("final_error_rel = none\n"));
    }

    #[test]
    fn trace_header_matches_the_contract() {
        assert_eq!(
            TRACE_HEADER,
            "cycle, k, op_index, omega, alpha, residual_norm, step_norm, error_rel"
        );
    }
}
