use std::collections::VecDeque;
use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::Mutex;
use std::time::Instant;

use clap::{Parser, Subcommand, ValueEnum};

use kaczmarz::doping::{build_doping_problem, DopingSetup};
use kaczmarz::harness::{
    parse_config, run_experiment, ExperimentConfig, HarnessError, ProblemKind,
};
use kaczmarz::operator::validate_adjoint;
use kaczmarz::radon::{build_radon_problem, RadonSetup};
use kaczmarz::relax::RelaxationFunction;
use kaczmarz::space::ParameterVector;

#[derive(Parser)]
#[command(
    name = "kaczmarz",
    version,
    about = "Loping Kaczmarz-type solvers for systems of ill-posed equations"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run experiment configs and write trace/summary/image artifacts.
    Solve {
        /// Config file; repeat the flag to queue several runs.
        #[arg(long = "config", required = true, num_args = 1..)]
        config: Vec<PathBuf>,
        /// Worker threads for independent runs.
        #[arg(long, default_value_t = 1)]
        jobs: usize,
        /// Output directory (per-config subdirectories when several configs run).
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Parse a config and print the resolved settings without running.
    Validate {
        #[arg(long = "config")]
        config: PathBuf,
    },
    /// Probe forward/adjoint consistency of a built-in problem.
    AdjointCheck {
        #[arg(long, value_enum)]
        problem: CheckProblem,
        /// Pixels per side (tomography) or nodes per side (doping).
        #[arg(long)]
        grid: Option<usize>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum CheckProblem {
    Radon,
    Doping,
}

fn main() -> ExitCode {
    env_logger::init();
    let cli = Cli::parse();
    let code = match cli.command {
        Command::Solve {
            config,
            jobs,
            output,
        } => cmd_solve(config, jobs, output),
        Command::Validate { config } => cmd_validate(&config),
        Command::AdjointCheck { problem, grid } => cmd_adjoint_check(problem, grid),
    };
    ExitCode::from(code)
}

fn load_config(path: &PathBuf) -> Result<ExperimentConfig, u8> {
    let text = fs::read_to_string(path).map_err(|err| {
        eprintln!("error: {}: {err}", path.display());
        1u8
    })?;
    parse_config(&text).map_err(|err| {
        eprintln!("error: {}: {err}", path.display());
        1u8
    })
}

fn cmd_solve(configs: Vec<PathBuf>, jobs: usize, output: Option<PathBuf>) -> u8 {
    if jobs == 0 {
        eprintln!("error: --jobs must be at least 1");
        return 1;
    }
    let mut queue = VecDeque::new();
    for path in &configs {
        let config = match load_config(path) {
            Ok(c) => c,
            Err(code) => return code,
        };
        let dir_override = output.as_ref().map(|dir| {
            if configs.len() > 1 {
                let stem = path
                    .file_stem()
                    .map(|s| s.to_os_string())
                    .unwrap_or_else(|| "run".into());
                dir.join(stem)
            } else {
                dir.clone()
            }
        });
        queue.push_back((path.clone(), config, dir_override));
    }
    let queue = Mutex::new(queue);
    let worst = Mutex::new(0u8);
    std::thread::scope(|scope| {
        for _ in 0..jobs.min(configs.len()) {
            scope.spawn(|| loop {
                let job = queue.lock().unwrap().pop_front();
                let Some((path, config, dir_override)) = job else {
                    break;
                };
                let started = Instant::now();
                match run_experiment(&config, dir_override.as_deref()) {
                    Ok(outcome) => {
                        let s = &outcome.summary;
                        let error = s
                            .final_error_rel
                            .map(|e| format!("{e:.4}"))
                            .unwrap_or_else(|| "n/a".into());
                        println!(
                            "{}: {} {} stop={} cycles={} error_rel={} runtime={:.2}s -> {}",
                            path.display(),
                            s.problem,
                            s.variant,
                            s.stop_reason,
                            s.cycles,
                            error,
                            started.elapsed().as_secs_f64(),
                            outcome.output_dir.display(),
                        );
                    }
                    Err(err) => {
                        eprintln!("error: {}: {err}", path.display());
                        let mut w = worst.lock().unwrap();
                        *w = (*w).max(err.exit_code() as u8);
                    }
                }
            });
        }
    });
    worst.into_inner().unwrap()
}

fn cmd_validate(path: &PathBuf) -> u8 {
    let config = match load_config(path) {
        Ok(c) => c,
        Err(code) => return code,
    };
    println!("problem = {}", config.problem.name());
    println!("variant = {}", config.variant.name());
    println!("tau = {}", config.resolved_tau());
    println!("noise_rel = {}", config.resolved_noise_rel());
    println!("seed = {}", config.seed);
    println!("N = {}", config.resolved_n());
    println!("max_cycles = {}", config.max_cycles);
    match &config.phi {
        None => println!("phi = default"),
        Some(RelaxationFunction::Constant(a)) => println!("phi = const {a}"),
        Some(RelaxationFunction::ClampedLinear { scale, cap }) => {
            println!("phi = clamped {scale} {cap}")
        }
    }
    match config.problem {
        ProblemKind::Radon => {
            let (rows, cols) = config.resolved_grid();
            println!("grid = {rows}x{cols}");
            println!("refinement = {}", config.refinement);
            match &config.phantom {
                Some(p) => println!("phantom = {}", p.display()),
                None => println!("phantom = built-in"),
            }
        }
        ProblemKind::Doping => {
            println!("m = {}", config.m);
            println!("mu_n = {}", config.mu_n);
            println!("h = {}", config.h);
            println!("clamp = [{}, {}]", config.x_min, config.x_max);
        }
    }
    match &config.output_dir {
        Some(d) => println!("output_dir = {}", d.display()),
        None => println!("output_dir = default"),
    }
    0
}

fn cmd_adjoint_check(problem: CheckProblem, grid: Option<usize>) -> u8 {
    let result = match problem {
        CheckProblem::Radon => radon_defect(grid.unwrap_or(60)),
        CheckProblem::Doping => doping_defect(grid.unwrap_or(17)),
    };
    let (max_defect, tol) = match result {
        Ok(pair) => pair,
        Err((message, code)) => {
            eprintln!("error: {message}");
            return code;
        }
    };
    let pass = max_defect <= tol;
    println!(
        "max relative adjoint defect = {max_defect:.3e} (tolerance {tol:.1e}) -> {}",
        if pass { "pass" } else { "fail" }
    );
    if pass {
        0
    } else {
        2
    }
}

fn radon_defect(grid: usize) -> Result<(f64, f64), (String, u8)> {
    let setup = RadonSetup {
        n_detectors: 5,
        rows: grid,
        cols: grid,
        refinement: 1,
        noise_rel: 0.0,
        ..Default::default()
    };
    let problem = build_radon_problem(&setup).map_err(|e| {
        let e = HarnessError::from(e);
        (e.to_string(), e.exit_code() as u8)
    })?;
    let x = ParameterVector::zeros(grid, grid, problem.grid.cell_weight())
        .map_err(|e| (e.to_string(), 2u8))?;
    let tol = 1e-10;
    let mut worst = 0.0f64;
    for (i, block) in problem.system.blocks().iter().enumerate() {
        let report = validate_adjoint(block, &x, 3, 7 + i as u64, tol)
            .map_err(|e| (e.to_string(), 2u8))?;
        worst = worst.max(report.max_relative_defect);
    }
    Ok((worst, tol))
}

fn doping_defect(grid: usize) -> Result<(f64, f64), (String, u8)> {
    let setup = DopingSetup {
        m: grid,
        noise_rel: 0.0,
        ..Default::default()
    };
    let problem = build_doping_problem(&setup).map_err(|e| {
        let e = HarnessError::from(e);
        (e.to_string(), e.exit_code() as u8)
    })?;
    let tol = 1e-8;
    let mut worst = 0.0f64;
    for (i, block) in problem.system.blocks().iter().enumerate() {
        let report = validate_adjoint(block, &problem.x0, 3, 7 + i as u64, tol)
            .map_err(|e| (e.to_string(), 2u8))?;
        worst = worst.max(report.max_relative_defect);
    }
    Ok((worst, tol))
}
