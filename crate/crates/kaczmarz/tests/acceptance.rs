//! End-to-end acceptance gate. Each test checks one numbered shipping
//! criterion at its stated tolerance and prints a single pass/fail line;
//! heavy benchmark runs are shared through lazy statics.

use std::time::Instant;

use once_cell::sync::Lazy;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use tempfile::TempDir;

use kaczmarz::doping::{
    build_doping_problem, doping_derivative, doping_forward, DopingSetup,
};
use kaczmarz::harness::{parse_config, run_experiment, stopping_residuals_strict, ExperimentOutcome};
use kaczmarz::operator::{estimate_operator_norm, validate_adjoint};
use kaczmarz::radon::{build_radon_problem, RadonSetup};
use kaczmarz::solver::{run, SolverConfig, Variant};
use kaczmarz::space::ParameterVector;
use kaczmarz::RelaxationFunction;

struct Timed {
    outcome: ExperimentOutcome,
    seconds: f64,
    _dir: TempDir,
}

fn timed_run(config_text: &str) -> Timed {
    let config = parse_config(config_text).expect("acceptance config must parse");
    let dir = TempDir::new().expect("temp dir");
    let started = Instant::now();
    let outcome = run_experiment(&config, Some(dir.path())).expect("experiment must run");
    Timed {
        outcome,
        seconds: started.elapsed().as_secs_f64(),
        _dir: dir,
    }
}

static RADON_LSDK: Lazy<Timed> = Lazy::new(|| timed_run("problem = radon\nvariant = lsdk\n"));
static RADON_LLK: Lazy<Timed> = Lazy::new(|| timed_run("problem = radon\nvariant = llk\n"));
static RADON_CGNE: Lazy<Timed> =
    Lazy::new(|| timed_run("problem = radon\nvariant = cgne\nmax_cycles = 30\n"));
static DOPING_LSDK: Lazy<Timed> = Lazy::new(|| timed_run("problem = doping\nvariant = lsdk\n"));
static DOPING_LLK: Lazy<Timed> = Lazy::new(|| timed_run("problem = doping\nvariant = llk\n"));
static DOPING_LK: Lazy<Timed> = Lazy::new(|| timed_run("problem = doping\nvariant = lk\n"));

fn report(n: usize, pass: bool, detail: &str) {
    println!("criterion {n}: {} — {detail}", if pass { "pass" } else { "fail" });
    assert!(pass, "criterion {n} failed — {detail}");
}

fn small_radon() -> (kaczmarz::radon::RadonProblem, ParameterVector) {
    let setup = RadonSetup {
        n_detectors: 5,
        rows: 60,
        cols: 60,
        refinement: 1,
        noise_rel: 0.0,
        ..Default::default()
    };
    let problem = build_radon_problem(&setup).unwrap();
    let x = ParameterVector::zeros(60, 60, problem.grid.cell_weight()).unwrap();
    (problem, x)
}

#[test]
fn criterion_01_adjoint_identities() {
    let (radon, x) = small_radon();
    let mut worst_radon = 0.0f64;
    for (i, block) in radon.system.blocks().iter().enumerate() {
        let r = validate_adjoint(block, &x, 5, 101 + i as u64, 1e-10).unwrap();
        worst_radon = worst_radon.max(r.max_relative_defect);
    }
    let doping = build_doping_problem(&DopingSetup {
        m: 17,
        noise_rel: 0.0,
        ..Default::default()
    })
    .unwrap();
    let mut worst_doping = 0.0f64;
    for (i, block) in doping.system.blocks().iter().enumerate() {
        let r = validate_adjoint(block, &doping.x0, 5, 201 + i as u64, 1e-8).unwrap();
        worst_doping = worst_doping.max(r.max_relative_defect);
    }
    report(
        1,
        worst_radon <= 1e-10 && worst_doping <= 1e-8,
        &format!("adjoint defects: tomography {worst_radon:.2e} (tol 1e-10), doping {worst_doping:.2e} (tol 1e-8)"),
    );
}

#[test]
fn criterion_02_operator_norm_bound() {
    let (radon, x) = small_radon();
    let mut worst = 0.0f64;
    for (i, block) in radon.system.blocks().iter().enumerate() {
        let sigma = estimate_operator_norm(block, &x, 80, 301 + i as u64).unwrap();
        worst = worst.max(sigma);
    }
    report(
        2,
        worst <= 1.05,
        &format!("largest power-iteration estimate of ||M_i|| is {worst:.4} (bound 1.05)"),
    );
}

#[test]
fn criterion_03_step_size_inequality() {
    let trace = RADON_LSDK.outcome.trace.as_ref().unwrap();
    let mut violations = 0usize;
    let mut worst_ratio = 0.0f64;
    let mut checked = 0usize;
    for s in &trace.steps {
        if !s.omega {
            continue;
        }
        let step_norm = s.step_norm.unwrap();
        let alpha_s2 = s.alpha * step_norm * step_norm;
        let bound = s.residual_norm * s.residual_norm * (1.0 + 2e-12);
        if alpha_s2 > bound {
            violations += 1;
        }
        if s.residual_norm > 0.0 {
            worst_ratio = worst_ratio.max(alpha_s2 / (s.residual_norm * s.residual_norm));
        }
        checked += 1;
    }
    report(
        3,
        violations == 0 && checked > 0,
        &format!("alpha*||s||^2 <= ||r||^2 held on all {checked} active steps (worst ratio {worst_ratio:.6})"),
    );
}

#[test]
fn criterion_04_alpha_floor() {
    // tomography: phi(1/M^2) = 0.4 for both default rules with M = 1
    let mut min_radon = f64::INFINITY;
    for timed in [&RADON_LSDK, &RADON_LLK] {
        for s in &timed.outcome.trace.as_ref().unwrap().steps {
            min_radon = min_radon.min(s.alpha);
        }
    }
    // doping: the floor depends on the norm bound estimated at build time
    let doping = build_doping_problem(&DopingSetup::default()).unwrap();
    let alpha_min = 1.0 / (doping.norm_bound * doping.norm_bound);
    let mut min_doping = f64::INFINITY;
    for s in &DOPING_LSDK.outcome.trace.as_ref().unwrap().steps {
        min_doping = min_doping.min(s.alpha);
    }
    report(
        4,
        min_radon >= 0.4 && min_doping >= alpha_min,
        &format!(
            "step sizes never fell below phi(1/M^2): tomography min {min_radon:.6} (floor 0.4), doping min {min_doping:.6} (floor {alpha_min:.6})"
        ),
    );
}

#[test]
fn criterion_05_monotone_error_on_consistent_data() {
    let timed = timed_run("problem = radon\nvariant = lsdk\ngrid = 60\nrefinement = 1\n");
    let trace = timed.outcome.trace.as_ref().unwrap();
    let mut errs: Vec<f64> = trace.steps.iter().filter_map(|s| s.error_rel).collect();
    errs.push(timed.outcome.summary.final_error_rel.unwrap());
    let slack = 1e-9 * errs[0];
    let mut worst = 0.0f64;
    for w in errs.windows(2) {
        worst = worst.max(w[1] - w[0]);
    }
    report(
        5,
        worst <= slack && errs.len() > 100,
        &format!(
            "error non-increasing over {} recorded steps; worst increase {worst:.2e} (slack {slack:.2e})",
            errs.len()
        ),
    );
}

#[test]
fn criterion_06_loping_stop_is_below_threshold() {
    let radon = stopping_residuals_strict(&RADON_LSDK.outcome);
    let doping = stopping_residuals_strict(&DOPING_LSDK.outcome);
    report(
        6,
        radon == Some(true) && doping == Some(true),
        &format!(
            "final sweeps sit strictly below tau*delta on both problems (tomography {radon:?}, doping {doping:?}; stop reasons {}, {})",
            RADON_LSDK.outcome.summary.stop_reason, DOPING_LSDK.outcome.summary.stop_reason
        ),
    );
}

#[test]
fn criterion_07_exact_data_summability() {
    let timed = timed_run(
        "problem = radon\nvariant = lsdk\ngrid = 40\nrefinement = 1\nnoise_rel = 0\nmax_cycles = 50\n",
    );
    let trace = timed.outcome.trace.as_ref().unwrap();
    let sum: f64 = trace
        .steps
        .iter()
        .filter(|s| s.omega)
        .map(|s| s.alpha * s.residual_norm * s.residual_norm)
        .sum();
    let d0 = timed.outcome.truth.norm();
    let bound = 1.01 * d0 * d0;
    report(
        7,
        sum <= bound,
        &format!("sum of alpha*||r||^2 over 50 exact-data cycles is {sum:.4} <= {bound:.4}"),
    );
}

#[test]
fn criterion_08_benchmark_quality() {
    let lsdk = &RADON_LSDK;
    let llk = &RADON_LLK;
    let cgne = &RADON_CGNE;
    let lsdk_err = lsdk.outcome.summary.final_error_rel.unwrap();
    let lsdk_cycles = lsdk.outcome.summary.cycles;
    let llk_err = llk.outcome.summary.final_error_rel.unwrap();
    let cgne_err = cgne.outcome.summary.final_error_rel.unwrap();
    let within_budget = lsdk.seconds < 180.0 && llk.seconds < 180.0 && cgne.seconds < 180.0;
    report(
        8,
        lsdk_err <= 0.25
            && lsdk_cycles <= 15
            && llk_err <= 0.25
            && (0.15..=0.30).contains(&cgne_err)
            && within_budget,
        &format!(
            "120x120 benchmark: lsdk err {lsdk_err:.4} in {lsdk_cycles} cycles ({:.1}s), llk err {llk_err:.4} ({:.1}s), cgne best err {cgne_err:.4} at cycle {:?} ({:.1}s)",
            lsdk.seconds,
            llk.seconds,
            cgne.outcome.summary.stop_cycle,
            cgne.seconds
        ),
    );
}

#[test]
fn criterion_09_doping_workload_ordering() {
    let lsdk = &DOPING_LSDK.outcome;
    let llk = &DOPING_LLK.outcome;
    let lk = &DOPING_LK.outcome;
    let cy_lsdk = lsdk.summary.stop_cycle.unwrap();
    let cy_llk = llk.summary.stop_cycle.unwrap();
    let lk_first = lk
        .trace
        .as_ref()
        .unwrap()
        .first_cycle_all_below(lk.tau, &lk.noise_levels)
        .unwrap();
    let cy_lk = lk_first - 1;
    let adj_lsdk = lsdk.summary.adjoint_evals;
    let adj_lk = lk_first * lk.n_blocks;
    let seconds = DOPING_LSDK.seconds + DOPING_LLK.seconds + DOPING_LK.seconds;
    report(
        9,
        cy_lsdk <= cy_llk && cy_llk <= cy_lk && (adj_lsdk as f64) < 0.5 * adj_lk as f64 && seconds < 300.0,
        &format!(
            "cycles lsdk {cy_lsdk} <= llk {cy_llk} <= lk-to-equal-residual {cy_lk}; adjoint solves lsdk {adj_lsdk} < half of lk {adj_lk} ({seconds:.1}s total)"
        ),
    );
}

#[test]
fn criterion_10_loping_ramps_down() {
    let trace = RADON_LSDK.outcome.trace.as_ref().unwrap();
    let updates = &trace.per_cycle_updates;
    let n = RADON_LSDK.outcome.n_blocks;
    let last = *updates.last().unwrap();
    let partial = updates[..updates.len() - 1]
        .iter()
        .any(|&u| u > 0 && u < n);
    report(
        10,
        last == 0 && partial,
        &format!("updates per cycle {updates:?} end at zero with partial cycles before"),
    );
}

#[test]
fn criterion_11_noise_level_ordering() {
    let median_err = |noise: &str| -> f64 {
        let mut errs: Vec<f64> = [0u64, 1, 2]
            .iter()
            .map(|seed| {
                let text = format!(
                    "problem = radon\nvariant = lsdk\ngrid = 60\nnoise_rel = {noise}\nseed = {seed}\n"
                );
                timed_run(&text).outcome.summary.final_error_rel.unwrap()
            })
            .collect();
        errs.sort_by(f64::total_cmp);
        errs[1]
    };
    let low = median_err("0.01");
    let high = median_err("0.08");
    report(
        11,
        low < high,
        &format!("median error over three seeds: {low:.4} at 1% noise < {high:.4} at 8% noise"),
    );
}

#[test]
fn criterion_12_constant_rule_reduces_to_classical_variant() {
    let setup = RadonSetup {
        n_detectors: 10,
        rows: 40,
        cols: 40,
        ..Default::default()
    };
    let problem = build_radon_problem(&setup).unwrap();
    let x0 = ParameterVector::zeros(40, 40, problem.grid.cell_weight()).unwrap();
    let base = SolverConfig {
        phi: RelaxationFunction::Constant(0.4),
        max_cycles: 300,
        ..SolverConfig::default()
    };
    let a = run(
        &problem.system,
        &SolverConfig {
            variant: Variant::Lsdk,
            ..base.clone()
        },
        &x0,
    )
    .unwrap();
    let b = run(
        &problem.system,
        &SolverConfig {
            variant: Variant::Llk,
            ..base
        },
        &x0,
    )
    .unwrap();
    let same_trace = a.trace == b.trace;
    let same_x = a.x_final.values() == b.x_final.values();
    report(
        12,
        same_trace && same_x,
        &format!(
            "lsdk with the constant rule reproduces llk bit for bit ({} steps, {} forward evals)",
            a.trace.steps.len(),
            a.trace.forward_evals
        ),
    );
}

#[test]
fn criterion_13_doping_derivative_matches_central_differences() {
    let problem = build_doping_problem(&DopingSetup {
        m: 17,
        noise_rel: 0.0,
        ..Default::default()
    })
    .unwrap();
    let x = problem.truth.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(40);
    let eps = 1e-5;
    let mut worst = 0.0f64;
    for j in 0..10 {
        let profile = &problem.profiles[j % problem.profiles.len()];
        let mut h = ParameterVector::from_fn(17, 17, x.cell_weight(), |_, _| {
            StandardNormal.sample(&mut rng)
        })
        .unwrap();
        h.scale(1.0 / h.norm());
        let mut plus = x.clone();
        plus.axpy(eps, &h).unwrap();
        let mut minus = x.clone();
        minus.axpy(-eps, &h).unwrap();
        let fd = (doping_forward(&plus, profile, &problem.grid).unwrap()
            - doping_forward(&minus, profile, &problem.grid).unwrap())
            / (2.0 * eps);
        let lin = doping_derivative(&x, &h, profile, &problem.grid).unwrap();
        let rel = (fd - lin).abs() / lin.abs().max(1e-12);
        worst = worst.max(rel);
    }
    report(
        13,
        worst <= 5e-4,
        &format!("worst relative central-difference defect over 10 directions is {worst:.2e} (tol 5e-4)"),
    );
}
