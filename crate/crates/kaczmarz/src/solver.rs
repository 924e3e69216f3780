//! Cyclic steepest-descent and Landweber iterations with loping.
//!
//! The solver sweeps the equations of a [`ProblemSystem`] cyclically. For
//! equation `i = k mod N` at iterate `x_k` it forms the residual
//! `F_i(x_k) - y_i`, decides whether the step is performed at all (the
//! loping weight `omega_k` is 1 exactly when the residual norm is at least
//! `tau * delta_i`), and on active steps moves along the adjoint direction
//! `s_k = F_i'(x_k)* (F_i(x_k) - y_i)` with a relaxation parameter chosen by
//! the configured [`RelaxationFunction`] from the curvature ratio
//! `||s_k||^2 / ||F_i'(x_k) s_k||^2`.
//!
//! With noisy data the iteration stops at the first cycle in which every
//! step loped; the iterate is then unchanged over the whole cycle and every
//! residual is strictly below its threshold. With exact data (or for the
//! non-loping variants) all steps are active and the iteration stops on a
//! small residual or after `max_cycles`.

use thiserror::Error;

use crate::operator::{BlockError, OperatorBlock, ProblemSystem};
use crate::relax::{RelaxationError, RelaxationFunction};
use crate::space::{DataBlock, ParameterVector, SpaceError};

#[derive(Debug, Error)]
pub enum SolverError {
    #[error("invalid solver configuration: {0}")]
    InvalidConfig(String),
    #[error("invalid relaxation function: {0}")]
    Relaxation(#[from] RelaxationError),
    #[error(transparent)]
    Space(#[from] SpaceError),
    #[error("block evaluation failed at step {k}: {source}")]
    Block {
        k: usize,
        #[source]
        source: BlockError,
    },
    #[error("degenerate step at k = {k}: ||s|| = {step_norm} below {eps} while the residual norm is {residual_norm}")]
    DegenerateStep {
        k: usize,
        residual_norm: f64,
        step_norm: f64,
        eps: f64,
    },
    #[error("degenerate curvature at k = {k}: the derivative annihilates a nonzero direction")]
    DegenerateCurvature { k: usize },
    #[error("step-size estimate violated at k = {k}: alpha * ||s||^2 = {lhs} exceeds residual^2 = {rhs}")]
    StepSizeEstimate { k: usize, lhs: f64, rhs: f64 },
    #[error("iterate diverged (non-finite entries) at step {k}")]
    Divergence { k: usize },
    #[error("unsupported variant: {0}")]
    UnsupportedVariant(String),
}

/// The four Kaczmarz-type variants: with or without loping, with a
/// steepest-descent or a constant relaxation parameter.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Variant {
    /// Loping steepest-descent-Kaczmarz.
    Lsdk,
    /// Steepest-descent-Kaczmarz (every step active).
    Sdk,
    /// Loping Landweber-Kaczmarz (constant relaxation).
    Llk,
    /// Landweber-Kaczmarz (every step active, constant relaxation).
    Lk,
}

impl Variant {
    pub fn lopes(self) -> bool {
        matches!(self, Variant::Lsdk | Variant::Llk)
    }

    pub fn requires_constant_phi(self) -> bool {
        matches!(self, Variant::Llk | Variant::Lk)
    }

    pub fn name(self) -> &'static str {
        match self {
            Variant::Lsdk => "lsdk",
            Variant::Sdk => "sdk",
            Variant::Llk => "llk",
            Variant::Lk => "lk",
        }
    }
}

/// Run parameters. `alpha_min` is not stored: it is always derived as
/// `phi(1/M^2)` from the norm bound `M`.
#[derive(Debug, Clone)]
pub struct SolverConfig {
    pub variant: Variant,
    pub tau: f64,
    pub eta: f64,
    pub norm_bound: f64,
    pub phi: RelaxationFunction,
    pub max_cycles: usize,
    /// Residual tolerance for exact-data runs; `None` resolves to
    /// `1e-8 * (largest initial residual norm)`.
    pub exact_data_residual_tol: Option<f64>,
    /// Optional box constraints applied after every update.
    pub clamp_bounds: Option<(f64, f64)>,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            variant: Variant::Lsdk,
            tau: 2.0,
            eta: 0.0,
            norm_bound: 1.0,
            phi: RelaxationFunction::ClampedLinear { scale: 0.4, cap: 2.0 },
            max_cycles: 1000,
            exact_data_residual_tol: None,
            clamp_bounds: None,
        }
    }
}

impl SolverConfig {
    /// The guaranteed lower bound for the relaxation parameter of active
    /// steps, `phi(1/M^2)`.
    pub fn alpha_min(&self) -> f64 {
        self.phi.evaluate(1.0 / (self.norm_bound * self.norm_bound))
    }

    pub fn validate(&self) -> Result<(), SolverError> {
        if !(self.eta >= 0.0 && self.eta < 0.5) {
            return Err(SolverError::InvalidConfig(format!(
                "eta must lie in [0, 1/2), got {}",
                self.eta
            )));
        }
        let tau_floor = 2.0 * (1.0 + self.eta) / (1.0 - 2.0 * self.eta);
        if !(self.tau >= tau_floor) {
            return Err(SolverError::InvalidConfig(format!(
                "tau = {} violates tau >= 2(1+eta)/(1-2eta) = {}",
                self.tau, tau_floor
            )));
        }
        if !self.norm_bound.is_finite() || self.norm_bound <= 0.0 {
            return Err(SolverError::InvalidConfig(format!(
                "norm bound must be positive and finite, got {}",
                self.norm_bound
            )));
        }
        self.phi.validate_for_bound(self.norm_bound)?;
        if self.variant.requires_constant_phi() && !self.phi.is_constant() {
            return Err(SolverError::InvalidConfig(format!(
                "variant {} requires a constant relaxation function",
                self.variant.name()
            )));
        }
        if self.max_cycles == 0 {
            return Err(SolverError::InvalidConfig("max_cycles must be at least 1".into()));
        }
        if let Some(tol) = self.exact_data_residual_tol {
            if !tol.is_finite() || tol < 0.0 {
                return Err(SolverError::InvalidConfig(format!(
                    "exact-data residual tolerance must be finite and >= 0, got {tol}"
                )));
            }
        }
        if let Some((lo, hi)) = self.clamp_bounds {
            if !lo.is_finite() || !hi.is_finite() || lo >= hi {
                return Err(SolverError::InvalidConfig(format!(
                    "clamp bounds must be finite with lo < hi, got [{lo}, {hi}]"
                )));
            }
        }
        Ok(())
    }
}

/// The loping weight: 1 when the residual is at or above `tau * delta_i`,
/// 0 otherwise. With `delta_i = 0` every step is active.
///
/// ```
/// use kaczmarz::loping_weight;
///
/// assert!(loping_weight(0.5, 2.0, 0.1));
/// assert!(!loping_weight(0.1, 2.0, 0.1));
/// assert!(loping_weight(0.0, 2.0, 0.0));
/// ```
pub fn loping_weight(residual_norm: f64, tau: f64, delta_i: f64) -> bool {
    residual_norm >= tau * delta_i
}

/// Relaxation parameter for one step: `phi(curvature_ratio)` on active
/// steps (never below `alpha_min`), `alpha_min` on loped steps.
pub fn relaxation_alpha(
    phi: &RelaxationFunction,
    curvature_ratio: f64,
    omega: bool,
    alpha_min: f64,
) -> f64 {
    if omega {
        phi.evaluate(curvature_ratio).max(alpha_min)
    } else {
        alpha_min
    }
}

/// Everything computed for one prospective step on one block.
#[derive(Debug, Clone)]
pub struct StepQuantities {
    pub residual: DataBlock,
    pub residual_norm: f64,
    pub direction: ParameterVector,
    pub curvature_ratio: f64,
}

/// Evaluates residual, adjoint direction `s = F'(x)*(F(x) - y)` and the
/// curvature ratio `||s||^2 / ||F'(x) s||^2` for one block.
///
/// `degeneracy_eps` is the threshold below which `||s||` counts as
/// degenerate; `None` resolves to `1e-14 * residual_norm * M`.
pub fn compute_step(
    block: &OperatorBlock,
    x: &ParameterVector,
    y_delta: &DataBlock,
    degeneracy_eps: Option<f64>,
) -> Result<StepQuantities, SolverError> {
    let at = |source| SolverError::Block { k: 0, source };
    let predicted = block.apply(x).map_err(at)?;
    let residual = predicted.sub(y_delta)?;
    let residual_norm = residual.norm();
    let direction = block.adjoint_derivative_apply(x, &residual).map_err(at)?;
    let s_norm2 = direction.inner(&direction)?;
    let s_norm = s_norm2.sqrt();
    let eps = degeneracy_eps.unwrap_or(1e-14 * residual_norm * block.norm_bound());
    if s_norm < eps || s_norm == 0.0 {
        return Err(SolverError::DegenerateStep {
            k: 0,
            residual_norm,
            step_norm: s_norm,
            eps,
        });
    }
    let fs = block.derivative_apply(x, &direction).map_err(at)?;
    let fs_norm2 = fs.inner(&fs)?;
    if fs_norm2 == 0.0 {
        return Err(SolverError::DegenerateCurvature { k: 0 });
    }
    Ok(StepQuantities {
        residual,
        residual_norm,
        direction,
        curvature_ratio: s_norm2 / fs_norm2,
    })
}

/// One row of the iteration trace.
#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub k: usize,
    pub op_index: usize,
    pub omega: bool,
    pub alpha: f64,
    pub residual_norm: f64,
    /// `||s_k||`; absent on loped steps, where the direction is never formed.
    pub step_norm: Option<f64>,
    /// `||x_k - x_exact|| / ||x_exact||` at the start of the step, when the
    /// exact solution is known.
    pub error_rel: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopReason {
    /// A full cycle performed no update; the loping stopping rule fired.
    AllLoped,
    /// The cycle budget was exhausted (reported, not an error).
    MaxCycles,
    /// Exact-data regime: every residual in the final cycle was at or below
    /// the residual tolerance.
    ExactDataTol,
    /// Reserved for drivers that map degenerate-step errors into a trace.
    Degenerate,
}

impl StopReason {
    pub fn name(self) -> &'static str {
        match self {
            StopReason::AllLoped => "all_loped",
            StopReason::MaxCycles => "max_cycles",
            StopReason::ExactDataTol => "exact_data_tol",
            StopReason::Degenerate => "degenerate",
        }
    }
}

/// Complete record of a run.
#[derive(Debug, Clone, PartialEq)]
pub struct IterationTrace {
    pub steps: Vec<StepRecord>,
    /// Number of performed (omega = 1) steps in each executed cycle.
    pub per_cycle_updates: Vec<usize>,
    /// Forward-direction evaluations: applications of `F` and of `F'`.
    pub forward_evals: usize,
    /// Adjoint evaluations; equals the number of omega = 1 steps.
    pub adjoint_evals: usize,
    /// The stopping index `k*`: the start of the all-loped cycle, or the
    /// total step count for a tolerance stop. `None` when the cycle budget
    /// ran out before any stopping rule fired.
    pub stop_index: Option<usize>,
    pub stop_reason: StopReason,
}

impl IterationTrace {
    pub fn cycles(&self) -> usize {
        self.per_cycle_updates.len()
    }

    pub fn total_updates(&self) -> usize {
        self.per_cycle_updates.iter().sum()
    }

    /// First cycle (1-based count of executed cycles) whose steps all had
    /// residuals strictly below `tau * delta_i`; the cycle at which a loping
    /// run would have stopped.
    pub fn first_cycle_all_below(&self, tau: f64, noise_levels: &[f64]) -> Option<usize> {
        let n = noise_levels.len();
        if n == 0 {
            return None;
        }
        'cycles: for (cycle, chunk) in self.steps.chunks(n).enumerate() {
            if chunk.len() < n {
                break;
            }
            for step in chunk {
                if step.residual_norm >= tau * noise_levels[step.op_index] {
                    continue 'cycles;
                }
            }
            return Some(cycle + 1);
        }
        None
    }
}

/// Result of a run: the final iterate and the full trace.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub x_final: ParameterVector,
    pub trace: IterationTrace,
}

/// Runs the configured variant on the system from `x0`.
///
/// Loping is in effect only for the loping variants and only when every
/// block has a positive noise level; otherwise every step is active and the
/// run stops on the exact-data residual tolerance or on `max_cycles`.
pub fn run(
    system: &ProblemSystem,
    config: &SolverConfig,
    x0: &ParameterVector,
) -> Result<RunOutput, SolverError> {
    config.validate()?;
    let n = system.len();
    let alpha_min = config.alpha_min();
    let lope = config.variant.lopes() && !system.has_exact_block();

    let truth = system.exact_solution();
    let truth_norm = truth.map(|t| t.norm()).unwrap_or(0.0);
    let track_error = truth.is_some() && truth_norm > 0.0;

    let mut x = x0.clone();
    let mut steps: Vec<StepRecord> = Vec::new();
    let mut per_cycle_updates: Vec<usize> = Vec::new();
    let mut forward_evals = 0usize;
    let mut adjoint_evals = 0usize;

    let residual_tol = if lope {
        None
    } else {
        Some(match config.exact_data_residual_tol {
            Some(tol) => tol,
            None => {
                let mut max_rn = 0.0f64;
                for (i, block) in system.blocks().iter().enumerate() {
                    let predicted = block
                        .apply(&x)
                        .map_err(|source| SolverError::Block { k: 0, source })?;
                    forward_evals += 1;
                    max_rn = max_rn.max(predicted.diff_norm(&system.noisy_data()[i])?);
                }
                1e-8 * max_rn
            }
        })
    };

    let mut stop_reason = StopReason::MaxCycles;
    let mut stop_index = None;

    for cycle in 0..config.max_cycles {
        let mut updates = 0usize;
        let mut cycle_max_rn = 0.0f64;
        for i in 0..n {
            let k = cycle * n + i;
            let block = &system.blocks()[i];
            let error_rel = if track_error {
                Some(x.diff_norm(truth.unwrap())? / truth_norm)
            } else {
                None
            };

            let predicted = block
                .apply(&x)
                .map_err(|source| SolverError::Block { k, source })?;
            forward_evals += 1;
            let residual = predicted.sub(&system.noisy_data()[i])?;
            let rn = residual.norm();
            cycle_max_rn = cycle_max_rn.max(rn);

            let omega = if lope {
                loping_weight(rn, config.tau, system.noise_levels()[i])
            } else {
                true
            };

            let (alpha, step_norm) = if omega {
                updates += 1;
                let s = block
                    .adjoint_derivative_apply(&x, &residual)
                    .map_err(|source| SolverError::Block { k, source })?;
                adjoint_evals += 1;
                let s_norm2 = s.inner(&s)?;
                let s_norm = s_norm2.sqrt();
                if s_norm == 0.0 && rn == 0.0 {
                    // the block is already solved exactly; nothing to move
                    (alpha_min, Some(0.0))
                } else {
                    let eps = 1e-14 * rn * config.norm_bound;
                    if s_norm < eps || s_norm == 0.0 {
                        return Err(SolverError::DegenerateStep {
                            k,
                            residual_norm: rn,
                            step_norm: s_norm,
                            eps,
                        });
                    }
                    let alpha = if config.phi.is_constant() {
                        alpha_min
                    } else {
                        let fs = block
                            .derivative_apply(&x, &s)
                            .map_err(|source| SolverError::Block { k, source })?;
                        forward_evals += 1;
                        let fs_norm2 = fs.inner(&fs)?;
                        if fs_norm2 == 0.0 {
                            return Err(SolverError::DegenerateCurvature { k });
                        }
                        relaxation_alpha(&config.phi, s_norm2 / fs_norm2, true, alpha_min)
                    };
                    if alpha * s_norm2 > rn * rn * (1.0 + 1e-12) {
                        return Err(SolverError::StepSizeEstimate {
                            k,
                            lhs: alpha * s_norm2,
                            rhs: rn * rn,
                        });
                    }
                    debug_assert!(alpha >= alpha_min);
                    x.axpy(-alpha, &s)?;
                    if let Some((lo, hi)) = config.clamp_bounds {
                        x.clamp_values(lo, hi);
                    }
                    if !x.is_finite() {
                        return Err(SolverError::Divergence { k });
                    }
                    (alpha, Some(s_norm))
                }
            } else {
                (alpha_min, None)
            };

            steps.push(StepRecord {
                k,
                op_index: i,
                omega,
                alpha,
                residual_norm: rn,
                step_norm,
                error_rel,
            });
        }
        per_cycle_updates.push(updates);

        if lope {
            if updates == 0 {
                stop_reason = StopReason::AllLoped;
                stop_index = Some(cycle * n);
                break;
            }
        } else if let Some(tol) = residual_tol {
            if cycle_max_rn <= tol {
                stop_reason = StopReason::ExactDataTol;
                stop_index = Some((cycle + 1) * n);
                break;
            }
        }
    }

    Ok(RunOutput {
        x_final: x,
        trace: IterationTrace {
            steps,
            per_cycle_updates,
            forward_evals,
            adjoint_evals,
            stop_index,
            stop_reason,
        },
    })
}
