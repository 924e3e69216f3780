//! Matrix-free operator blocks and the assembled problem system.
//!
//! A block bundles the three callables the solver needs: the forward map,
//! its linearization, and the adjoint of the linearization, all taken with
//! respect to the weighted inner products of [`crate::space`]. Norm bounds
//! are fixed per block (from theory or from power iteration at the starting
//! guess) and are never re-estimated during a run.

use std::fmt;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use thiserror::Error;

use crate::space::{DataBlock, ParameterVector, SpaceError};

/// Errors raised by block evaluations.
#[derive(Debug, Error)]
pub enum BlockError {
    #[error(transparent)]
    Space(#[from] SpaceError),
    #[error("parameter outside the operator domain: {0}")]
    DomainViolation(String),
    #[error("linear solve failed: {0}")]
    SolveFailure(String),
}

/// Errors from the norm-estimation and adjoint-validation helpers.
#[derive(Debug, Error)]
pub enum OperatorError {
    #[error(transparent)]
    Block(#[from] BlockError),
    #[error("degenerate input: probe vector vanished at iteration {0}")]
    DegenerateInput(usize),
}

pub type ApplyFn = dyn Fn(&ParameterVector) -> Result<DataBlock, BlockError> + Send + Sync;
pub type DerivativeFn =
    dyn Fn(&ParameterVector, &ParameterVector) -> Result<DataBlock, BlockError> + Send + Sync;
pub type AdjointFn =
    dyn Fn(&ParameterVector, &DataBlock) -> Result<ParameterVector, BlockError> + Send + Sync;

/// One equation of the system: forward map, derivative, adjoint derivative,
/// a bound on the derivative's operator norm, and the tolerance to which the
/// adjoint pair is expected to agree.
pub struct OperatorBlock {
    apply: Arc<ApplyFn>,
    derivative: Arc<DerivativeFn>,
    adjoint: Arc<AdjointFn>,
    norm_bound: f64,
    is_linear: bool,
    adjoint_tol: f64,
}

impl OperatorBlock {
    /// Builds a nonlinear block from the three callables.
    pub fn nonlinear(
        apply: impl Fn(&ParameterVector) -> Result<DataBlock, BlockError> + Send + Sync + 'static,
        derivative: impl Fn(&ParameterVector, &ParameterVector) -> Result<DataBlock, BlockError>
            + Send
            + Sync
            + 'static,
        adjoint: impl Fn(&ParameterVector, &DataBlock) -> Result<ParameterVector, BlockError>
            + Send
            + Sync
            + 'static,
        norm_bound: f64,
        adjoint_tol: f64,
    ) -> Self {
        assert!(norm_bound > 0.0, "norm bound must be positive");
        Self {
            apply: Arc::new(apply),
            derivative: Arc::new(derivative),
            adjoint: Arc::new(adjoint),
            norm_bound,
            is_linear: false,
            adjoint_tol,
        }
    }

    /// Builds a linear block; the derivative is the map itself and the
    /// adjoint does not depend on the linearization point.
    pub fn linear(
        apply: impl Fn(&ParameterVector) -> Result<DataBlock, BlockError> + Send + Sync + 'static,
        adjoint: impl Fn(&DataBlock) -> Result<ParameterVector, BlockError> + Send + Sync + 'static,
        norm_bound: f64,
        adjoint_tol: f64,
    ) -> Self {
        assert!(norm_bound > 0.0, "norm bound must be positive");
        let apply: Arc<ApplyFn> = Arc::new(apply);
        let fwd = Arc::clone(&apply);
        Self {
            apply,
            derivative: Arc::new(move |_x, h| fwd(h)),
            adjoint: Arc::new(move |_x, r| adjoint(r)),
            norm_bound,
            is_linear: true,
            adjoint_tol,
        }
    }

    pub fn apply(&self, x: &ParameterVector) -> Result<DataBlock, BlockError> {
        (self.apply)(x)
    }

    pub fn derivative_apply(
        &self,
        x: &ParameterVector,
        h: &ParameterVector,
    ) -> Result<DataBlock, BlockError> {
        (self.derivative)(x, h)
    }

    pub fn adjoint_derivative_apply(
        &self,
        x: &ParameterVector,
        r: &DataBlock,
    ) -> Result<ParameterVector, BlockError> {
        (self.adjoint)(x, r)
    }

    pub fn norm_bound(&self) -> f64 {
        self.norm_bound
    }

    pub fn is_linear(&self) -> bool {
        self.is_linear
    }

    pub fn adjoint_tol(&self) -> f64 {
        self.adjoint_tol
    }
}

impl fmt::Debug for OperatorBlock {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("OperatorBlock")
            .field("norm_bound", &self.norm_bound)
            .field("is_linear", &self.is_linear)
            .field("adjoint_tol", &self.adjoint_tol)
            .finish()
    }
}

/// The full system of equations together with the measured data, the
/// per-block noise levels, and (when known) the exact solution used for
/// error tracking.
#[derive(Debug)]
pub struct ProblemSystem {
    blocks: Vec<OperatorBlock>,
    noisy_data: Vec<DataBlock>,
    noise_levels: Vec<f64>,
    exact_solution: Option<ParameterVector>,
}

impl ProblemSystem {
    pub fn new(
        blocks: Vec<OperatorBlock>,
        noisy_data: Vec<DataBlock>,
        noise_levels: Vec<f64>,
        exact_solution: Option<ParameterVector>,
    ) -> Result<Self, SpaceError> {
        if blocks.is_empty() {
            return Err(SpaceError::LengthMismatch { left: 0, right: 1 });
        }
        if blocks.len() != noisy_data.len() {
            return Err(SpaceError::LengthMismatch {
                left: blocks.len(),
                right: noisy_data.len(),
            });
        }
        if blocks.len() != noise_levels.len() {
            return Err(SpaceError::LengthMismatch {
                left: blocks.len(),
                right: noise_levels.len(),
            });
        }
        for (i, d) in noise_levels.iter().enumerate() {
            if !d.is_finite() || *d < 0.0 {
                return Err(SpaceError::BadQuadratureWeight { index: i, value: *d });
            }
        }
        Ok(Self {
            blocks,
            noisy_data,
            noise_levels,
            exact_solution,
        })
    }

    pub fn len(&self) -> usize {
        self.blocks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }

    pub fn blocks(&self) -> &[OperatorBlock] {
        &self.blocks
    }

    pub fn noisy_data(&self) -> &[DataBlock] {
        &self.noisy_data
    }

    pub fn noise_levels(&self) -> &[f64] {
        &self.noise_levels
    }

    pub fn exact_solution(&self) -> Option<&ParameterVector> {
        self.exact_solution.as_ref()
    }

    /// True when at least one block has noise level zero; such systems run
    /// in the exact-data regime.
    pub fn has_exact_block(&self) -> bool {
        self.noise_levels.iter().any(|d| *d == 0.0)
    }
}

pub(crate) fn random_parameter(rng: &mut ChaCha8Rng, template: &ParameterVector) -> ParameterVector {
    let values = (0..template.len())
        .map(|_| StandardNormal.sample(rng))
        .collect();
    ParameterVector::new_unchecked(
        values,
        template.rows(),
        template.cols(),
        template.cell_weight(),
    )
}

pub(crate) fn random_data(rng: &mut ChaCha8Rng, template: &DataBlock) -> DataBlock {
    let values = (0..template.len())
        .map(|_| StandardNormal.sample(rng))
        .collect();
    DataBlock::new_unchecked(values, template.weights().to_vec())
}

/// Estimates `||F'(x)||` by power iteration on `F'(x)* F'(x)`, starting from
/// a seeded Gaussian vector. The returned value is the Rayleigh estimate
/// `||F'(x) v|| / ||v||` after the requested number of iterations; it
/// approaches the true norm from below as the iteration count grows.
pub fn estimate_operator_norm(
    block: &OperatorBlock,
    x: &ParameterVector,
    iterations: usize,
    seed: u64,
) -> Result<f64, OperatorError> {
    assert!(iterations >= 1, "at least one iteration is required");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut v = random_parameter(&mut rng, x);
    let nv = v.norm();
    if nv == 0.0 {
        return Err(OperatorError::DegenerateInput(0));
    }
    v.scale(1.0 / nv);
    let mut sigma = 0.0;
    for it in 1..=iterations {
        let w = block.derivative_apply(x, &v)?;
        sigma = w.norm();
        if it == iterations {
            break;
        }
        let mut u = block.adjoint_derivative_apply(x, &w)?;
        let nu = u.norm();
        if nu == 0.0 {
            return Err(OperatorError::DegenerateInput(it));
        }
        u.scale(1.0 / nu);
        v = u;
    }
    Ok(sigma)
}

/// Result of an adjoint consistency check.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdjointReport {
    pub max_relative_defect: f64,
    pub trials: usize,
    pub pass: bool,
}

/// Draws `trials` seeded Gaussian probe pairs `(h, r)` and compares
/// `<F'(x) h, r>` against `<h, F'(x)* r>` in the weighted inner products.
/// The defect is relative to the magnitude of the pairing itself.
pub fn validate_adjoint(
    block: &OperatorBlock,
    x: &ParameterVector,
    trials: usize,
    seed: u64,
    tol: f64,
) -> Result<AdjointReport, OperatorError> {
    assert!(trials >= 1, "at least one trial is required");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data_template = block.apply(x)?;
    let mut max_defect: f64 = 0.0;
    for _ in 0..trials {
        let h = random_parameter(&mut rng, x);
        let r = random_data(&mut rng, &data_template);
        let lhs = block.derivative_apply(x, &h)?.inner(&r).map_err(BlockError::from)?;
        let rhs = h
            .inner(&block.adjoint_derivative_apply(x, &r)?)
            .map_err(BlockError::from)?;
        let defect = (lhs - rhs).abs() / (lhs.abs() + f64::EPSILON);
        max_defect = max_defect.max(defect);
    }
    Ok(AdjointReport {
        max_relative_defect: max_defect,
        trials,
        pass: max_defect <= tol,
    })
}

/// Identity block between matching weighted spaces; useful for tests and as
/// the simplest example of a correctly paired forward/adjoint.
pub fn identity_block(rows: usize, cols: usize, cell_weight: f64) -> OperatorBlock {
    let fwd = move |x: &ParameterVector| {
        Ok(DataBlock::new_unchecked(
            x.values().to_vec(),
            vec![cell_weight; rows * cols],
        ))
    };
    let adj = move |r: &DataBlock| {
        Ok(ParameterVector::new_unchecked(
            r.values().to_vec(),
            rows,
            cols,
            cell_weight,
        ))
    };
    OperatorBlock::linear(fwd, adj, 1.0, 1e-14)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_block(factor: f64) -> OperatorBlock {
        OperatorBlock::linear(
            move |x: &ParameterVector| Ok(DataBlock::new_unchecked(vec![factor * x.values()[0]], vec![1.0])),
            move |r: &DataBlock| {
                Ok(ParameterVector::new_unchecked(vec![factor * r.values()[0]], 1, 1, 1.0))
            },
            factor.abs(),
            1e-14,
        )
    }

    #[test]
    fn power_iteration_on_the_identity_returns_one() {
        let block = identity_block(3, 3, 0.5);
        let x = ParameterVector::zeros(3, 3, 0.5).unwrap();
        let est = estimate_operator_norm(&block, &x, 1, 42).unwrap();
        assert!((est - 1.0).abs() <= 1e-10, "estimate {est}");
    }

    #[test]
    fn power_iteration_on_a_scalar_map_returns_the_factor() {
        let block = scalar_block(3.0);
        let x = ParameterVector::zeros(1, 1, 1.0).unwrap();
        let est = estimate_operator_norm(&block, &x, 5, 7).unwrap();
        assert!((est - 3.0).abs() <= 1e-10, "estimate {est}");
    }

    #[test]
    fn adjoint_validation_passes_for_the_identity() {
        let block = identity_block(4, 4, 0.25);
        let x = ParameterVector::zeros(4, 4, 0.25).unwrap();
        let report = validate_adjoint(&block, &x, 20, 3, 1e-14).unwrap();
        assert!(report.pass, "defect {}", report.max_relative_defect);
    }

    #[test]
    fn adjoint_validation_flags_a_wrong_adjoint() {
        let block = OperatorBlock::linear(
            |x: &ParameterVector| Ok(DataBlock::new_unchecked(vec![2.0 * x.values()[0]], vec![1.0])),
            // deliberately inconsistent: transpose of 3x, not of 2x
            |r: &DataBlock| Ok(ParameterVector::new_unchecked(vec![3.0 * r.values()[0]], 1, 1, 1.0)),
            3.0,
            1e-12,
        );
        let x = ParameterVector::zeros(1, 1, 1.0).unwrap();
        let report = validate_adjoint(&block, &x, 5, 11, 1e-12).unwrap();
        assert!(!report.pass);
        assert!(report.max_relative_defect > 0.1);
    }

    #[test]
    fn system_construction_validates_lengths_and_levels() {
        let blocks = vec![identity_block(2, 2, 1.0)];
        let data = vec![DataBlock::new(vec![0.0; 4], vec![1.0; 4]).unwrap()];
        assert!(ProblemSystem::new(blocks, data.clone(), vec![0.1, 0.2], None).is_err());
        let blocks = vec![identity_block(2, 2, 1.0)];
        assert!(ProblemSystem::new(blocks, data.clone(), vec![-0.1], None).is_err());
        let blocks = vec![identity_block(2, 2, 1.0)];
        let sys = ProblemSystem::new(blocks, data, vec![0.0], None).unwrap();
        assert!(sys.has_exact_block());
    }
}
