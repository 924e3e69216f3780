//! Conjugate-gradient baseline on the normal equations.
//!
//! The system's blocks are stacked into a single linear operator
//! `F = (F_0, ..., F_{N-1})` between the weighted parameter space and the
//! product of the weighted data spaces, and CGLS is applied to
//! `F* F x = F* y`. One CG step touches every block once forward and once
//! adjoint, so it is the natural unit to compare against one Kaczmarz cycle.

use crate::operator::ProblemSystem;
use crate::solver::SolverError;
use crate::space::{DataBlock, ParameterVector};

/// State after one CG step.
#[derive(Debug, Clone, PartialEq)]
pub struct CgneCycleRecord {
    /// 1-based CG step count.
    pub cycle: usize,
    /// CG step length along the conjugate direction.
    pub alpha: f64,
    /// Norm of the conjugate direction `p` the step moved along.
    pub direction_norm: f64,
    /// Residual norms `||F_i x - y_i||` per block after the update.
    pub residual_norms: Vec<f64>,
    /// Relative error after the update, when the exact solution is known.
    pub error_rel: Option<f64>,
}

/// Minimum-error iterate over the recorded cycles.
#[derive(Debug, Clone, PartialEq)]
pub struct CgneBest {
    pub cycle: usize,
    pub error_rel: f64,
}

#[derive(Debug, Clone)]
pub struct CgneOutput {
    pub x_final: ParameterVector,
    /// Relative error after each CG step; empty when the exact solution is
    /// unknown.
    pub per_cycle_error: Vec<f64>,
    pub records: Vec<CgneCycleRecord>,
    /// Minimum-error cycle and the iterate there, when the exact solution is
    /// known.
    pub best: Option<CgneBest>,
    pub x_best: Option<ParameterVector>,
    pub forward_evals: usize,
    pub adjoint_evals: usize,
}

fn stacked_forward(
    system: &ProblemSystem,
    x: &ParameterVector,
    k: usize,
) -> Result<Vec<DataBlock>, SolverError> {
    system
        .blocks()
        .iter()
        .map(|b| b.apply(x))
        .collect::<Result<Vec<_>, _>>()
        .map_err(|source| SolverError::Block { k, source })
}

fn stacked_adjoint(
    system: &ProblemSystem,
    x0: &ParameterVector,
    r: &[DataBlock],
    k: usize,
) -> Result<ParameterVector, SolverError> {
    let mut s: Option<ParameterVector> = None;
    for (block, ri) in system.blocks().iter().zip(r) {
        let si = block
            .adjoint_derivative_apply(x0, ri)
            .map_err(|source| SolverError::Block { k, source })?;
        match &mut s {
            None => s = Some(si),
            Some(acc) => acc.axpy(1.0, &si)?,
        }
    }
    Ok(s.expect("system has at least one block"))
}

/// Runs `cycles` CG steps on the normal equations from `x0`.
///
/// All blocks must be linear. The iteration breaks off early when the
/// normal residual or the conjugate direction vanishes (the least-squares
/// solution has been reached).
pub fn cgne_run(
    system: &ProblemSystem,
    x0: &ParameterVector,
    cycles: usize,
) -> Result<CgneOutput, SolverError> {
    if cycles == 0 {
        return Err(SolverError::InvalidConfig("cgne needs at least one cycle".into()));
    }
    if let Some(i) = system.blocks().iter().position(|b| !b.is_linear()) {
        return Err(SolverError::UnsupportedVariant(format!(
            "cgne requires linear blocks, block {i} is nonlinear"
        )));
    }
    let n = system.len();
    let truth = system.exact_solution();
    let truth_norm = truth.map(|t| t.norm()).unwrap_or(0.0);
    let track_error = truth.is_some() && truth_norm > 0.0;

    let mut forward_evals = 0usize;
    let mut adjoint_evals = 0usize;

    let mut x = x0.clone();
    // r = y - F x
    let fx = stacked_forward(system, &x, 0)?;
    forward_evals += n;
    let mut r: Vec<DataBlock> = system
        .noisy_data()
        .iter()
        .zip(&fx)
        .map(|(y, p)| y.sub(p))
        .collect::<Result<_, _>>()?;
    let mut s = stacked_adjoint(system, &x, &r, 0)?;
    adjoint_evals += n;
    let mut gamma = s.inner(&s)?;
    let mut p = s.clone();

    let mut records = Vec::with_capacity(cycles);
    let mut per_cycle_error = Vec::new();
    let mut best: Option<CgneBest> = None;
    let mut x_best: Option<ParameterVector> = None;

    for cycle in 1..=cycles {
        if gamma == 0.0 {
            break;
        }
        let q = stacked_forward(system, &p, cycle * n)?;
        forward_evals += n;
        let qq: f64 = {
            let mut acc = 0.0;
            for qi in &q {
                acc += qi.inner(qi)?;
            }
            acc
        };
        if qq == 0.0 {
            break;
        }
        let alpha = gamma / qq;
        let direction_norm = p.norm();
        x.axpy(alpha, &p)?;
        if !x.is_finite() {
            return Err(SolverError::Divergence { k: cycle * n });
        }
        for (ri, qi) in r.iter_mut().zip(&q) {
            ri.axpy(-alpha, qi)?;
        }
        s = stacked_adjoint(system, &x, &r, cycle * n)?;
        adjoint_evals += n;
        let gamma_next = s.inner(&s)?;

        let residual_norms: Vec<f64> = r.iter().map(|ri| ri.norm()).collect();
        let error_rel = if track_error {
            let e = x.diff_norm(truth.unwrap())? / truth_norm;
            per_cycle_error.push(e);
            Some(e)
        } else {
            None
        };
        if let Some(e) = error_rel {
            if best.as_ref().map_or(true, |b| e < b.error_rel) {
                best = Some(CgneBest { cycle, error_rel: e });
                x_best = Some(x.clone());
            }
        }
        records.push(CgneCycleRecord {
            cycle,
            alpha,
            direction_norm,
            residual_norms,
            error_rel,
        });

        if gamma_next == 0.0 {
            break;
        }
        let beta = gamma_next / gamma;
        gamma = gamma_next;
        p.scale(beta);
        p.axpy(1.0, &s)?;
    }

    Ok(CgneOutput {
        x_final: x,
        per_cycle_error,
        records,
        best,
        x_best,
        forward_evals,
        adjoint_evals,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::operator::identity_block;
    use crate::space::DataBlock;

    #[test]
    fn identity_system_is_recovered_in_one_step() {
        let block = identity_block(2, 2, 1.0);
        let target = vec![1.0, -2.0, 3.0, 0.5];
        let y = DataBlock::new(target.clone(), vec![1.0; 4]).unwrap();
        let truth = ParameterVector::new(target.clone(), 2, 2, 1.0).unwrap();
        let system = ProblemSystem::new(vec![block], vec![y], vec![0.0], Some(truth)).unwrap();
        let x0 = ParameterVector::zeros(2, 2, 1.0).unwrap();
        let out = cgne_run(&system, &x0, 3).unwrap();
        for (a, b) in out.x_final.values().iter().zip(&target) {
            assert!((a - b).abs() <= 1e-12);
        }
        assert!(out.per_cycle_error[0] <= 1e-12);
        assert_eq!(out.best.as_ref().unwrap().cycle, 1);
    }

    #[test]
    fn nonlinear_blocks_are_rejected() {
        let block = crate::operator::OperatorBlock::nonlinear(
            |x: &ParameterVector| {
                Ok(DataBlock::new_unchecked(vec![x.values()[0] * x.values()[0]], vec![1.0]))
            },
            |x: &ParameterVector, h: &ParameterVector| {
                Ok(DataBlock::new_unchecked(vec![2.0 * x.values()[0] * h.values()[0]], vec![1.0]))
            },
            |x: &ParameterVector, r: &DataBlock| {
                Ok(ParameterVector::new_unchecked(
                    vec![2.0 * x.values()[0] * r.values()[0]],
                    1,
                    1,
                    1.0,
                ))
            },
            1.0,
            1e-12,
        );
        let y = DataBlock::new(vec![1.0], vec![1.0]).unwrap();
        let system = ProblemSystem::new(vec![block], vec![y], vec![0.0], None).unwrap();
        let x0 = ParameterVector::constant(1.0, 1, 1, 1.0).unwrap();
        assert!(matches!(
            cgne_run(&system, &x0, 2),
            Err(SolverError::UnsupportedVariant(_))
        ));
    }

    #[test]
    fn two_block_diagonal_system_reaches_the_solution() {
        // blocks pick out the two halves of a 1x2 grid
        let first = crate::operator::OperatorBlock::linear(
            |x: &ParameterVector| Ok(DataBlock::new_unchecked(vec![2.0 * x.values()[0]], vec![1.0])),
            |r: &DataBlock| Ok(ParameterVector::new_unchecked(vec![2.0 * r.values()[0], 0.0], 1, 2, 1.0)),
            2.0,
            1e-14,
        );
        let second = crate::operator::OperatorBlock::linear(
            |x: &ParameterVector| Ok(DataBlock::new_unchecked(vec![3.0 * x.values()[1]], vec![1.0])),
            |r: &DataBlock| Ok(ParameterVector::new_unchecked(vec![0.0, 3.0 * r.values()[0]], 1, 2, 1.0)),
            3.0,
            1e-14,
        );
        let y = vec![
            DataBlock::new(vec![2.0], vec![1.0]).unwrap(),
            DataBlock::new(vec![-3.0], vec![1.0]).unwrap(),
        ];
        let system = ProblemSystem::new(vec![first, second], y, vec![0.0, 0.0], None).unwrap();
        let x0 = ParameterVector::zeros(1, 2, 1.0).unwrap();
        let out = cgne_run(&system, &x0, 10).unwrap();
        assert!((out.x_final.values()[0] - 1.0).abs() <= 1e-10);
        assert!((out.x_final.values()[1] + 1.0).abs() <= 1e-10);
        assert_eq!(out.forward_evals % 2, 0);
        assert_eq!(out.adjoint_evals % 2, 0);
    }
}
