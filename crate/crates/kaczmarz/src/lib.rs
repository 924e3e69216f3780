//! Kaczmarz-type iterative regularization for systems of ill-posed operator
//! equations, with loping (skip steps whose residual is already at the noise
//! level) and steepest-descent step sizes.
//!
//! The solver treats a problem as a cyclic list of operator blocks
//! `F_i(x) = y_i`, each given by a forward map, its derivative, and the
//! adjoint of the derivative. One sweep visits every block once; a step is
//! only paid for when the block's residual still exceeds `tau` times its
//! noise level. Two matrix-free problem builders ship with the crate: a
//! circular-mean transform used in photoacoustic tomography ([`radon`]) and
//! a semiconductor doping-profile identification problem ([`doping`]). A
//! conjugate-gradient baseline for linear systems lives in [`cgne`].
//!
//! ```
//! use kaczmarz::{identity_block, run, ProblemSystem, SolverConfig};
//! use kaczmarz::space::{DataBlock, ParameterVector};
//!
//! // one identity equation: recover x = y from exact data
//! let y = DataBlock::new(vec![1.0, -2.0, 0.5, 3.0], vec![1.0; 4]).unwrap();
//! let system = ProblemSystem::new(
//!     vec![identity_block(2, 2, 1.0)],
//!     vec![y],
//!     vec![0.0],
//!     None,
//! ).unwrap();
//! let x0 = ParameterVector::zeros(2, 2, 1.0).unwrap();
//! let out = run(&system, &SolverConfig::default(), &x0).unwrap();
//! assert!((out.x_final.values()[3] - 3.0).abs() < 1e-6);
//! ```

pub mod cgne;
pub mod doping;
pub mod harness;
pub mod noise;
pub mod operator;
pub mod radon;
pub mod relax;
pub mod solver;
pub mod space;

pub use cgne::{cgne_run, CgneOutput};
pub use noise::{add_noise, NoisyData};
pub use operator::{
    estimate_operator_norm, identity_block, validate_adjoint, AdjointReport, OperatorBlock,
    ProblemSystem,
};
pub use relax::RelaxationFunction;
pub use solver::{
    loping_weight, run, IterationTrace, RunOutput, SolverConfig, SolverError, StepRecord,
    StopReason, Variant,
};
pub use space::{DataBlock, ParameterVector};

#[cfg(doctest)]
mod book {
    macro_rules! chapter {
        ($name:ident, $path:literal) => {
            #[doc = include_str!($path)]
            mod $name {}
        };
    }
    chapter!(introduction, "../../../book/src/introduction.md");
    chapter!(spaces, "../../../book/src/spaces.md");
    chapter!(iteration, "../../../book/src/iteration.md");
    chapter!(tomography, "../../../book/src/tomography.md");
    chapter!(doping, "../../../book/src/doping.md");
    chapter!(cli, "../../../book/src/cli.md");
}
