//! Relaxation functions mapping the curvature ratio to a step size.

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum RelaxationError {
    #[error("constant relaxation value must be positive and finite, got {0}")]
    BadConstant(f64),
    #[error("constant relaxation value {value} exceeds 1/M^2 = {limit}")]
    ConstantTooLarge { value: f64, limit: f64 },
    #[error("clamped-linear scale must lie in (0, 1], got {0}")]
    BadScale(f64),
    #[error("clamped-linear cap must be positive and finite, got {0}")]
    BadCap(f64),
}

/// Monotone bounded map producing the relaxation parameter from the
/// steepest-descent curvature ratio `||s||^2 / ||F' s||^2`.
///
/// `Constant(c)` turns the steepest-descent iteration into a
/// Landweber-Kaczmarz one; `ClampedLinear { scale, cap }` evaluates to
/// `min(scale * s, cap)`. Both satisfy `phi(s) <= s` on the range of ratios
/// that can occur under a correct operator norm bound, which is what makes
/// the per-step decrease estimate hold.
///
/// ```
/// use kaczmarz::RelaxationFunction;
///
/// let phi = RelaxationFunction::ClampedLinear { scale: 0.4, cap: 2.0 };
/// assert!((phi.evaluate(3.0) - 1.2).abs() < 1e-12);
/// assert_eq!(phi.evaluate(100.0), 2.0);
/// assert_eq!(RelaxationFunction::Constant(0.4).evaluate(7.0), 0.4);
/// ```
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RelaxationFunction {
    Constant(f64),
    ClampedLinear { scale: f64, cap: f64 },
}

impl RelaxationFunction {
    pub fn evaluate(&self, s: f64) -> f64 {
        debug_assert!(s > 0.0, "curvature ratio must be positive, got {s}");
        match *self {
            RelaxationFunction::Constant(c) => c,
            RelaxationFunction::ClampedLinear { scale, cap } => (scale * s).min(cap),
        }
    }

    /// Upper bound of the function's range.
    pub fn alpha_max(&self) -> f64 {
        match *self {
            RelaxationFunction::Constant(c) => c,
            RelaxationFunction::ClampedLinear { cap, .. } => cap,
        }
    }

    pub fn is_constant(&self) -> bool {
        matches!(self, RelaxationFunction::Constant(_))
    }

    /// Checks the shape constraints against the operator norm bound `M`:
    /// a constant value must not exceed `1/M^2`, a linear ramp must have
    /// slope at most one, and the range must be bounded and positive.
    pub fn validate_for_bound(&self, norm_bound: f64) -> Result<(), RelaxationError> {
        match *self {
            RelaxationFunction::Constant(c) => {
                if !c.is_finite() || c <= 0.0 {
                    return Err(RelaxationError::BadConstant(c));
                }
                let m2 = norm_bound * norm_bound;
                if c * m2 > 1.0 + 1e-12 {
                    return Err(RelaxationError::ConstantTooLarge {
                        value: c,
                        limit: 1.0 / m2,
                    });
                }
            }
            RelaxationFunction::ClampedLinear { scale, cap } => {
                if !scale.is_finite() || scale <= 0.0 || scale > 1.0 {
                    return Err(RelaxationError::BadScale(scale));
                }
                if !cap.is_finite() || cap <= 0.0 {
                    return Err(RelaxationError::BadCap(cap));
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_is_constant() {
        let phi = RelaxationFunction::Constant(0.4);
        assert_eq!(phi.evaluate(1e-6), 0.4);
        assert_eq!(phi.evaluate(1e6), 0.4);
        assert_eq!(phi.alpha_max(), 0.4);
    }

    #[test]
    fn clamped_linear_ramps_then_saturates() {
        let phi = RelaxationFunction::ClampedLinear { scale: 0.4, cap: 2.0 };
        assert!((phi.evaluate(3.0) - 1.2).abs() < 1e-15);
        assert_eq!(phi.evaluate(10.0), 2.0);
        assert_eq!(phi.alpha_max(), 2.0);
    }

    #[test]
    fn validation_enforces_the_norm_bound_constraint() {
        assert!(RelaxationFunction::Constant(1.0)
            .validate_for_bound(1.0)
            .is_ok());
        assert_eq!(
            RelaxationFunction::Constant(1.5).validate_for_bound(1.0),
            Err(RelaxationError::ConstantTooLarge { value: 1.5, limit: 1.0 })
        );
        assert!(RelaxationFunction::Constant(0.25)
            .validate_for_bound(2.0)
            .is_ok());
        assert!(RelaxationFunction::Constant(0.26)
            .validate_for_bound(2.0)
            .is_err());
        assert!(RelaxationFunction::ClampedLinear { scale: 1.1, cap: 2.0 }
            .validate_for_bound(1.0)
            .is_err());
        assert!(RelaxationFunction::ClampedLinear { scale: 0.4, cap: f64::INFINITY }
            .validate_for_bound(1.0)
            .is_err());
    }

    // On a dense sample of the admissible ratio range the function must be
    // monotone, bounded by alpha_max, and pointwise below the identity.
    #[test]
    fn shape_properties_on_a_dense_sample() {
        let m = 1.0f64;
        let lo = 1.0 / (m * m);
        for phi in [
            RelaxationFunction::Constant(0.4),
            RelaxationFunction::ClampedLinear { scale: 0.4, cap: 2.0 },
            RelaxationFunction::ClampedLinear { scale: 1.0, cap: 5.0 },
        ] {
            let mut prev = 0.0;
            for k in 0..=600 {
                let s = lo * 10f64.powf(k as f64 / 100.0);
                let v = phi.evaluate(s);
                assert!(v >= prev, "not monotone at s = {s}");
                assert!(v <= phi.alpha_max() + 1e-15);
                assert!(v <= s * (1.0 + 1e-12), "phi(s) > s at s = {s}");
                prev = v;
            }
        }
    }
}
