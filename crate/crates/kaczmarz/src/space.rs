//! Weighted solution and data spaces.
//!
//! [`ParameterVector`] holds a grid function together with a uniform cell
//! weight; [`DataBlock`] holds one measurement profile together with
//! per-sample quadrature weights. Inner products are plain weighted sums, so
//! the norms computed here match the quadrature rules used by the problem
//! generators, and discrete transposes taken with respect to these inner
//! products are exact adjoints.

use thiserror::Error;

/// Errors from constructing or combining space elements.
#[derive(Debug, Error, PartialEq)]
pub enum SpaceError {
    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("grid shape {rows}x{cols} does not match {len} values")]
    ShapeMismatch { rows: usize, cols: usize, len: usize },
    #[error("elements live in different spaces (shape or weights differ)")]
    SpaceMismatch,
    #[error("cell weight must be positive and finite, got {0}")]
    BadCellWeight(f64),
    #[error("quadrature weight at index {index} must be finite and >= 0, got {value}")]
    BadQuadratureWeight { index: usize, value: f64 },
    #[error("non-finite entry at index {0}")]
    NonFinite(usize),
}

fn check_finite(values: &[f64]) -> Result<(), SpaceError> {
    match values.iter().position(|v| !v.is_finite()) {
        Some(i) => Err(SpaceError::NonFinite(i)),
        None => Ok(()),
    }
}

/// Element of the solution space: a row-major grid function with a uniform
/// quadrature weight per cell.
#[derive(Debug, Clone, PartialEq)]
pub struct ParameterVector {
    values: Vec<f64>,
    rows: usize,
    cols: usize,
    cell_weight: f64,
}

impl ParameterVector {
    pub fn new(
        values: Vec<f64>,
        rows: usize,
        cols: usize,
        cell_weight: f64,
    ) -> Result<Self, SpaceError> {
        if values.len() != rows * cols {
            return Err(SpaceError::ShapeMismatch {
                rows,
                cols,
                len: values.len(),
            });
        }
        if !cell_weight.is_finite() || cell_weight <= 0.0 {
            return Err(SpaceError::BadCellWeight(cell_weight));
        }
        check_finite(&values)?;
        Ok(Self {
            values,
            rows,
            cols,
            cell_weight,
        })
    }

    pub(crate) fn new_unchecked(values: Vec<f64>, rows: usize, cols: usize, cell_weight: f64) -> Self {
        debug_assert_eq!(values.len(), rows * cols);
        Self {
            values,
            rows,
            cols,
            cell_weight,
        }
    }

    pub fn zeros(rows: usize, cols: usize, cell_weight: f64) -> Result<Self, SpaceError> {
        Self::new(vec![0.0; rows * cols], rows, cols, cell_weight)
    }

    pub fn constant(value: f64, rows: usize, cols: usize, cell_weight: f64) -> Result<Self, SpaceError> {
        Self::new(vec![value; rows * cols], rows, cols, cell_weight)
    }

    /// Builds a grid function by evaluating `f(row, col)` at every node.
    pub fn from_fn(
        rows: usize,
        cols: usize,
        cell_weight: f64,
        mut f: impl FnMut(usize, usize) -> f64,
    ) -> Result<Self, SpaceError> {
        let mut values = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                values.push(f(r, c));
            }
        }
        Self::new(values, rows, cols, cell_weight)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn grid_shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn cell_weight(&self) -> f64 {
        self.cell_weight
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Mutable access to the raw values; the caller keeps them finite.
    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.cols + col]
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    fn check_same_space(&self, other: &Self) -> Result<(), SpaceError> {
        if self.rows != other.rows || self.cols != other.cols || self.cell_weight != other.cell_weight
        {
            return Err(SpaceError::SpaceMismatch);
        }
        Ok(())
    }

    /// Weighted inner product `cell_weight * sum_i a_i b_i`.
    pub fn inner(&self, other: &Self) -> Result<f64, SpaceError> {
        self.check_same_space(other)?;
        let mut acc = 0.0;
        for (a, b) in self.values.iter().zip(&other.values) {
            acc += a * b;
        }
        Ok(self.cell_weight * acc)
    }

    pub fn norm(&self) -> f64 {
        let mut acc = 0.0;
        for v in &self.values {
            acc += v * v;
        }
        (self.cell_weight * acc).sqrt()
    }

    /// `self += a * other`.
    pub fn axpy(&mut self, a: f64, other: &Self) -> Result<(), SpaceError> {
        self.check_same_space(other)?;
        for (x, y) in self.values.iter_mut().zip(&other.values) {
            *x += a * y;
        }
        Ok(())
    }

    pub fn scale(&mut self, a: f64) {
        for v in &mut self.values {
            *v *= a;
        }
    }

    pub fn sub(&self, other: &Self) -> Result<Self, SpaceError> {
        self.check_same_space(other)?;
        let values = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| a - b)
            .collect();
        Ok(Self::new_unchecked(values, self.rows, self.cols, self.cell_weight))
    }

    /// `|| self - other ||` without allocating the difference.
    pub fn diff_norm(&self, other: &Self) -> Result<f64, SpaceError> {
        self.check_same_space(other)?;
        let mut acc = 0.0;
        for (a, b) in self.values.iter().zip(&other.values) {
            let d = a - b;
            acc += d * d;
        }
        Ok((self.cell_weight * acc).sqrt())
    }

    pub fn clamp_values(&mut self, lo: f64, hi: f64) {
        for v in &mut self.values {
            *v = v.clamp(lo, hi);
        }
    }
}

/// Element of one data space: a measurement profile with per-sample
/// quadrature weights.
#[derive(Debug, Clone, PartialEq)]
pub struct DataBlock {
    values: Vec<f64>,
    quadrature_weights: Vec<f64>,
}

impl DataBlock {
    pub fn new(values: Vec<f64>, quadrature_weights: Vec<f64>) -> Result<Self, SpaceError> {
        if values.len() != quadrature_weights.len() {
            return Err(SpaceError::LengthMismatch {
                left: values.len(),
                right: quadrature_weights.len(),
            });
        }
        for (i, w) in quadrature_weights.iter().enumerate() {
            if !w.is_finite() || *w < 0.0 {
                return Err(SpaceError::BadQuadratureWeight { index: i, value: *w });
            }
        }
        check_finite(&values)?;
        Ok(Self {
            values,
            quadrature_weights,
        })
    }

    pub(crate) fn new_unchecked(values: Vec<f64>, quadrature_weights: Vec<f64>) -> Self {
        debug_assert_eq!(values.len(), quadrature_weights.len());
        Self {
            values,
            quadrature_weights,
        }
    }

    /// A single real measurement with unit weight.
    pub fn scalar(value: f64) -> Self {
        Self {
            values: vec![value],
            quadrature_weights: vec![1.0],
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn weights(&self) -> &[f64] {
        &self.quadrature_weights
    }

    fn check_same_space(&self, other: &Self) -> Result<(), SpaceError> {
        if self.values.len() != other.values.len()
            || self.quadrature_weights != other.quadrature_weights
        {
            return Err(SpaceError::SpaceMismatch);
        }
        Ok(())
    }

    /// Weighted inner product `sum_i w_i a_i b_i`.
    pub fn inner(&self, other: &Self) -> Result<f64, SpaceError> {
        self.check_same_space(other)?;
        let mut acc = 0.0;
        for ((a, b), w) in self
            .values
            .iter()
            .zip(&other.values)
            .zip(&self.quadrature_weights)
        {
            acc += w * a * b;
        }
        Ok(acc)
    }

    pub fn norm(&self) -> f64 {
        let mut acc = 0.0;
        for (v, w) in self.values.iter().zip(&self.quadrature_weights) {
            acc += w * v * v;
        }
        acc.sqrt()
    }

    pub fn axpy(&mut self, a: f64, other: &Self) -> Result<(), SpaceError> {
        self.check_same_space(other)?;
        for (x, y) in self.values.iter_mut().zip(&other.values) {
            *x += a * y;
        }
        Ok(())
    }

    pub fn scale(&mut self, a: f64) {
        for v in &mut self.values {
            *v *= a;
        }
    }

    pub fn sub(&self, other: &Self) -> Result<Self, SpaceError> {
        self.check_same_space(other)?;
        let values = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| a - b)
            .collect();
        Ok(Self::new_unchecked(values, self.quadrature_weights.clone()))
    }

    pub fn diff_norm(&self, other: &Self) -> Result<f64, SpaceError> {
        self.check_same_space(other)?;
        let mut acc = 0.0;
        for ((a, b), w) in self
            .values
            .iter()
            .zip(&other.values)
            .zip(&self.quadrature_weights)
        {
            let d = a - b;
            acc += w * d * d;
        }
        Ok(acc.sqrt())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn inner_product_of_zero_vectors_is_zero() {
        let a = ParameterVector::zeros(2, 2, 0.25).unwrap();
        let b = ParameterVector::zeros(2, 2, 0.25).unwrap();
        assert_eq!(a.inner(&b).unwrap(), 0.0);
    }

    #[test]
    fn data_inner_product_is_the_weighted_sum() {
        let a = DataBlock::new(vec![1.0, 1.0], vec![0.5, 0.5 * 2.0]).unwrap();
        let b = DataBlock::new(vec![1.0, 1.0], vec![0.5, 0.5 * 2.0]).unwrap();
        assert_eq!(a.inner(&b).unwrap(), 1.5);
    }

    #[test]
    fn mismatched_lengths_are_rejected() {
        let a = ParameterVector::zeros(2, 2, 1.0).unwrap();
        let b = ParameterVector::zeros(2, 3, 1.0).unwrap();
        assert!(a.inner(&b).is_err());
        let y = DataBlock::new(vec![1.0], vec![1.0]).unwrap();
        let z = DataBlock::new(vec![1.0, 2.0], vec![1.0, 1.0]).unwrap();
        assert!(y.inner(&z).is_err());
        assert!(DataBlock::new(vec![1.0, 2.0], vec![1.0]).is_err());
    }

    #[test]
    fn invalid_weights_are_rejected() {
        assert_eq!(
            ParameterVector::zeros(2, 2, 0.0).unwrap_err(),
            SpaceError::BadCellWeight(0.0)
        );
        assert!(ParameterVector::zeros(2, 2, -1.0).is_err());
        assert!(ParameterVector::zeros(2, 2, f64::NAN).is_err());
        assert!(matches!(
            DataBlock::new(vec![1.0], vec![-0.5]),
            Err(SpaceError::BadQuadratureWeight { index: 0, .. })
        ));
    }

    #[test]
    fn non_finite_entries_are_rejected() {
        assert_eq!(
            ParameterVector::new(vec![1.0, f64::INFINITY], 1, 2, 1.0).unwrap_err(),
            SpaceError::NonFinite(1)
        );
        assert!(DataBlock::new(vec![f64::NAN], vec![1.0]).is_err());
    }

    // Independent accumulation-order oracle: the straight left-to-right sum
    // must agree with a compensated (Kahan) sum to near machine precision.
    #[test]
    fn inner_product_matches_compensated_summation() {
        let n = 16;
        let mut state = 0x9e3779b97f4a7c15u64;
        let mut next = move || {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            (state >> 11) as f64 / (1u64 << 53) as f64 - 0.5
        };
        let a: Vec<f64> = (0..n).map(|_| next() * 3.0).collect();
        let b: Vec<f64> = (0..n).map(|_| next() * 3.0).collect();
        let w = 0.37;
        let pa = ParameterVector::new(a.clone(), 4, 4, w).unwrap();
        let pb = ParameterVector::new(b.clone(), 4, 4, w).unwrap();
        let got = pa.inner(&pb).unwrap();

        let mut sum = 0.0;
        let mut comp = 0.0;
        for i in 0..n {
            let term = w * a[i] * b[i];
            let t = sum + term;
            if sum.abs() >= term.abs() {
                comp += (sum - t) + term;
            } else {
                comp += (term - t) + sum;
            }
            sum = t;
        }
        let oracle = sum + comp;
        assert!(
            (got - oracle).abs() <= 1e-14 * oracle.abs().max(1.0),
            "got {got}, oracle {oracle}"
        );
    }

    #[test]
    fn axpy_and_diff_norm_agree_with_sub() {
        let a = ParameterVector::new(vec![1.0, 2.0, 3.0, 4.0], 2, 2, 0.5).unwrap();
        let b = ParameterVector::new(vec![0.5, 1.0, -1.0, 2.0], 2, 2, 0.5).unwrap();
        let d = a.sub(&b).unwrap();
        assert!((a.diff_norm(&b).unwrap() - d.norm()).abs() < 1e-15);
        let mut c = a.clone();
        c.axpy(-1.0, &b).unwrap();
        assert_eq!(c, d);
    }
}
