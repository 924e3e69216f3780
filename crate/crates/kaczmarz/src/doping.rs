//! Inverse doping profile identification on the unit square.
//!
//! The forward problem: given a positive coefficient `x` on an m x m node
//! grid over (0,1)^2, solve `mu_n div(x grad u) = 0` with `u = U` on the
//! bottom contact, `u = 0` on the top contact, and zero flux on the
//! vertical sides, then measure the total conormal current through the top
//! contact. One operator block per applied voltage profile `U_i`.
//!
//! Discretization is a finite-volume 5-point scheme with harmonic averaging
//! of `x` on cell faces. That choice keeps the divergence structure, so the
//! Frechet derivative is one linearized solve with the same matrix, and the
//! adjoint gradient is the algebraic transpose of that linearization (one
//! adjoint-state solve plus edge-wise assembly) — no continuous adjoint
//! formula enters. Since each block maps into the reals, the adjoint at a
//! point is a rank-one gradient field.

use std::sync::Arc;

use thiserror::Error;

use crate::noise::{add_noise, NoisyData};
use crate::operator::{BlockError, OperatorBlock, ProblemSystem};
use crate::space::{DataBlock, ParameterVector, SpaceError};

#[derive(Debug, Error)]
pub enum DopingError {
    #[error(transparent)]
    Space(#[from] SpaceError),
    #[error(transparent)]
    Block(#[from] BlockError),
    #[error("profile line {line}: {message}")]
    Profile { line: usize, message: String },
    #[error("invalid setup: {0}")]
    InvalidSetup(String),
}

/// Device geometry and material constants. The bottom row of nodes is the
/// driven contact, the top row the grounded measurement contact, and the
/// two vertical sides are insulating.
#[derive(Debug, Clone)]
pub struct DeviceGrid {
    m: usize,
    mu_n: f64,
    contact_weight: Vec<f64>,
    x_min: f64,
}

impl DeviceGrid {
    pub fn new(m: usize, mu_n: f64) -> Self {
        assert!(m >= 5, "grid needs at least 5 nodes per side");
        assert!(mu_n > 0.0 && mu_n.is_finite(), "mobility must be positive");
        Self {
            m,
            mu_n,
            contact_weight: vec![1.0; m],
            x_min: 0.1,
        }
    }

    /// Per-node weight on the measurement contact (a positive built-in
    /// potential factor; 1 by default).
    pub fn with_contact_weight(mut self, w: Vec<f64>) -> Self {
        assert_eq!(w.len(), self.m, "one weight per top-contact node");
        assert!(w.iter().all(|v| *v > 0.0 && v.is_finite()));
        self.contact_weight = w;
        self
    }

    pub fn with_x_min(mut self, x_min: f64) -> Self {
        assert!(x_min > 0.0 && x_min.is_finite());
        self.x_min = x_min;
        self
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn mu_n(&self) -> f64 {
        self.mu_n
    }

    pub fn contact_weight(&self) -> &[f64] {
        &self.contact_weight
    }

    pub fn x_min(&self) -> f64 {
        self.x_min
    }

    pub fn spacing(&self) -> f64 {
        1.0 / (self.m - 1) as f64
    }

    pub fn cell_weight(&self) -> f64 {
        self.spacing() * self.spacing()
    }

    fn n_free(&self) -> usize {
        (self.m - 2) * self.m
    }

    fn free_index(&self, r: usize, c: usize) -> Option<usize> {
        if r >= 1 && r <= self.m - 2 {
            Some((r - 1) * self.m + c)
        } else {
            None
        }
    }
}

/// Applied potential on the bottom contact, one value per node; implicitly
/// zero on the top contact.
#[derive(Debug, Clone, PartialEq)]
pub struct VoltageProfile {
    values: Vec<f64>,
}

impl VoltageProfile {
    pub fn new(values: Vec<f64>) -> Self {
        assert!(values.iter().all(|v| v.is_finite()));
        Self { values }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }
}

/// Rectangular voltage bumps `U_i(s) = 1 for |s - s_i| <= h`, centers
/// `s_i = (i + 1/2)/n` uniformly inside the contact. Overlapping bumps are
/// permitted but warned about.
pub fn make_voltage_profiles(grid: &DeviceGrid, n: usize, h: f64) -> Vec<VoltageProfile> {
    assert!(n >= 1, "need at least one profile");
    assert!(h > 0.0 && h < 0.5, "bump halfwidth must lie in (0, 1/2)");
    let spacing = 1.0 / n as f64;
    if n > 1 && h >= spacing / 2.0 {
        log::warn!("voltage bumps overlap: halfwidth {h} >= half the center spacing {spacing}/2");
    }
    let dx = grid.spacing();
    (0..n)
        .map(|i| {
            let s_i = (i as f64 + 0.5) / n as f64;
            let values = (0..grid.m)
                .map(|c| {
                    if (c as f64 * dx - s_i).abs() <= h {
                        1.0
                    } else {
                        0.0
                    }
                })
                .collect();
            VoltageProfile { values }
        })
        .collect()
}

fn harmonic(a: f64, b: f64) -> f64 {
    2.0 * a * b / (a + b)
}

/// d harmonic(a, b) / d a.
fn harmonic_da(a: f64, b: f64) -> f64 {
    let s = a + b;
    2.0 * b * b / (s * s)
}

/// Visits every grid edge as `(node_a, node_b, face_weight)`; the weight is
/// the dual-face length in units of the node spacing (1/2 where the control
/// volume is clipped by the domain boundary).
fn for_each_edge(m: usize, mut f: impl FnMut([usize; 2], [usize; 2], f64)) {
    for r in 0..m - 1 {
        for c in 0..m {
            let w = if c == 0 || c == m - 1 { 0.5 } else { 1.0 };
            f([r, c], [r + 1, c], w);
        }
    }
    for r in 0..m {
        for c in 0..m - 1 {
            let w = if r == 0 || r == m - 1 { 0.5 } else { 1.0 };
            f([r, c], [r, c + 1], w);
        }
    }
}

/// Symmetric banded matrix, lower triangle stored row-wise.
#[derive(Debug, Clone)]
struct BandedSpd {
    n: usize,
    bw: usize,
    data: Vec<f64>,
}

impl BandedSpd {
    fn zeros(n: usize, bw: usize) -> Self {
        Self {
            n,
            bw,
            data: vec![0.0; n * (bw + 1)],
        }
    }

    #[inline]
    fn idx(&self, i: usize, j: usize) -> usize {
        debug_assert!(j <= i && i - j <= self.bw);
        i * (self.bw + 1) + (i - j)
    }

    fn add(&mut self, i: usize, j: usize, v: f64) {
        let (i, j) = if i >= j { (i, j) } else { (j, i) };
        let at = self.idx(i, j);
        self.data[at] += v;
    }

    fn matvec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.n];
        for i in 0..self.n {
            let j_min = i.saturating_sub(self.bw);
            for j in j_min..=i {
                let v = self.data[self.idx(i, j)];
                y[i] += v * x[j];
                if j < i {
                    y[j] += v * x[i];
                }
            }
        }
        y
    }

    /// In-place Cholesky; fails when the matrix is not positive definite.
    fn cholesky(mut self) -> Result<BandedCholesky, BlockError> {
        let bw = self.bw;
        for i in 0..self.n {
            let j_min = i.saturating_sub(bw);
            for j in j_min..=i {
                let mut sum = self.data[i * (bw + 1) + (i - j)];
                for k in j_min..j {
                    sum -= self.data[i * (bw + 1) + (i - k)] * self.data[j * (bw + 1) + (j - k)];
                }
                if j < i {
                    self.data[i * (bw + 1) + (i - j)] = sum / self.data[j * (bw + 1)];
                } else {
                    if sum <= 0.0 || !sum.is_finite() {
                        return Err(BlockError::SolveFailure(format!(
                            "matrix not positive definite at row {i} (pivot {sum})"
                        )));
                    }
                    self.data[i * (bw + 1)] = sum.sqrt();
                }
            }
        }
        Ok(BandedCholesky {
            n: self.n,
            bw,
            data: self.data,
        })
    }
}

/// Factored form of [`BandedSpd`].
#[derive(Debug, Clone)]
struct BandedCholesky {
    n: usize,
    bw: usize,
    data: Vec<f64>,
}

impl BandedCholesky {
    fn solve(&self, b: &[f64]) -> Vec<f64> {
        debug_assert_eq!(b.len(), self.n);
        let bw = self.bw;
        let mut y = b.to_vec();
        for i in 0..self.n {
            let j_min = i.saturating_sub(bw);
            let mut sum = y[i];
            for k in j_min..i {
                sum -= self.data[i * (bw + 1) + (i - k)] * y[k];
            }
            y[i] = sum / self.data[i * (bw + 1)];
        }
        for i in (0..self.n).rev() {
            let k_max = (i + bw).min(self.n - 1);
            let mut sum = y[i];
            for k in i + 1..=k_max {
                sum -= self.data[k * (bw + 1) + (k - i)] * y[k];
            }
            y[i] = sum / self.data[i * (bw + 1)];
        }
        y
    }
}

fn check_domain(grid: &DeviceGrid, x: &ParameterVector) -> Result<(), BlockError> {
    if x.rows() != grid.m || x.cols() != grid.m {
        return Err(BlockError::DomainViolation(format!(
            "coefficient grid is {}x{}, device needs {}x{}",
            x.rows(),
            x.cols(),
            grid.m,
            grid.m
        )));
    }
    for (i, v) in x.values().iter().enumerate() {
        if !v.is_finite() || *v < grid.x_min {
            return Err(BlockError::DomainViolation(format!(
                "coefficient at node {i} is {v}, below the domain bound {}",
                grid.x_min
            )));
        }
    }
    Ok(())
}

/// Assembles the free-node system `A u = b` for Dirichlet data `bottom` on
/// the driven contact and zero on the measurement contact.
fn assemble(grid: &DeviceGrid, x: &ParameterVector, bottom: &[f64]) -> (BandedSpd, Vec<f64>) {
    let m = grid.m;
    let mut a = BandedSpd::zeros(grid.n_free(), m);
    let mut rhs = vec![0.0; grid.n_free()];
    for_each_edge(m, |pa, pb, w| {
        let t = w * harmonic(x.get(pa[0], pa[1]), x.get(pb[0], pb[1]));
        let fa = grid.free_index(pa[0], pa[1]);
        let fb = grid.free_index(pb[0], pb[1]);
        match (fa, fb) {
            (Some(ia), Some(ib)) => {
                a.add(ia, ia, t);
                a.add(ib, ib, t);
                a.add(ib, ia, -t);
            }
            (Some(ia), None) => {
                a.add(ia, ia, t);
                let g = if pb[0] == 0 { bottom[pb[1]] } else { 0.0 };
                rhs[ia] += t * g;
            }
            (None, Some(ib)) => {
                a.add(ib, ib, t);
                let g = if pa[0] == 0 { bottom[pa[1]] } else { 0.0 };
                rhs[ib] += t * g;
            }
            (None, None) => {}
        }
    });
    (a, rhs)
}

/// Factors the system, solves, verifies the residual, and returns the full
/// m x m potential field (boundary rows included) plus the factorization
/// for reuse by linearized solves.
fn solve_full(
    grid: &DeviceGrid,
    x: &ParameterVector,
    profile: &VoltageProfile,
) -> Result<(Vec<f64>, BandedCholesky), BlockError> {
    check_domain(grid, x)?;
    if profile.values.len() != grid.m {
        return Err(BlockError::DomainViolation(format!(
            "voltage profile has {} nodes, contact has {}",
            profile.values.len(),
            grid.m
        )));
    }
    let (a, rhs) = assemble(grid, x, &profile.values);
    let chol = a.clone().cholesky()?;
    let sol = chol.solve(&rhs);
    let ax = a.matvec(&sol);
    let scale = rhs.iter().fold(1.0f64, |m, v| m.max(v.abs()));
    let mut worst = 0.0f64;
    for (l, r) in ax.iter().zip(&rhs) {
        worst = worst.max((l - r).abs());
    }
    if worst > 1e-8 * scale {
        return Err(BlockError::SolveFailure(format!(
            "linear solve residual {worst} exceeds tolerance (rhs scale {scale})"
        )));
    }
    let m = grid.m;
    let mut full = vec![0.0; m * m];
    full[..m].copy_from_slice(&profile.values);
    full[m..m * (m - 1)].copy_from_slice(&sol);
    Ok((full, chol))
}

/// Solves the potential equation and returns the full nodal field as a grid
/// function (row 0 is the driven contact).
pub fn solve_pde(
    x: &ParameterVector,
    profile: &VoltageProfile,
    grid: &DeviceGrid,
) -> Result<ParameterVector, BlockError> {
    let (full, _) = solve_full(grid, x, profile)?;
    Ok(ParameterVector::new_unchecked(
        full,
        grid.m,
        grid.m,
        grid.cell_weight(),
    ))
}

fn current_from_field(grid: &DeviceGrid, x: &ParameterVector, full: &[f64]) -> f64 {
    let m = grid.m;
    let mut acc = 0.0;
    for c in 0..m {
        let trap = if c == 0 || c == m - 1 { 0.5 } else { 1.0 };
        let kappa = harmonic(x.get(m - 2, c), x.get(m - 1, c));
        let du = full[(m - 1) * m + c] - full[(m - 2) * m + c];
        acc += trap * grid.contact_weight[c] * kappa * du;
    }
    grid.mu_n * acc
}

/// Total conormal current through the measurement contact: the one-sided
/// face flux `kappa * du/dn`, trapezoid-weighted along the contact.
pub fn current_functional(u: &ParameterVector, grid: &DeviceGrid, x: &ParameterVector) -> f64 {
    assert_eq!(u.rows(), grid.m);
    assert_eq!(u.cols(), grid.m);
    current_from_field(grid, x, u.values())
}

/// The voltage-to-current map of one applied profile.
pub fn doping_forward(
    x: &ParameterVector,
    profile: &VoltageProfile,
    grid: &DeviceGrid,
) -> Result<f64, BlockError> {
    let (full, _) = solve_full(grid, x, profile)?;
    Ok(current_from_field(grid, x, &full))
}

/// Edge-wise sensitivity accumulation shared by the derivative and the
/// adjoint: for every edge, the conductance perturbation couples the
/// potential drop across the edge with the given dual field.
fn current_direct_terms(grid: &DeviceGrid, x: &ParameterVector, full: &[f64]) -> Vec<(usize, f64, f64)> {
    // per contact face c: dF/dkappa split into the sensitivities w.r.t. the
    // coefficient below the contact and on the contact
    let m = grid.m;
    (0..m)
        .map(|c| {
            let trap = if c == 0 || c == m - 1 { 0.5 } else { 1.0 };
            let du = full[(m - 1) * m + c] - full[(m - 2) * m + c];
            let factor = grid.mu_n * trap * grid.contact_weight[c] * du;
            let a = x.get(m - 2, c);
            let b = x.get(m - 1, c);
            (c, factor * harmonic_da(a, b), factor * harmonic_da(b, a))
        })
        .collect()
}

/// Directional derivative of [`doping_forward`] in direction `dx`.
pub fn doping_derivative(
    x: &ParameterVector,
    dx: &ParameterVector,
    profile: &VoltageProfile,
    grid: &DeviceGrid,
) -> Result<f64, BlockError> {
    if dx.rows() != grid.m || dx.cols() != grid.m {
        return Err(BlockError::DomainViolation(
            "perturbation grid does not match the device".into(),
        ));
    }
    let m = grid.m;
    let (full, chol) = solve_full(grid, x, profile)?;

    // rhs of the linearized system: -(d/dx of the residual form) dx
    let mut rhs = vec![0.0; grid.n_free()];
    for_each_edge(m, |pa, pb, w| {
        let a = x.get(pa[0], pa[1]);
        let b = x.get(pb[0], pb[1]);
        let dkappa = harmonic_da(a, b) * dx.get(pa[0], pa[1]) + harmonic_da(b, a) * dx.get(pb[0], pb[1]);
        if dkappa == 0.0 {
            return;
        }
        let du = full[pa[0] * m + pa[1]] - full[pb[0] * m + pb[1]];
        if let Some(ia) = grid.free_index(pa[0], pa[1]) {
            rhs[ia] -= w * dkappa * du;
        }
        if let Some(ib) = grid.free_index(pb[0], pb[1]) {
            rhs[ib] += w * dkappa * du;
        }
    });
    let du_free = chol.solve(&rhs);

    // direct conductance sensitivity on the contact faces
    let mut out = 0.0;
    for (c, ga, gb) in current_direct_terms(grid, x, &full) {
        out += ga * dx.get(m - 2, c) + gb * dx.get(m - 1, c);
    }
    // transported term through the potential perturbation (zero on both
    // contacts, so only the row below the contact enters)
    for c in 0..m {
        let trap = if c == 0 || c == m - 1 { 0.5 } else { 1.0 };
        let kappa = harmonic(x.get(m - 2, c), x.get(m - 1, c));
        let below = grid.free_index(m - 2, c).expect("row m-2 is free");
        out -= grid.mu_n * trap * grid.contact_weight[c] * kappa * du_free[below];
    }
    Ok(out)
}

/// Gradient representation of the adjoint `F'(x)* r`: one adjoint-state
/// solve with the same matrix, then edge-assembled sensitivities, returned
/// as a grid function in the weighted parameter space.
pub fn doping_adjoint(
    x: &ParameterVector,
    r: f64,
    profile: &VoltageProfile,
    grid: &DeviceGrid,
) -> Result<ParameterVector, BlockError> {
    let m = grid.m;
    let (full, chol) = solve_full(grid, x, profile)?;

    // adjoint load: derivative of the current functional w.r.t. the free
    // potential values (only the row below the contact appears)
    let mut load = vec![0.0; grid.n_free()];
    for c in 0..m {
        let trap = if c == 0 || c == m - 1 { 0.5 } else { 1.0 };
        let kappa = harmonic(x.get(m - 2, c), x.get(m - 1, c));
        let below = grid.free_index(m - 2, c).expect("row m-2 is free");
        load[below] = -grid.mu_n * trap * grid.contact_weight[c] * kappa;
    }
    let w_free = chol.solve(&load);
    let w_at = |p: [usize; 2]| -> f64 {
        grid.free_index(p[0], p[1]).map_or(0.0, |f| w_free[f])
    };

    let mut g = vec![0.0; m * m];
    for (c, ga, gb) in current_direct_terms(grid, x, &full) {
        g[(m - 2) * m + c] += ga;
        g[(m - 1) * m + c] += gb;
    }
    for_each_edge(m, |pa, pb, w| {
        let dw = w_at(pa) - w_at(pb);
        if dw == 0.0 {
            return;
        }
        let du = full[pa[0] * m + pa[1]] - full[pb[0] * m + pb[1]];
        let a = x.get(pa[0], pa[1]);
        let b = x.get(pb[0], pb[1]);
        let couple = w * du * dw;
        g[pa[0] * m + pa[1]] -= couple * harmonic_da(a, b);
        g[pb[0] * m + pb[1]] -= couple * harmonic_da(b, a);
    });

    // Riesz scaling: the Euclidean gradient over the weighted X inner product
    let inv_cell = r / grid.cell_weight();
    for v in &mut g {
        *v *= inv_cell;
    }
    Ok(ParameterVector::new_unchecked(g, m, m, grid.cell_weight()))
}

/// Parses a plain-text grid dump: one row of whitespace-separated reals per
/// line, `#` comments, all rows the same length, square overall.
pub fn parse_profile(text: &str) -> Result<ParameterVector, DopingError> {
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let body = raw.split('#').next().unwrap_or("").trim();
        if body.is_empty() {
            continue;
        }
        let row: Vec<f64> = body
            .split_whitespace()
            .map(|t| {
                t.parse::<f64>().map_err(|_| DopingError::Profile {
                    line,
                    message: format!("expected a number, got {t:?}"),
                })
            })
            .collect::<Result<_, _>>()?;
        if let Some(first) = rows.first() {
            if row.len() != first.len() {
                return Err(DopingError::Profile {
                    line,
                    message: format!("row has {} values, expected {}", row.len(), first.len()),
                });
            }
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(DopingError::Profile {
            line: 0,
            message: "no rows found".into(),
        });
    }
    if rows.len() != rows[0].len() {
        return Err(DopingError::Profile {
            line: 0,
            message: format!("grid must be square, got {} rows of {}", rows.len(), rows[0].len()),
        });
    }
    let m = rows.len();
    let spacing = 1.0 / (m - 1) as f64;
    let values: Vec<f64> = rows.into_iter().flatten().collect();
    ParameterVector::new(values, m, m, spacing * spacing).map_err(DopingError::from)
}

/// Renders a grid function in the format accepted by [`parse_profile`].
pub fn format_profile(x: &ParameterVector) -> String {
    let mut out = String::new();
    for r in 0..x.rows() {
        for c in 0..x.cols() {
            if c > 0 {
                out.push(' ');
            }
            out.push_str(&format!("{}", x.get(r, c)));
        }
        out.push('\n');
    }
    out
}

/// The reference coefficient: background 1 with one low rectangular
/// inclusion near the center.
pub fn default_truth(m: usize) -> ParameterVector {
    let spacing = 1.0 / (m - 1) as f64;
    ParameterVector::from_fn(m, m, spacing * spacing, |r, c| {
        let x1 = c as f64 * spacing;
        let x2 = r as f64 * spacing;
        if (0.35..=0.65).contains(&x1) && (0.35..=0.65).contains(&x2) {
            0.5
        } else {
            1.0
        }
    })
    .expect("grid weights are valid")
}

/// Parameters of a doping experiment; [`Default`] is the desk-scale
/// reference configuration.
#[derive(Debug, Clone)]
pub struct DopingSetup {
    pub m: usize,
    pub mu_n: f64,
    pub n_profiles: usize,
    pub bump_halfwidth: f64,
    pub noise_rel: f64,
    pub seed: u64,
    pub x_min: f64,
    pub x_max: f64,
    pub truth: Option<ParameterVector>,
    pub init: Option<ParameterVector>,
    pub contact_weight: Option<Vec<f64>>,
}

impl Default for DopingSetup {
    fn default() -> Self {
        Self {
            m: 31,
            mu_n: 1.0,
            n_profiles: 11,
            bump_halfwidth: 1.0 / 32.0,
            noise_rel: 0.01,
            seed: 0,
            x_min: 0.1,
            x_max: 10.0,
            truth: None,
            init: None,
            contact_weight: None,
        }
    }
}

/// A ready-to-solve doping problem. `norm_bound` is the global derivative
/// bound for the solver configuration (the largest per-block gradient norm
/// at the initial guess, inflated 1.5x to cover drift along the iteration).
#[derive(Debug)]
pub struct DopingProblem {
    pub system: ProblemSystem,
    pub grid: Arc<DeviceGrid>,
    pub profiles: Vec<VoltageProfile>,
    pub truth: ParameterVector,
    pub x0: ParameterVector,
    pub exact_data: Vec<DataBlock>,
    pub norm_bound: f64,
}

pub fn build_doping_problem(setup: &DopingSetup) -> Result<DopingProblem, DopingError> {
    if setup.m < 5 {
        return Err(DopingError::InvalidSetup("grid needs at least 5 nodes per side".into()));
    }
    if !(setup.x_min > 0.0 && setup.x_max > setup.x_min) {
        return Err(DopingError::InvalidSetup(format!(
            "domain bounds must satisfy 0 < x_min < x_max, got [{}, {}]",
            setup.x_min, setup.x_max
        )));
    }
    if !(setup.noise_rel >= 0.0) || !setup.noise_rel.is_finite() {
        return Err(DopingError::InvalidSetup(format!(
            "noise level must be finite and >= 0, got {}",
            setup.noise_rel
        )));
    }
    let mut grid = DeviceGrid::new(setup.m, setup.mu_n).with_x_min(setup.x_min);
    if let Some(w) = &setup.contact_weight {
        if w.len() != setup.m {
            return Err(DopingError::InvalidSetup(format!(
                "contact_weight needs {} values, got {}",
                setup.m,
                w.len()
            )));
        }
        grid = grid.with_contact_weight(w.clone());
    }
    let grid = Arc::new(grid);
    let profiles = make_voltage_profiles(&grid, setup.n_profiles, setup.bump_halfwidth);

    let truth = match &setup.truth {
        Some(t) => {
            if t.rows() != setup.m || t.cols() != setup.m {
                return Err(DopingError::InvalidSetup(format!(
                    "truth profile is {}x{}, device needs {}x{}",
                    t.rows(),
                    t.cols(),
                    setup.m,
                    setup.m
                )));
            }
            t.clone()
        }
        None => default_truth(setup.m),
    };
    let x0 = match &setup.init {
        Some(x) => {
            if x.rows() != setup.m || x.cols() != setup.m {
                return Err(DopingError::InvalidSetup("initial guess does not match the device grid".into()));
            }
            x.clone()
        }
        None => ParameterVector::constant(1.0, setup.m, setup.m, grid.cell_weight())?,
    };

    let exact_data: Vec<DataBlock> = profiles
        .iter()
        .map(|p| doping_forward(&truth, p, &grid).map(DataBlock::scalar))
        .collect::<Result<_, _>>()?;
    let NoisyData { data, noise_levels } = add_noise(&exact_data, setup.noise_rel, setup.seed);

    let mut blocks = Vec::with_capacity(profiles.len());
    let mut norm_bound = 0.0f64;
    for (i, profile) in profiles.iter().enumerate() {
        let g0 = doping_adjoint(&x0, 1.0, profile, &grid)?;
        let bound = 1.5 * g0.norm();
        if bound <= 0.0 {
            return Err(DopingError::InvalidSetup(format!(
                "voltage profile {i} has no effect on the measured current \
                 (no contact node falls inside its bump); increase the bump \
                 halfwidth h or the grid resolution m"
            )));
        }
        norm_bound = norm_bound.max(bound);
        let p_fwd = profile.clone();
        let p_der = profile.clone();
        let p_adj = profile.clone();
        let g_fwd = Arc::clone(&grid);
        let g_der = Arc::clone(&grid);
        let g_adj = Arc::clone(&grid);
        blocks.push(OperatorBlock::nonlinear(
            move |x: &ParameterVector| doping_forward(x, &p_fwd, &g_fwd).map(DataBlock::scalar),
            move |x: &ParameterVector, dx: &ParameterVector| {
                doping_derivative(x, dx, &p_der, &g_der).map(DataBlock::scalar)
            },
            move |x: &ParameterVector, r: &DataBlock| {
                doping_adjoint(x, r.values()[0], &p_adj, &g_adj)
            },
            bound,
            1e-8,
        ));
    }
    let system = ProblemSystem::new(blocks, data, noise_levels, Some(truth.clone()))?;
    Ok(DopingProblem {
        system,
        grid,
        profiles,
        truth,
        x0,
        exact_data,
        norm_bound,
    })
}
