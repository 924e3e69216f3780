//! Limited-view photoacoustic tomography with the circular-mean Radon
//! transform.
//!
//! Detectors sit on the right semicircle of the unit circle. Detector `i`
//! measures the scaled circular means
//!
//! ```text
//! (M_i x)(t) = (1/sqrt(pi)) * integral over the unit sphere of
//!              x(xi_i + t * sigma) d(sigma),   t in [0, 2],
//! ```
//!
//! discretized with a uniform midpoint rule in the angle and point samples
//! by bilinear interpolation on the pixel grid over [-1, 1]^2. The solution
//! space carries the uniform cell quadrature, the data space the trapezoid
//! rule against `t dt`; the adjoint is the exact algebraic transpose with
//! respect to those two inner products, so adjoint consistency holds to
//! rounding. The analytic formula `(M_i* y)(xi) = y(|xi_i - xi|)/sqrt(pi)`
//! is kept as an independent cross-check.

use std::f64::consts::PI;
use std::sync::Arc;

use thiserror::Error;

use crate::operator::{OperatorBlock, ProblemSystem};
use crate::noise::{add_noise, NoisyData};
use crate::space::{DataBlock, ParameterVector, SpaceError};

#[derive(Debug, Error)]
pub enum SceneError {
    #[error("scene line {line}: {message}")]
    Parse { line: usize, message: String },
}

#[derive(Debug, Error)]
pub enum RadonError {
    #[error(transparent)]
    Scene(#[from] SceneError),
    #[error(transparent)]
    Space(#[from] SpaceError),
    #[error("invalid setup: {0}")]
    InvalidSetup(String),
}

/// Measurement geometry: detector centers on the semicircle, the radial
/// sample grid on [0, 2], the angular quadrature directions, and the data
/// quadrature weights.
#[derive(Debug, Clone)]
pub struct DetectorSet {
    centers: Vec<[f64; 2]>,
    radial: Vec<f64>,
    directions: Vec<[f64; 2]>,
    y_weights: Vec<f64>,
}

/// Detector centers `xi_i = (sin(pi i/(N-1)), cos(pi i/(N-1)))`, radial grid
/// `t_j = 2j/(n_t-1)`, and `n_sigma` midpoint directions on the circle.
pub fn make_detectors(n: usize, n_t: usize, n_sigma: usize) -> DetectorSet {
    assert!(n >= 2, "need at least two detectors");
    assert!(n_t >= 2, "need at least two radial samples");
    assert!(n_sigma >= 4, "need at least four angular samples");
    let centers = (0..n)
        .map(|i| {
            let phi = PI * i as f64 / (n - 1) as f64;
            [phi.sin(), phi.cos()]
        })
        .collect();
    let dt = 2.0 / (n_t - 1) as f64;
    let radial: Vec<f64> = (0..n_t).map(|j| dt * j as f64).collect();
    let directions = (0..n_sigma)
        .map(|l| {
            let theta = 2.0 * PI * (l as f64 + 0.5) / n_sigma as f64;
            [theta.cos(), theta.sin()]
        })
        .collect();
    // trapezoid rule against t dt; the t = 0 sample carries weight zero
    let y_weights = radial
        .iter()
        .enumerate()
        .map(|(j, t)| {
            let trap = if j == 0 || j == n_t - 1 { 0.5 } else { 1.0 };
            trap * dt * t
        })
        .collect();
    DetectorSet {
        centers,
        radial,
        directions,
        y_weights,
    }
}

impl DetectorSet {
    pub fn n_detectors(&self) -> usize {
        self.centers.len()
    }

    pub fn centers(&self) -> &[[f64; 2]] {
        &self.centers
    }

    pub fn radial(&self) -> &[f64] {
        &self.radial
    }

    pub fn n_sigma(&self) -> usize {
        self.directions.len()
    }

    pub fn y_weights(&self) -> &[f64] {
        &self.y_weights
    }

    fn scale(&self) -> f64 {
        2.0 * PI / (self.directions.len() as f64 * PI.sqrt())
    }
}

/// Pixel grid over [-1, 1]^2: row 0 is the top row, pixel centers at
/// half-offsets.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GridShape {
    pub rows: usize,
    pub cols: usize,
}

impl GridShape {
    pub fn new(rows: usize, cols: usize) -> Self {
        assert!(rows >= 2 && cols >= 2, "grid must be at least 2x2");
        Self { rows, cols }
    }

    pub fn dx(&self) -> f64 {
        2.0 / self.cols as f64
    }

    pub fn dy(&self) -> f64 {
        2.0 / self.rows as f64
    }

    pub fn cell_weight(&self) -> f64 {
        self.dx() * self.dy()
    }

    /// Center of pixel (row, col).
    pub fn center(&self, row: usize, col: usize) -> [f64; 2] {
        [
            -1.0 + (col as f64 + 0.5) * self.dx(),
            1.0 - (row as f64 + 0.5) * self.dy(),
        ]
    }

    /// Bilinear stencil at a point: up to four (flat index, weight) pairs.
    /// Corners falling off the grid are dropped (zero extension).
    fn stencil(&self, p: [f64; 2]) -> [(usize, f64); 4] {
        let gc = (p[0] + 1.0) / self.dx() - 0.5;
        let gr = (1.0 - p[1]) / self.dy() - 0.5;
        let c0 = gc.floor();
        let r0 = gr.floor();
        let fc = gc - c0;
        let fr = gr - r0;
        let mut out = [(usize::MAX, 0.0); 4];
        let mut slot = 0;
        for (dr, wr) in [(0.0, 1.0 - fr), (1.0, fr)] {
            let r = r0 + dr;
            if r < 0.0 || r >= self.rows as f64 {
                continue;
            }
            for (dc, wc) in [(0.0, 1.0 - fc), (1.0, fc)] {
                let c = c0 + dc;
                if c < 0.0 || c >= self.cols as f64 {
                    continue;
                }
                out[slot] = ((r as usize) * self.cols + c as usize, wr * wc);
                slot += 1;
            }
        }
        out
    }
}

/// Applies the discrete circular-mean operator of detector `i`.
pub fn radon_forward(x: &ParameterVector, det: &DetectorSet, i: usize) -> DataBlock {
    let grid = GridShape::new(x.rows(), x.cols());
    let xi = det.centers[i];
    let scale = det.scale();
    let values = det
        .radial
        .iter()
        .map(|&t| {
            let mut acc = 0.0;
            for d in &det.directions {
                let p = [xi[0] + t * d[0], xi[1] + t * d[1]];
                if p[0] * p[0] + p[1] * p[1] > 1.0 {
                    continue;
                }
                for (idx, w) in grid.stencil(p) {
                    if w != 0.0 && idx != usize::MAX {
                        acc += w * x.values()[idx];
                    }
                }
            }
            scale * acc
        })
        .collect();
    DataBlock::new_unchecked(values, det.y_weights.clone())
}

/// Exact transpose of [`radon_forward`] with respect to the weighted inner
/// products: the same interpolation stencil is scattered with coefficient
/// `scale * w_j * y_j / cell_weight`.
pub fn radon_adjoint(y: &DataBlock, det: &DetectorSet, i: usize, grid: GridShape) -> ParameterVector {
    let xi = det.centers[i];
    let scale = det.scale();
    let inv_cell = 1.0 / grid.cell_weight();
    let mut acc = vec![0.0; grid.rows * grid.cols];
    for (j, &t) in det.radial.iter().enumerate() {
        let coef = scale * det.y_weights[j] * y.values()[j] * inv_cell;
        if coef == 0.0 {
            continue;
        }
        for d in &det.directions {
            let p = [xi[0] + t * d[0], xi[1] + t * d[1]];
            if p[0] * p[0] + p[1] * p[1] > 1.0 {
                continue;
            }
            for (idx, w) in grid.stencil(p) {
                if w != 0.0 && idx != usize::MAX {
                    acc[idx] += coef * w;
                }
            }
        }
    }
    ParameterVector::new_unchecked(acc, grid.rows, grid.cols, grid.cell_weight())
}

/// Analytic adjoint `(M_i* y)(xi) = y(|xi_i - xi|)/sqrt(pi)` evaluated by
/// linear interpolation in `t`; zero outside the unit disc. Cross-check
/// only — the solver uses [`radon_adjoint`].
pub fn radon_adjoint_analytic(
    y: &DataBlock,
    det: &DetectorSet,
    i: usize,
    grid: GridShape,
) -> ParameterVector {
    let xi = det.centers[i];
    let n_t = det.radial.len();
    let dt = 2.0 / (n_t - 1) as f64;
    let inv_sqrt_pi = 1.0 / PI.sqrt();
    ParameterVector::from_fn(grid.rows, grid.cols, grid.cell_weight(), |r, c| {
        let p = grid.center(r, c);
        if p[0] * p[0] + p[1] * p[1] > 1.0 {
            return 0.0;
        }
        let t = ((p[0] - xi[0]).powi(2) + (p[1] - xi[1]).powi(2)).sqrt();
        let g = (t / dt).min((n_t - 1) as f64);
        let j0 = (g.floor() as usize).min(n_t - 2);
        let f = g - j0 as f64;
        inv_sqrt_pi * ((1.0 - f) * y.values()[j0] + f * y.values()[j0 + 1])
    })
    .expect("grid weights are valid")
}

/// One phantom ingredient. Angles are in radians; amplitudes may be
/// negative.
#[derive(Debug, Clone, PartialEq)]
pub enum Shape {
    Disc {
        center: [f64; 2],
        radius: f64,
        amplitude: f64,
    },
    Ellipse {
        center: [f64; 2],
        semi_axes: [f64; 2],
        angle: f64,
        amplitude: f64,
    },
    Gaussian {
        center: [f64; 2],
        width: f64,
        amplitude: f64,
    },
}

impl Shape {
    fn eval(&self, p: [f64; 2]) -> f64 {
        match *self {
            Shape::Disc {
                center,
                radius,
                amplitude,
            } => {
                let dx = p[0] - center[0];
                let dy = p[1] - center[1];
                if dx * dx + dy * dy <= radius * radius {
                    amplitude
                } else {
                    0.0
                }
            }
            Shape::Ellipse {
                center,
                semi_axes,
                angle,
                amplitude,
            } => {
                let dx = p[0] - center[0];
                let dy = p[1] - center[1];
                let (s, c) = angle.sin_cos();
                let u = (dx * c + dy * s) / semi_axes[0];
                let v = (-dx * s + dy * c) / semi_axes[1];
                if u * u + v * v <= 1.0 {
                    amplitude
                } else {
                    0.0
                }
            }
            Shape::Gaussian {
                center,
                width,
                amplitude,
            } => {
                let dx = p[0] - center[0];
                let dy = p[1] - center[1];
                amplitude * (-(dx * dx + dy * dy) / (2.0 * width * width)).exp()
            }
        }
    }

    /// Distance from the origin beyond which the shape is negligible.
    pub fn circumradius(&self) -> f64 {
        match *self {
            Shape::Disc { center, radius, .. } => (center[0].powi(2) + center[1].powi(2)).sqrt() + radius,
            Shape::Ellipse {
                center, semi_axes, ..
            } => (center[0].powi(2) + center[1].powi(2)).sqrt() + semi_axes[0].max(semi_axes[1]),
            Shape::Gaussian { center, width, .. } => {
                (center[0].powi(2) + center[1].powi(2)).sqrt() + 6.0 * width
            }
        }
    }
}

/// Shapes plus the raster grid they are drawn on.
#[derive(Debug, Clone, PartialEq)]
pub struct PhantomSpec {
    pub shapes: Vec<Shape>,
    pub grid: GridShape,
}

/// Rasterizes the shape superposition at pixel centers; zero outside the
/// unit disc.
pub fn make_phantom(spec: &PhantomSpec) -> ParameterVector {
    ParameterVector::from_fn(
        spec.grid.rows,
        spec.grid.cols,
        spec.grid.cell_weight(),
        |r, c| {
            let p = spec.grid.center(r, c);
            if p[0] * p[0] + p[1] * p[1] > 1.0 {
                return 0.0;
            }
            spec.shapes.iter().map(|s| s.eval(p)).sum()
        },
    )
    .expect("grid weights are valid")
}

/// Parses a scene file: one shape per line, `#` comments.
///
/// Lines are `disc cx cy r amp`, `ellipse cx cy a b angle_deg amp`, or
/// `gaussian cx cy sigma amp`.
pub fn parse_scene(text: &str) -> Result<Vec<Shape>, SceneError> {
    let mut shapes = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let body = raw.split('#').next().unwrap_or("").trim();
        if body.is_empty() {
            continue;
        }
        let mut tokens = body.split_whitespace();
        let kind = tokens.next().unwrap();
        let nums: Vec<f64> = tokens
            .map(|t| {
                t.parse::<f64>().map_err(|_| SceneError::Parse {
                    line,
                    message: format!("expected a number, got {t:?}"),
                })
            })
            .collect::<Result<_, _>>()?;
        let expect = |n: usize| -> Result<(), SceneError> {
            if nums.len() == n {
                Ok(())
            } else {
                Err(SceneError::Parse {
                    line,
                    message: format!("{kind} takes {n} numbers, got {}", nums.len()),
                })
            }
        };
        let positive = |value: f64, what: &str| -> Result<(), SceneError> {
            if value.is_finite() && value > 0.0 {
                Ok(())
            } else {
                Err(SceneError::Parse {
                    line,
                    message: format!("{what} must be positive, got {value}"),
                })
            }
        };
        let shape = match kind {
            "disc" => {
                expect(4)?;
                positive(nums[2], "radius")?;
                Shape::Disc {
                    center: [nums[0], nums[1]],
                    radius: nums[2],
                    amplitude: nums[3],
                }
            }
            "ellipse" => {
                expect(6)?;
                positive(nums[2], "semi-axis")?;
                positive(nums[3], "semi-axis")?;
                Shape::Ellipse {
                    center: [nums[0], nums[1]],
                    semi_axes: [nums[2], nums[3]],
                    angle: nums[4].to_radians(),
                    amplitude: nums[5],
                }
            }
            "gaussian" => {
                expect(4)?;
                positive(nums[2], "width")?;
                Shape::Gaussian {
                    center: [nums[0], nums[1]],
                    width: nums[2],
                    amplitude: nums[3],
                }
            }
            other => {
                return Err(SceneError::Parse {
                    line,
                    message: format!("unknown shape {other:?}"),
                })
            }
        };
        if !shape.eval([0.0, 0.0]).is_finite() {
            return Err(SceneError::Parse {
                line,
                message: "amplitude must be finite".into(),
            });
        }
        shapes.push(shape);
    }
    Ok(shapes)
}

/// The phantom scene shipped with the crate.
pub fn default_scene() -> Vec<Shape> {
    parse_scene(include_str!("../scenes/default_phantom.txt")).expect("built-in scene parses")
}

/// Exact data for all detectors, synthesized on a grid refined by the given
/// factor (raster, radial, and angular resolution all scaled) and then
/// restricted to the working radial grid. `refinement = 1` reproduces the
/// working discretization exactly; `refinement >= 2` (the default elsewhere)
/// avoids committing the inverse crime.
pub fn synthesize_data(spec: &PhantomSpec, det: &DetectorSet, refinement: usize) -> Vec<DataBlock> {
    assert!(refinement >= 1, "refinement factor must be at least 1");
    let n = det.n_detectors();
    let n_t = det.radial.len();
    let fine_det = make_detectors(
        n,
        refinement * (n_t - 1) + 1,
        refinement * det.directions.len(),
    );
    let fine_spec = PhantomSpec {
        shapes: spec.shapes.clone(),
        grid: GridShape::new(refinement * spec.grid.rows, refinement * spec.grid.cols),
    };
    let fine_phantom = make_phantom(&fine_spec);
    (0..n)
        .map(|i| {
            let fine = radon_forward(&fine_phantom, &fine_det, i);
            let values = fine
                .values()
                .iter()
                .step_by(refinement)
                .copied()
                .collect::<Vec<_>>();
            DataBlock::new_unchecked(values, det.y_weights.clone())
        })
        .collect()
}

/// Parameters of a tomography experiment; [`Default`] gives the reference
/// configuration (50 detectors, 120x120 grid, 4% noise).
#[derive(Debug, Clone)]
pub struct RadonSetup {
    pub n_detectors: usize,
    pub rows: usize,
    pub cols: usize,
    /// Radial sample count; defaults to `2 * rows`.
    pub n_t: Option<usize>,
    /// Angular sample count; defaults to `4 * n_t`.
    pub n_sigma: Option<usize>,
    pub refinement: usize,
    pub shapes: Vec<Shape>,
    pub noise_rel: f64,
    pub seed: u64,
}

impl Default for RadonSetup {
    fn default() -> Self {
        Self {
            n_detectors: 50,
            rows: 120,
            cols: 120,
            n_t: None,
            n_sigma: None,
            refinement: 2,
            shapes: default_scene(),
            noise_rel: 0.04,
            seed: 0,
        }
    }
}

impl RadonSetup {
    pub fn resolved_n_t(&self) -> usize {
        self.n_t.unwrap_or(2 * self.rows)
    }

    pub fn resolved_n_sigma(&self) -> usize {
        self.n_sigma.unwrap_or(4 * self.resolved_n_t())
    }
}

/// A ready-to-solve tomography problem.
#[derive(Debug)]
pub struct RadonProblem {
    pub system: ProblemSystem,
    pub detectors: Arc<DetectorSet>,
    pub grid: GridShape,
    pub truth: ParameterVector,
    pub exact_data: Vec<DataBlock>,
}

/// Builds detector set, phantom, synthesized data, noise, and the operator
/// blocks (norm bound 1 from the continuous theory).
pub fn build_radon_problem(setup: &RadonSetup) -> Result<RadonProblem, RadonError> {
    if setup.n_detectors < 2 {
        return Err(RadonError::InvalidSetup("need at least two detectors".into()));
    }
    if setup.rows < 2 || setup.cols < 2 {
        return Err(RadonError::InvalidSetup("grid must be at least 2x2".into()));
    }
    if setup.refinement < 1 {
        return Err(RadonError::InvalidSetup("refinement must be at least 1".into()));
    }
    if !(setup.noise_rel >= 0.0) || !setup.noise_rel.is_finite() {
        return Err(RadonError::InvalidSetup(format!(
            "noise level must be finite and >= 0, got {}",
            setup.noise_rel
        )));
    }
    let grid = GridShape::new(setup.rows, setup.cols);
    let det = Arc::new(make_detectors(
        setup.n_detectors,
        setup.resolved_n_t(),
        setup.resolved_n_sigma(),
    ));
    let spec = PhantomSpec {
        shapes: setup.shapes.clone(),
        grid,
    };
    let truth = make_phantom(&spec);
    let exact_data = synthesize_data(&spec, &det, setup.refinement);
    let NoisyData { data, noise_levels } = add_noise(&exact_data, setup.noise_rel, setup.seed);

    let blocks = (0..setup.n_detectors)
        .map(|i| {
            let fwd_det = Arc::clone(&det);
            let adj_det = Arc::clone(&det);
            OperatorBlock::linear(
                move |x: &ParameterVector| Ok(radon_forward(x, &fwd_det, i)),
                move |y: &DataBlock| Ok(radon_adjoint(y, &adj_det, i, grid)),
                1.0,
                1e-10,
            )
        })
        .collect();
    let system = ProblemSystem::new(blocks, data, noise_levels, Some(truth.clone()))?;
    Ok(RadonProblem {
        system,
        detectors: det,
        grid,
        truth,
        exact_data,
    })
}
