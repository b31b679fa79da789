//! Holomorphic sections, bundle metrics, curvature and Chern polynomials.
//!
//! Sections come from the exact eigenvector recursion of the shift, never from
//! a numerical nullspace: a truncated nilpotent shift has no kernel at `w != 0`.
//! Curvature is the coefficient `K(w) = -d/dwbar (h^{-1} d/dw h)`; for a line
//! bundle this is `-(1/4) Laplacian ln ||t(w)||^2`.

use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::error::{CdError, Result};
use crate::flag::FlagOperator;
use crate::shift::WeightedShift;

const ZERO: Complex64 = Complex64::new(0.0, 0.0);
const ONE: Complex64 = Complex64::new(1.0, 0.0);
const I: Complex64 = Complex64::new(0.0, 1.0);

/// Hard cap on sampled radii.
pub const R_MAX: f64 = 0.85;
/// Largest legal stencil reach, `R_MAX + 2 * 1e-2`; default certification
/// radius for sections.
pub const DEFAULT_SECTION_RADIUS: f64 = 0.87;
/// Discarded section mass tolerated at the certification radius.
pub const TAIL_BOUND: f64 = 1e-12;
pub const DEFAULT_FD_STEP: f64 = 1e-3;

/// Polar sampling of the disk. Points are ordered radius-major.
#[derive(Debug, Clone, PartialEq)]
pub struct DiskGrid {
    radii: Vec<f64>,
    angles: Vec<f64>,
    fd_step: f64,
    richardson: bool,
}

impl DiskGrid {
    pub fn new(radii: Vec<f64>, angles: Vec<f64>, fd_step: f64) -> Result<Self> {
        if radii.is_empty() || angles.is_empty() {
            return Err(CdError::Grid("grid needs at least one radius and one angle".into()));
        }
        if radii.iter().any(|r| !(0.0..=R_MAX).contains(r)) {
            return Err(CdError::Grid(format!("radii must lie in [0, {R_MAX}]")));
        }
        if radii.windows(2).any(|w| w[1] <= w[0]) {
            return Err(CdError::Grid("radii must be strictly increasing".into()));
        }
        if angles.iter().any(|a| !(0.0..2.0 * PI).contains(a)) {
            return Err(CdError::Grid("angles must lie in [0, 2pi)".into()));
        }
        if !(1e-4..=1e-2).contains(&fd_step) {
            return Err(CdError::Grid(format!("fd step {fd_step} outside [1e-4, 1e-2]")));
        }
        let r_max = *radii.last().unwrap();
        if r_max + 2.0 * fd_step >= 1.0 {
            return Err(CdError::Grid("stencil leaves the unit disk".into()));
        }
        Ok(DiskGrid {
            radii,
            angles,
            fd_step,
            richardson: true,
        })
    }

    /// `n_radii` equispaced radii in `[0, r_max]` and `n_angles` equispaced
    /// angles in `[0, 2pi)`.
    pub fn polar(r_max: f64, n_radii: usize, n_angles: usize) -> Result<Self> {
        let radii = if n_radii <= 1 {
            vec![r_max]
        } else {
            (0..n_radii).map(|i| r_max * i as f64 / (n_radii - 1) as f64).collect()
        };
        let angles = (0..n_angles).map(|k| 2.0 * PI * k as f64 / n_angles as f64).collect();
        Self::new(radii, angles, DEFAULT_FD_STEP)
    }

    pub fn single(w: Complex64) -> Result<Self> {
        let (r, mut theta) = w.to_polar();
        if theta < 0.0 {
            theta += 2.0 * PI;
        }
        if theta >= 2.0 * PI {
            theta = 0.0;
        }
        Self::new(vec![r], vec![theta], DEFAULT_FD_STEP)
    }

    pub fn with_fd_step(mut self, h: f64) -> Result<Self> {
        self = Self::new(self.radii, self.angles, h)?.with_richardson(self.richardson);
        Ok(self)
    }

    pub fn with_richardson(mut self, on: bool) -> Self {
        self.richardson = on;
        self
    }

    pub fn radii(&self) -> &[f64] {
        &self.radii
    }

    pub fn angles(&self) -> &[f64] {
        &self.angles
    }

    pub fn fd_step(&self) -> f64 {
        self.fd_step
    }

    pub fn richardson(&self) -> bool {
        self.richardson
    }

    pub fn r_max(&self) -> f64 {
        *self.radii.last().unwrap()
    }

    /// Farthest point touched by any stencil.
    pub fn reach(&self) -> f64 {
        self.r_max() + 2.0 * self.fd_step
    }

    pub fn len(&self) -> usize {
        self.radii.len() * self.angles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn points(&self) -> Vec<Complex64> {
        self.radii
            .iter()
            .flat_map(|&r| self.angles.iter().map(move |&a| Complex64::from_polar(r, a)))
            .collect()
    }
}

type CoeffFn = dyn Fn(Complex64) -> DVector<Complex64> + Send + Sync;

/// Holomorphic vector field `w -> coeffs(w)`, accurate for `|w|` up to
/// `certified_radius` with relative discarded mass `tail_estimate`.
#[derive(Clone)]
pub struct Section {
    coeffs: Arc<CoeffFn>,
    source_dim: usize,
    tail_estimate: f64,
    certified_radius: f64,
}

impl fmt::Debug for Section {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Section")
            .field("source_dim", &self.source_dim)
            .field("tail_estimate", &self.tail_estimate)
            .field("certified_radius", &self.certified_radius)
            .finish()
    }
}

impl Section {
    pub fn from_fn(
        source_dim: usize,
        certified_radius: f64,
        tail_estimate: f64,
        f: impl Fn(Complex64) -> DVector<Complex64> + Send + Sync + 'static,
    ) -> Self {
        Section {
            coeffs: Arc::new(f),
            source_dim,
            tail_estimate,
            certified_radius,
        }
    }

    pub fn coeffs(&self, w: Complex64) -> DVector<Complex64> {
        (self.coeffs)(w)
    }

    pub fn norm_sqr(&self, w: Complex64) -> f64 {
        self.coeffs(w).norm_squared()
    }

    pub fn source_dim(&self) -> usize {
        self.source_dim
    }

    pub fn tail_estimate(&self) -> f64 {
        self.tail_estimate
    }

    pub fn certified_radius(&self) -> f64 {
        self.certified_radius
    }

    /// `w -> m * coeffs(w)` for a fixed matrix `m`.
    pub fn mapped(&self, m: Arc<DMatrix<Complex64>>) -> Section {
        let inner = self.coeffs.clone();
        Section {
            coeffs: Arc::new(move |w| m.as_ref() * inner(w)),
            ..self.clone()
        }
    }

    fn check_reach(&self, grid: &DiskGrid) -> Result<()> {
        if grid.reach() > self.certified_radius + 1e-12 {
            return Err(CdError::Truncation {
                required_dim: self.source_dim * 2,
                reason: format!(
                    "section certified up to |w| = {} but the stencil reaches {}",
                    self.certified_radius,
                    grid.reach()
                ),
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricSample {
    pub w: Complex64,
    pub h_matrix: DMatrix<Complex64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CurvatureMethod {
    ClosedForm,
    FiniteDifference,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CurvatureField {
    pub grid: DiskGrid,
    pub values: Vec<DMatrix<Complex64>>,
    pub method: CurvatureMethod,
}

impl CurvatureField {
    /// Real parts of the `1 x 1` values; `None` for matrix fields.
    pub fn scalar_values(&self) -> Option<Vec<f64>> {
        self.values
            .iter()
            .map(|m| (m.nrows() == 1).then(|| m[(0, 0)].re))
            .collect()
    }

    /// `-lambda (1 - |w|^2)^{-2}` sampled on the grid.
    pub fn bergman_closed_form(lambda: f64, grid: &DiskGrid) -> Self {
        let values = grid
            .points()
            .into_iter()
            .map(|w| {
                let k = -lambda / (1.0 - w.norm_sqr()).powi(2);
                DMatrix::from_element(1, 1, Complex64::new(k, 0.0))
            })
            .collect();
        CurvatureField {
            grid: grid.clone(),
            values,
            method: CurvatureMethod::ClosedForm,
        }
    }
}

/// Per point `c_0..c_n` of the Chern polynomial `sum_m c_m lambda^m`.
#[derive(Debug, Clone, PartialEq)]
pub struct ChernField {
    pub grid: DiskGrid,
    pub coefficients: Vec<Vec<Complex64>>,
}

/// Coefficients of `t(w)` at a real radius, used for tail bounds.
fn section_magnitudes(weights: &[Complex64], rho: f64) -> Vec<f64> {
    let mut c = Vec::with_capacity(weights.len() + 1);
    c.push(1.0);
    for a in weights {
        let next = c.last().unwrap() * rho / a.norm();
        c.push(next);
    }
    c
}

fn relative_tail(c: &[f64]) -> f64 {
    let norm = c.iter().map(|x| x * x).sum::<f64>().sqrt();
    c.last().unwrap() / norm
}

/// `t(w) = Ker(T - w)` with `c_0 = 1`, certified up to [`DEFAULT_SECTION_RADIUS`].
pub fn eigen_section(shift: &WeightedShift) -> Result<Section> {
    eigen_section_within(shift, DEFAULT_SECTION_RADIUS)
}

/// Same as [`eigen_section`] with an explicit certification radius.
pub fn eigen_section_within(shift: &WeightedShift, radius: f64) -> Result<Section> {
    let weights = shift.weights().to_vec();
    if let Some(k) = weights.iter().position(|a| *a == ZERO) {
        return Err(CdError::Structural(format!("weight a_({k},{}) is zero", k + 1)));
    }
    let a0 = shift.diag();
    let rho = radius + a0.norm();
    let mags = section_magnitudes(&weights, rho);
    let tail = relative_tail(&mags);
    if !(tail < TAIL_BOUND) {
        return Err(CdError::Truncation {
            required_dim: required_dim(shift, rho),
            reason: format!("section tail {tail:e} at |w| = {radius} exceeds {TAIL_BOUND:e}"),
        });
    }
    let dim = shift.dim();
    Ok(Section::from_fn(dim, radius, tail, move |w| {
        let mut c = DVector::from_element(dim, ZERO);
        c[0] = ONE;
        let z = w - a0;
        for k in 0..dim - 1 {
            c[k + 1] = c[k] * z / weights[k];
        }
        c
    }))
}

fn required_dim(shift: &WeightedShift, rho: f64) -> usize {
    let Some(lambda) = shift.lambda() else {
        return shift.dim() * 2;
    };
    let mut dim = shift.dim();
    while dim < 1 << 24 {
        dim *= 2;
        let w: Vec<Complex64> = (1..dim)
            .map(|k| {
                let k = k as f64;
                Complex64::new((k / (k + lambda - 1.0)).sqrt(), 0.0)
            })
            .collect();
        if relative_tail(&section_magnitudes(&w, rho)) < TAIL_BOUND {
            break;
        }
    }
    dim
}

/// Eigen-section of an upper-triangular matrix with constant diagonal `d`,
/// taken as the normalized `(A - z)^{-1} e_{N-1}` so that the residual of
/// the truncation sits in the last row only. Back-substitution is rescaled to
/// stay in range; `z = d` returns `e_0`.
pub fn triangular_section(a: &DMatrix<Complex64>, radius: f64) -> Result<Section> {
    let n = a.nrows();
    if n != a.ncols() || n < 2 {
        return Err(CdError::param("op", "square matrix of dim >= 2 required"));
    }
    let d = a[(0, 0)];
    for i in 0..n {
        if (a[(i, i)] - d).norm() > 1e-12 * (1.0 + d.norm()) {
            return Err(CdError::Structural("diagonal is not constant".into()));
        }
        for j in 0..i {
            if a[(i, j)] != ZERO {
                return Err(CdError::Structural("matrix is not upper triangular".into()));
            }
        }
    }
    let a = Arc::new(a.clone());
    let eval = {
        let a = a.clone();
        move |z: Complex64| -> DVector<Complex64> {
            let mut x = DVector::from_element(n, ZERO);
            let shift = d - z;
            if shift.norm() < 1e-300 {
                x[0] = ONE;
                return x;
            }
            x[n - 1] = ONE;
            for i in (0..n - 1).rev() {
                let mut s = ZERO;
                for k in i + 1..n {
                    s += a[(i, k)] * x[k];
                }
                x[i] = -s / shift;
                if x[i].norm() > 1e150 {
                    x.iter_mut().for_each(|v| *v *= 1e-150);
                }
            }
            let x0 = x[0];
            x / x0
        }
    };
    let probe = eval(Complex64::new(radius, 0.0) + d);
    let tail = probe[n - 1].norm() / probe.norm();
    Ok(Section::from_fn(n, radius, tail, eval))
}

/// `d^2/(dw dwbar) f = (1/4) Laplacian f` by the 5-point stencil, optionally
/// with one Richardson level (`h` and `h/2`).
pub fn dwdwbar(f: &dyn Fn(Complex64) -> f64, w: Complex64, h: f64, richardson: bool) -> f64 {
    let lap = |h: f64| {
        let f0 = f(w);
        (f(w + h) + f(w - h) + f(w + I * h) + f(w - I * h) - 4.0 * f0) / (h * h)
    };
    if richardson {
        let coarse = lap(h);
        let fine = lap(h / 2.0);
        0.25 * (4.0 * fine - coarse) / 3.0
    } else {
        0.25 * lap(h)
    }
}

pub fn curvature_scalar(section: &Section, grid: &DiskGrid) -> Result<CurvatureField> {
    section.check_reach(grid)?;
    let log_norm = |w: Complex64| section.norm_sqr(w).ln();
    let values = grid
        .points()
        .into_iter()
        .map(|w| {
            let k = -dwdwbar(&log_norm, w, grid.fd_step(), grid.richardson());
            DMatrix::from_element(1, 1, Complex64::new(k, 0.0))
        })
        .collect();
    Ok(CurvatureField {
        grid: grid.clone(),
        values,
        method: CurvatureMethod::FiniteDifference,
    })
}

fn gram(frame: &[Section], w: Complex64) -> DMatrix<Complex64> {
    let cols: Vec<DVector<Complex64>> = frame.iter().map(|s| s.coeffs(w)).collect();
    let n = cols.len();
    DMatrix::from_fn(n, n, |j, k| cols[j].dotc(&cols[k]))
}

/// `-dbar(h^{-1} d h)` at `w` with nested centered differences of step `h`.
fn matrix_curvature_at(frame: &[Section], w: Complex64, h: f64) -> Result<DMatrix<Complex64>> {
    let hm = |z: Complex64| gram(frame, z);
    let d = |z: Complex64| -> DMatrix<Complex64> {
        let dx = (hm(z + h) - hm(z - h)) / Complex64::new(2.0 * h, 0.0);
        let dy = (hm(z + I * h) - hm(z - I * h)) / Complex64::new(2.0 * h, 0.0);
        (dx - dy * I) * Complex64::new(0.5, 0.0)
    };
    let g = |z: Complex64| -> Result<DMatrix<Complex64>> {
        let inv = hm(z)
            .try_inverse()
            .ok_or_else(|| CdError::numeric(format!("metric singular near w = {z}")))?;
        Ok(inv * d(z))
    };
    let gx = (g(w + h)? - g(w - h)?) / Complex64::new(2.0 * h, 0.0);
    let gy = (g(w + I * h)? - g(w - I * h)?) / Complex64::new(2.0 * h, 0.0);
    Ok(-(gx + gy * I) * Complex64::new(0.5, 0.0))
}

pub fn metric_and_curvature_matrix(
    frame: &[Section],
    grid: &DiskGrid,
) -> Result<(Vec<MetricSample>, CurvatureField)> {
    if frame.is_empty() {
        return Err(CdError::param("frame", "empty frame"));
    }
    for s in frame {
        s.check_reach(grid)?;
    }
    let h = grid.fd_step();
    let mut metrics = Vec::with_capacity(grid.len());
    let mut values = Vec::with_capacity(grid.len());
    for w in grid.points() {
        let hw = gram(frame, w);
        let smin = crate::linalg::singular_values(&hw)?
            .last()
            .copied()
            .unwrap_or(0.0)
            .max(0.0)
            .sqrt();
        if !(smin > 1e-10) {
            return Err(CdError::Rank { w, sigma_min: smin });
        }
        let k = if grid.richardson() {
            let coarse = matrix_curvature_at(frame, w, h)?;
            let fine = matrix_curvature_at(frame, w, h / 2.0)?;
            (fine * Complex64::new(4.0, 0.0) - coarse) / Complex64::new(3.0, 0.0)
        } else {
            matrix_curvature_at(frame, w, h)?
        };
        metrics.push(MetricSample { w, h_matrix: hw });
        values.push(k);
    }
    Ok((
        metrics,
        CurvatureField {
            grid: grid.clone(),
            values,
            method: CurvatureMethod::FiniteDifference,
        },
    ))
}

/// Coefficients of `prod_j (1 + lambda x_j)`, i.e. elementary symmetric
/// polynomials of `x`.
pub fn elementary_symmetric(x: &[Complex64]) -> Vec<Complex64> {
    let mut e = vec![ONE];
    for &xj in x {
        e.push(ZERO);
        for m in (1..e.len()).rev() {
            let prev = e[m - 1];
            e[m] += xj * prev;
        }
    }
    e
}

pub fn chern_polynomial(curvatures: &[CurvatureField]) -> Result<ChernField> {
    let first = curvatures
        .first()
        .ok_or_else(|| CdError::param("curvatures", "at least one field required"))?;
    if curvatures.iter().any(|c| c.grid != first.grid) {
        return Err(CdError::param("curvatures", "fields are sampled on different grids"));
    }
    let scalars: Vec<Vec<f64>> = curvatures
        .iter()
        .map(|c| c.scalar_values().ok_or_else(|| CdError::param("curvatures", "scalar fields required")))
        .collect::<Result<_>>()?;
    let factor = I / (2.0 * PI);
    let coefficients = (0..first.grid.len())
        .map(|p| {
            let x: Vec<Complex64> = scalars.iter().map(|k| factor * k[p]).collect();
            elementary_symmetric(&x)
        })
        .collect();
    Ok(ChernField {
        grid: first.grid.clone(),
        coefficients,
    })
}

/// Recovers `{K_j}` from Chern coefficients `c_0..c_n`: each root `r` of
/// `sum_m c_m lambda^m` gives `K = 2 pi i / r`; a degree drop means the
/// missing curvatures vanish.
pub fn curvatures_from_chern(coeffs: &[Complex64]) -> Result<Vec<Complex64>> {
    let n = coeffs.len().saturating_sub(1);
    let scale = coeffs.iter().map(|c| c.norm()).fold(0.0, f64::max);
    let mut deg = n;
    while deg > 0 && coeffs[deg].norm() <= 1e-14 * scale {
        deg -= 1;
    }
    let mut out = vec![ZERO; n - deg];
    if deg == 0 {
        return Ok(out);
    }
    let roots = polynomial_roots(&coeffs[..=deg])?;
    out.extend(roots.into_iter().map(|r| 2.0 * PI * I / r));
    Ok(out)
}

/// Roots of `sum_m c_m x^m` from companion-matrix eigenvalues, polished by
/// Newton steps.
pub fn polynomial_roots(c: &[Complex64]) -> Result<Vec<Complex64>> {
    let deg = c.len() - 1;
    let lead = c[deg];
    if deg == 0 || lead == ZERO {
        return Err(CdError::param("coefficients", "polynomial of positive degree required"));
    }
    let comp = faer::Mat::<Complex64>::from_fn(deg, deg, |i, j| {
        if i == 0 {
            -c[deg - 1 - j] / lead
        } else if i == j + 1 {
            ONE
        } else {
            ZERO
        }
    });
    let mut roots = comp
        .eigenvalues()
        .map_err(|e| CdError::numeric(format!("companion eigenvalues failed: {e:?}")))?;
    let eval = |x: Complex64| {
        let mut p = ZERO;
        let mut dp = ZERO;
        for &ck in c.iter().rev() {
            dp = dp * x + p;
            p = p * x + ck;
        }
        (p, dp)
    };
    for r in roots.iter_mut() {
        for _ in 0..3 {
            let (p, dp) = eval(*r);
            if dp == ZERO {
                break;
            }
            let step = p / dp;
            if !(step.re.is_finite() && step.im.is_finite()) {
                break;
            }
            *r -= step;
        }
    }
    Ok(roots)
}

/// Largest pointwise distance between two multisets under greedy nearest
/// matching.
pub fn multiset_distance(a: &[Complex64], b: &[Complex64]) -> f64 {
    if a.len() != b.len() {
        return f64::INFINITY;
    }
    let mut left: Vec<Complex64> = b.to_vec();
    let mut worst: f64 = 0.0;
    for x in a {
        let (idx, d) = left
            .iter()
            .enumerate()
            .map(|(i, y)| (i, (x - y).norm()))
            .min_by(|p, q| p.1.total_cmp(&q.1))
            .unwrap();
        worst = worst.max(d);
        left.swap_remove(idx);
    }
    worst
}

/// Frame `gamma_1..gamma_n` of `Ker(T - w)` for a flag operator.
///
/// `gamma_j` has block `j` equal to `t_j(w)` and, for `k < j`, block `k` solving
/// `(T_kk - w) x_k = -sum_{l>k} T_{k,l} x_l`. That system is solved by the
/// forward recursion of the bidiagonal block with `x_k[0] = 0`, which keeps
/// the residual in the last row (a discarded tail) and is stable for `|w| < 1`.
/// Convergence is checked at every point of `points` against a rebuild at
/// twice the truncation.
pub fn solve_frame(flag: &FlagOperator, points: &[Complex64]) -> Result<Vec<Section>> {
    let frame = frame_sections(flag)?;
    if points.is_empty() {
        return Ok(frame);
    }
    let n_dim = flag.block_dim();
    let big = flag.at_dim(2 * n_dim)?;
    let frame_big = frame_sections(&big)?;
    for (j, (s, sb)) in frame.iter().zip(&frame_big).enumerate() {
        for &w in points {
            let v = s.coeffs(w);
            let vb = sb.coeffs(w);
            let mut diff = 0.0;
            for k in 0..flag.n() {
                for i in 0..n_dim {
                    diff += (v[k * n_dim + i] - vb[k * 2 * n_dim + i]).norm_sqr();
                }
            }
            let rel = diff.sqrt() / vb.norm();
            if !(rel < 1e-8) {
                return Err(CdError::Truncation {
                    required_dim: 2 * n_dim,
                    reason: format!("frame vector {} changes by {rel:e} under doubling at w = {w}", j + 1),
                });
            }
        }
    }
    Ok(frame)
}

fn frame_sections(flag: &FlagOperator) -> Result<Vec<Section>> {
    let n = flag.n();
    let dim = flag.block_dim();
    let mut tail: f64 = 0.0;
    for k in 0..n {
        tail = tail.max(eigen_section(flag.diag_block(k))?.tail_estimate());
    }
    let flag = Arc::new(flag.clone());
    let mut out = Vec::with_capacity(n);
    for j in 0..n {
        let flag = flag.clone();
        out.push(Section::from_fn(n * dim, DEFAULT_SECTION_RADIUS, tail, move |w| {
            frame_vector(&flag, j, w)
        }));
    }
    Ok(out)
}

fn frame_vector(flag: &FlagOperator, j: usize, w: Complex64) -> DVector<Complex64> {
    let n = flag.n();
    let dim = flag.block_dim();
    let mut blocks: Vec<Vec<Complex64>> = vec![Vec::new(); n];
    let tj = flag.diag_block(j);
    blocks[j] = forward_solve(tj, w, &vec![ZERO; dim], ONE);
    for k in (0..j).rev() {
        let mut rhs = vec![ZERO; dim];
        for (l, xl) in blocks.iter().enumerate().take(j + 1).skip(k + 1) {
            if let Some(b) = flag.block(k, l) {
                let y = b.matvec(xl);
                rhs.iter_mut().zip(y).for_each(|(r, v)| *r -= v);
            }
        }
        blocks[k] = forward_solve(flag.diag_block(k), w, &rhs, ZERO);
    }
    let mut out = DVector::from_element(n * dim, ZERO);
    for (k, b) in blocks.iter().enumerate().take(j + 1) {
        for (i, v) in b.iter().enumerate() {
            out[k * dim + i] = *v;
        }
    }
    out
}

/// Rows `0..N-2` of `(T - w) x = r` for a bidiagonal `T`, given `x[0]`.
fn forward_solve(t: &WeightedShift, w: Complex64, r: &[Complex64], x0: Complex64) -> Vec<Complex64> {
    let a = t.weights();
    let z = w - t.diag();
    let mut x = Vec::with_capacity(r.len());
    x.push(x0);
    for i in 0..r.len() - 1 {
        let next = (r[i] + z * x[i]) / a[i];
        x.push(next);
    }
    x
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::shift::build_bergman_shift;

    #[test]
    fn geometric_section_norm() {
        let s = eigen_section(&build_bergman_shift(1.0, 256).unwrap()).unwrap();
        let c = s.coeffs(Complex64::new(0.5, 0.0));
        assert_eq!(c[0], ONE);
        assert!((c[1].re - 0.5).abs() < 1e-16 && (c[2].re - 0.25).abs() < 1e-16);
        assert!((c.norm_squared() - 4.0 / 3.0).abs() < 1e-14);
        let e0 = s.coeffs(ZERO);
        assert_eq!(e0.norm_squared(), 1.0);
    }

    #[test]
    fn short_truncation_is_reported() {
        let err = eigen_section(&build_bergman_shift(2.0, 64).unwrap()).unwrap_err();
        match err {
            CdError::Truncation { required_dim, .. } => assert!(required_dim > 64),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn zero_weight_is_structural() {
        let s = WeightedShift::new(ZERO, vec![ONE, ZERO, ONE]).unwrap();
        assert!(matches!(eigen_section(&s), Err(CdError::Structural(_))));
    }

    #[test]
    fn grid_validation() {
        assert!(DiskGrid::new(vec![0.9], vec![0.0], 1e-3).is_err());
        assert!(DiskGrid::new(vec![0.5], vec![0.0], 1e-1).is_err());
        assert!(DiskGrid::new(vec![0.5, 0.4], vec![0.0], 1e-3).is_err());
        assert!(DiskGrid::new(vec![0.5], vec![2.0 * PI], 1e-3).is_err());
        let g = DiskGrid::polar(0.8, 9, 12).unwrap();
        assert_eq!(g.len(), 108);
        assert_eq!(g.points()[12], Complex64::from_polar(0.1, 0.0));
    }

    #[test]
    fn elementary_symmetric_small() {
        let e = elementary_symmetric(&[Complex64::new(2.0, 0.0), Complex64::new(3.0, 0.0)]);
        assert_eq!(e, vec![ONE, Complex64::new(5.0, 0.0), Complex64::new(6.0, 0.0)]);
    }

    #[test]
    fn roots_of_known_polynomial() {
        // (x - 1)(x - 2i) = x^2 - (1 + 2i) x + 2i
        let c = [Complex64::new(0.0, 2.0), Complex64::new(-1.0, -2.0), ONE];
        let r = polynomial_roots(&c).unwrap();
        assert!(multiset_distance(&r, &[ONE, Complex64::new(0.0, 2.0)]) < 1e-14);
    }

    #[test]
    fn chern_with_zero_curvature_drops_degree() {
        let k = curvatures_from_chern(&[ONE, ZERO, ZERO]).unwrap();
        assert_eq!(k, vec![ZERO, ZERO]);
    }

    #[test]
    fn triangular_section_matches_shift_section() {
        let s = build_bergman_shift(2.0, 200).unwrap();
        let exact = eigen_section_within(&s, 0.7).unwrap();
        let tri = triangular_section(&s.to_dense(), 0.7).unwrap();
        for w in [Complex64::new(0.3, 0.2), Complex64::new(-0.6, 0.1), Complex64::new(1e-3, 0.0)] {
            let (a, b) = (exact.coeffs(w), tri.coeffs(w));
            assert!((a - b).norm() < 1e-12, "w = {w}");
        }
    }
}
