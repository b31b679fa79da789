//! Sylvester operators `X -> T1 X - X T2`: solving, kernels with truncation
//! filtering, the divergence recursion behind Property (H), and the compact
//! correction between flags that share their diagonal and first
//! superdiagonal.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::band::UpperBand;
use crate::error::{CdError, Result};
use crate::fit::linear_fit;
use crate::flag::{BlockFlag, CouplingSeries, FlagOperator};
use crate::linalg::{pinv_solve, solve_checked, spectral_norm, svd};
use crate::shift::{build_bergman_shift, OperatorMatrix};

const ZERO: Complex64 = Complex64::new(0.0, 0.0);

/// Default relative singular-value cutoff for [`kernel_basis`].
pub const DEFAULT_KERNEL_TOL: f64 = 1e-10;
/// Largest per-side dimension accepted by [`kernel_basis`].
pub const MAX_KERNEL_DIM: usize = 64;
/// Relative window change under doubling below which a kernel element is kept.
pub const STABILITY_TOL: f64 = 1e-3;

/// Rebuilds an operator at a requested dimension.
pub type OperatorFamily = Arc<dyn Fn(usize) -> Result<DMatrix<Complex64>> + Send + Sync>;

/// `tau(X) = T1 X - X T2`, optionally carrying families that rebuild `T1`
/// and `T2` at other truncations (needed by the kernel filter).
#[derive(Clone)]
pub struct SylvesterMap {
    left: OperatorMatrix,
    right: OperatorMatrix,
    families: Option<(OperatorFamily, OperatorFamily)>,
}

impl fmt::Debug for SylvesterMap {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SylvesterMap")
            .field("dims", &self.dims())
            .field("families", &self.families.is_some())
            .finish()
    }
}

impl SylvesterMap {
    pub fn new(left: OperatorMatrix, right: OperatorMatrix) -> Self {
        SylvesterMap {
            left,
            right,
            families: None,
        }
    }

    pub fn from_matrices(left: DMatrix<Complex64>, right: DMatrix<Complex64>) -> Result<Self> {
        Ok(Self::new(OperatorMatrix::new(left, None)?, OperatorMatrix::new(right, None)?))
    }

    /// Map built from families at `dim`; the families stay attached.
    pub fn from_families(left: OperatorFamily, right: OperatorFamily, dim: usize) -> Result<Self> {
        let l = OperatorMatrix::new(left(dim)?, None)?;
        let r = OperatorMatrix::new(right(dim)?, None)?;
        Ok(SylvesterMap {
            left: l,
            right: r,
            families: Some((left, right)),
        })
    }

    /// `T1 = T^{(lambda1)}`, `T2 = T^{(lambda2)}`; the forward order is
    /// `lambda1 < lambda2`.
    pub fn bergman_pair(lambda1: f64, lambda2: f64, dim: usize) -> Result<Self> {
        build_bergman_shift(lambda1, 2)?;
        build_bergman_shift(lambda2, 2)?;
        let fam = |l: f64| -> OperatorFamily {
            Arc::new(move |d| Ok(build_bergman_shift(l, d)?.to_dense()))
        };
        Self::from_families(fam(lambda1), fam(lambda2), dim)
    }

    /// `tau_{B_ll, A_jj}` for two flags, rebuildable at any truncation.
    pub fn between_blocks(b: Arc<dyn BlockFlag>, l: usize, a: Arc<dyn BlockFlag>, j: usize, dim: usize) -> Result<Self> {
        let left: OperatorFamily = Arc::new(move |d| Ok(b.rebuilt(d)?.dense_block(l, l)));
        let right: OperatorFamily = Arc::new(move |d| Ok(a.rebuilt(d)?.dense_block(j, j)));
        Self::from_families(left, right, dim)
    }

    pub fn left(&self) -> &DMatrix<Complex64> {
        self.left.entries()
    }

    pub fn right(&self) -> &DMatrix<Complex64> {
        self.right.entries()
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.left.dim(), self.right.dim())
    }

    pub fn has_families(&self) -> bool {
        self.families.is_some()
    }

    /// The same map at another truncation; requires families.
    pub fn at_dim(&self, dim: usize) -> Result<Self> {
        let (l, r) = self
            .families
            .clone()
            .ok_or_else(|| CdError::Precondition("map carries no operator families".into()))?;
        Self::from_families(l, r, dim)
    }

    pub fn apply(&self, x: &DMatrix<Complex64>) -> DMatrix<Complex64> {
        self.left() * x - x * self.right()
    }

    /// Matrix of `vec(X) -> vec(tau(X))` with column-major `vec`:
    /// `I (x) T1 - T2^T (x) I`.
    pub fn vectorized(&self) -> DMatrix<Complex64> {
        let (d1, d2) = self.dims();
        let (t1, t2) = (self.left(), self.right());
        let mut m = DMatrix::zeros(d1 * d2, d1 * d2);
        for j in 0..d2 {
            for i in 0..d1 {
                let row = i + j * d1;
                for k in 0..d1 {
                    m[(row, k + j * d1)] += t1[(i, k)];
                }
                for k in 0..d2 {
                    m[(row, i + k * d1)] -= t2[(k, j)];
                }
            }
        }
        m
    }

    fn scale(&self) -> f64 {
        spectral_norm(self.left()).max(spectral_norm(self.right()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SolveMode {
    /// Fail with a solvability error when the system is singular.
    #[default]
    Exact,
    /// Fall back to the minimal-norm least-squares solution.
    LeastSquares,
}

fn is_upper_triangular(m: &DMatrix<Complex64>) -> bool {
    (0..m.ncols()).all(|j| (j + 1..m.nrows()).all(|i| m[(i, j)] == ZERO))
}

/// Solves `T1 X - X T2 = rhs`.
///
/// Jointly upper-triangular pairs with separated diagonals are handled by a
/// triangular sweep; everything else goes through the dense vectorized system.
pub fn sylvester_solve(map: &SylvesterMap, rhs: &DMatrix<Complex64>, mode: SolveMode) -> Result<DMatrix<Complex64>> {
    let (d1, d2) = map.dims();
    if rhs.shape() != (d1, d2) {
        return Err(CdError::param("rhs", format!("expected {d1} x {d2}, got {:?}", rhs.shape())));
    }
    let (t1, t2) = (map.left(), map.right());
    let scale = map.scale().max(f64::MIN_POSITIVE);
    let separated = (0..d1).all(|i| (0..d2).all(|j| (t1[(i, i)] - t2[(j, j)]).norm() > 1e-12 * scale));
    let x = if separated && is_upper_triangular(t1) && is_upper_triangular(t2) {
        triangular_sweep(t1, t2, rhs)
    } else {
        return sylvester_solve_dense(map, rhs, mode);
    };
    check_solution(map, rhs, &x)?;
    Ok(x)
}

/// Dense vectorized solve; the oracle for the sweep.
pub fn sylvester_solve_dense(map: &SylvesterMap, rhs: &DMatrix<Complex64>, mode: SolveMode) -> Result<DMatrix<Complex64>> {
    let (d1, d2) = map.dims();
    let m = map.vectorized();
    let b = DMatrix::from_column_slice(d1 * d2, 1, rhs.as_slice());
    let x = match solve_checked(&m, &b) {
        Ok((x, _)) => x,
        Err(CdError::Numeric { .. }) => {
            let (x, residual) = pinv_solve(&m, &b, 1e-12)?;
            if mode == SolveMode::Exact {
                return Err(CdError::Solvability { residual });
            }
            return Ok(DMatrix::from_column_slice(d1, d2, x.as_slice()));
        }
        Err(e) => return Err(e),
    };
    let x = DMatrix::from_column_slice(d1, d2, x.as_slice());
    check_solution(map, rhs, &x)?;
    Ok(x)
}

fn triangular_sweep(t1: &DMatrix<Complex64>, t2: &DMatrix<Complex64>, y: &DMatrix<Complex64>) -> DMatrix<Complex64> {
    let (d1, d2) = (t1.nrows(), t2.nrows());
    let mut x = DMatrix::zeros(d1, d2);
    for i in (0..d1).rev() {
        for j in 0..d2 {
            let mut s = y[(i, j)];
            for k in i + 1..d1 {
                s -= t1[(i, k)] * x[(k, j)];
            }
            for k in 0..j {
                s += x[(i, k)] * t2[(k, j)];
            }
            x[(i, j)] = s / (t1[(i, i)] - t2[(j, j)]);
        }
    }
    x
}

fn check_solution(map: &SylvesterMap, rhs: &DMatrix<Complex64>, x: &DMatrix<Complex64>) -> Result<()> {
    let res = (map.apply(x) - rhs).norm();
    let bound = 1e-10 * (rhs.norm() + x.norm() * map.scale());
    if !(res <= bound) {
        return Err(CdError::numeric(format!("Sylvester residual {res:e} exceeds {bound:e}")));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct KernelBasis {
    /// Raw numerical kernel at the base truncation, unit Frobenius norm.
    pub elements: Vec<DMatrix<Complex64>>,
    /// Relative window change of each element under doubling; infinite when
    /// the element cannot be continued.
    pub stability: Vec<f64>,
    pub filtered_count: usize,
}

impl KernelBasis {
    pub fn raw_count(&self) -> usize {
        self.elements.len()
    }

    pub fn is_kept(&self, idx: usize) -> bool {
        self.stability[idx] < STABILITY_TOL
    }

    /// Elements surviving the doubling filter.
    pub fn filtered(&self) -> impl Iterator<Item = &DMatrix<Complex64>> {
        self.elements
            .iter()
            .zip(&self.stability)
            .filter(|(_, s)| **s < STABILITY_TOL)
            .map(|(e, _)| e)
    }

    /// Surviving element with the smallest window change.
    pub fn most_stable(&self) -> Option<&DMatrix<Complex64>> {
        self.elements
            .iter()
            .zip(&self.stability)
            .filter(|(_, s)| **s < STABILITY_TOL)
            .min_by(|a, b| a.1.total_cmp(b.1))
            .map(|(e, _)| e)
    }
}

struct UnionFind(Vec<usize>);

impl UnionFind {
    fn find(&mut self, mut x: usize) -> usize {
        while self.0[x] != x {
            self.0[x] = self.0[self.0[x]];
            x = self.0[x];
        }
        x
    }

    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            self.0[ra] = rb;
        }
    }
}

/// Numerical kernel of `tau` at `base_dim` plus the doubling filter.
///
/// The vectorized map splits into independent pieces (unknowns linked by a
/// shared equation); each piece gets a full SVD and contributes the right
/// singular vectors below `tol * sigma_max`. An element `X` survives when its
/// continuation to `2 base_dim`, obtained from its leading rows by the
/// forward recursion of `T1 Y = Y T2`, agrees with `X` on the common window
/// after both are scaled to unit operator norm, and the continuation
/// satisfies every equation of the doubled problem except its truncation
/// row. Without operator families no
/// element can be continued and `filtered_count` is 0.
pub fn kernel_basis(map: &SylvesterMap, base_dim: usize, tol: f64) -> Result<KernelBasis> {
    if base_dim == 0 || base_dim > MAX_KERNEL_DIM {
        return Err(CdError::param("base_dim", format!("must lie in 1..={MAX_KERNEL_DIM}")));
    }
    if !(tol > 0.0 && tol < 1.0) {
        return Err(CdError::param("tol", "must lie in (0, 1)"));
    }
    let map = if map.has_families() {
        map.at_dim(base_dim)?
    } else if map.dims() == (base_dim, base_dim) {
        map.clone()
    } else {
        return Err(CdError::param("base_dim", "map without families must already have this dimension"));
    };
    let raw = raw_kernel(&map, tol)?;
    let elements = chain_basis(&map, raw)?;
    let stability = match map.at_dim(2 * base_dim) {
        Ok(big) => elements.iter().map(|x| continuation_change(x, &big)).collect(),
        Err(_) => vec![f64::INFINITY; elements.len()],
    };
    let filtered_count = stability.iter().filter(|s| **s < STABILITY_TOL).count();
    Ok(KernelBasis {
        elements,
        stability,
        filtered_count,
    })
}

fn raw_kernel(map: &SylvesterMap, tol: f64) -> Result<Vec<DMatrix<Complex64>>> {
    let (d1, d2) = map.dims();
    let (t1, t2) = (map.left(), map.right());
    let unknowns = d1 * d2;
    // Sparse rows of the vectorized map, column-major indexing.
    let mut rows: Vec<Vec<(usize, Complex64)>> = Vec::with_capacity(unknowns);
    for j in 0..d2 {
        for i in 0..d1 {
            let mut entries: BTreeMap<usize, Complex64> = BTreeMap::new();
            for k in 0..d1 {
                if t1[(i, k)] != ZERO {
                    *entries.entry(k + j * d1).or_insert(ZERO) += t1[(i, k)];
                }
            }
            for k in 0..d2 {
                if t2[(k, j)] != ZERO {
                    *entries.entry(i + k * d1).or_insert(ZERO) -= t2[(k, j)];
                }
            }
            rows.push(entries.into_iter().filter(|(_, v)| *v != ZERO).collect());
        }
    }
    let mut uf = UnionFind((0..unknowns).collect());
    for row in &rows {
        for w in row.windows(2) {
            uf.union(w[0].0, w[1].0);
        }
    }
    let mut comp_cols: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for u in 0..unknowns {
        let r = uf.find(u);
        comp_cols.entry(r).or_default().push(u);
    }
    let mut comp_rows: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (idx, row) in rows.iter().enumerate() {
        if let Some(&(u, _)) = row.first() {
            let r = uf.find(u);
            comp_rows.entry(r).or_default().push(idx);
        }
    }
    let mut pieces = Vec::with_capacity(comp_cols.len());
    let mut sigma_max: f64 = 0.0;
    for (root, cols) in &comp_cols {
        let row_ids = comp_rows.get(root).cloned().unwrap_or_default();
        let local: BTreeMap<usize, usize> = cols.iter().enumerate().map(|(p, &u)| (u, p)).collect();
        let mut m = DMatrix::zeros(row_ids.len(), cols.len());
        for (ri, &r) in row_ids.iter().enumerate() {
            for &(u, v) in &rows[r] {
                m[(ri, local[&u])] = v;
            }
        }
        let dec = svd(&m)?;
        sigma_max = sigma_max.max(dec.s.first().copied().unwrap_or(0.0));
        pieces.push((cols.clone(), dec));
    }
    let threshold = tol * sigma_max;
    let mut out = Vec::new();
    for (cols, dec) in pieces {
        for c in 0..cols.len() {
            let small = dec.s.get(c).is_none_or(|s| *s < threshold);
            if !small {
                continue;
            }
            let mut x = DMatrix::zeros(d1, d2);
            for (p, &u) in cols.iter().enumerate() {
                x[(u % d1, u / d1)] = dec.v[(p, c)];
            }
            out.push(x);
        }
    }
    Ok(out)
}

/// Rewrites a kernel basis as chains `G, T1 G, T1^2 G, ...`.
///
/// Left multiplication by `T1` maps `Ker tau` into itself; generators are
/// taken orthogonal to its range inside the kernel. Arbitrary orthonormal
/// bases mix well-resolved elements with ones that live at the truncation
/// corner, and such mixtures never pass the filter. If the chains do not
/// reproduce the kernel dimension the raw basis is returned.
fn chain_basis(map: &SylvesterMap, raw: Vec<DMatrix<Complex64>>) -> Result<Vec<DMatrix<Complex64>>> {
    let k = raw.len();
    if k < 2 {
        return Ok(raw);
    }
    let (d1, d2) = map.dims();
    let basis = DMatrix::from_fn(d1 * d2, k, |r, c| raw[c].as_slice()[r]);
    // Raw elements are orthonormal (disjoint supports or one SVD per piece).
    let act = |v: &DMatrix<Complex64>| -> DMatrix<Complex64> {
        let images = DMatrix::from_fn(d1 * d2, v.ncols(), |_, _| ZERO);
        let mut images = images;
        for c in 0..v.ncols() {
            let x = DMatrix::from_column_slice(d1, d2, (&basis * v.column(c)).as_slice());
            let y = map.left() * x;
            images.column_mut(c).copy_from_slice(y.as_slice());
        }
        images
    };
    let id = DMatrix::<Complex64>::identity(k, k);
    let images = act(&id);
    let coords = basis.adjoint() * &images;
    let leak = (&basis * &coords - &images).norm();
    if leak > 1e-8 * images.norm().max(f64::MIN_POSITIVE) {
        return Ok(raw);
    }
    let dec = svd(&coords)?;
    let smax = dec.s.first().copied().unwrap_or(0.0);
    let rank = dec.s.iter().filter(|s| **s > 1e-10 * smax).count();
    let mut out = Vec::with_capacity(k);
    for g in rank..k {
        let mut v = dec.u.column(g).into_owned();
        let start = v.norm();
        for _ in 0..k {
            let x = &basis * &v;
            let n = x.norm();
            if n <= 1e-13 * start {
                break;
            }
            out.push(DMatrix::from_column_slice(d1, d2, (x / Complex64::new(n, 0.0)).as_slice()));
            v = &coords * v;
        }
    }
    if out.len() != k {
        return Ok(raw);
    }
    Ok(out)
}

/// Number of leading rows of `l` that must be given before the rest follows
/// by the forward recursion: rows from `r - 1` on have no entries beyond the
/// first superdiagonal and a nonzero superdiagonal entry.
fn seed_rows(l: &DMatrix<Complex64>) -> Option<usize> {
    let n = l.nrows();
    let scale = l.iter().map(|x| x.norm()).fold(0.0, f64::max);
    let ok = |i: usize| -> bool {
        l[(i, i + 1)].norm() > 1e-14 * scale && (i + 2..n).all(|k| l[(i, k)] == ZERO)
    };
    if n < 2 {
        return None;
    }
    // Smallest `first` with every row in `first..n-1` admissible.
    let mut first = n - 1;
    while first > 0 && ok(first - 1) {
        first -= 1;
    }
    (first < n - 1).then_some(first + 1)
}

fn continuation_change(x: &DMatrix<Complex64>, big: &SylvesterMap) -> f64 {
    let (d1, d2) = x.shape();
    let (l, r_op) = (big.left(), big.right());
    let (n1, n2) = big.dims();
    let Some(r) = seed_rows(l) else {
        return f64::INFINITY;
    };
    if r > d1 {
        return f64::INFINITY;
    }
    let mut y = DMatrix::<Complex64>::zeros(n1, n2);
    y.view_mut((0, 0), (r, d2)).copy_from(&x.rows(0, r));
    for i in r - 1..n1 - 1 {
        let mut next = y.row(i) * r_op;
        for k in 0..=i {
            let c = l[(i, k)];
            if c != ZERO {
                next -= y.row(k) * c;
            }
        }
        let next = next / l[(i, i + 1)];
        y.row_mut(i + 1).copy_from(&next);
    }
    if !y.iter().all(|v| v.re.is_finite() && v.im.is_finite()) {
        return f64::INFINITY;
    }
    let (nx, ny) = (spectral_norm(x), spectral_norm(&y));
    if nx == 0.0 || ny == 0.0 {
        return f64::INFINITY;
    }
    // The recursion only enforces rows `r - 1..`; leading rows must hold too.
    // The last row is the truncation row and is exempt.
    let res = (l * &y - &y * r_op).rows(0, n1 - 1).norm();
    let consistency = res / ((l.norm() + r_op.norm()) * y.norm());
    let xn = x / Complex64::new(nx, 0.0);
    let yw = y.view((0, 0), (d1, d2)) / Complex64::new(ny, 0.0);
    let peak = xn.iter().map(|v| v.norm()).fold(0.0, f64::max);
    let diff = (yw - &xn).iter().map(|v| v.norm()).fold(0.0, f64::max);
    (diff / peak).max(consistency)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PropertyHVerdict {
    Diverges,
    Bounded,
    Vanishes,
}

impl PropertyHVerdict {
    pub fn from_slope(slope: f64) -> Self {
        if slope > 0.1 {
            PropertyHVerdict::Diverges
        } else if slope < -0.1 {
            PropertyHVerdict::Vanishes
        } else {
            PropertyHVerdict::Bounded
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            PropertyHVerdict::Diverges => "diverges",
            PropertyHVerdict::Bounded => "bounded",
            PropertyHVerdict::Vanishes => "vanishes",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PropertyHReport {
    pub lambda_pair: (f64, f64),
    /// `(k, ln x_{k+1,k})` for `k = 1..=k_max`.
    pub samples: Vec<(usize, f64)>,
    pub fitted_slope: f64,
    pub verdict: PropertyHVerdict,
}

fn log_add_exp(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    let m = a.max(b);
    m + ((a - m).exp() + (b - m).exp()).ln()
}

/// Runs `a_k x_{k+1,k} = y_kk + x_{k,k-1} b_{k-1}` with `x_{1,0} = 0`,
/// `y_kk = prod_{m<k} b_m / a_m`, `a_k = sqrt(k / (k + lambda1 - 1))`,
/// `b_k = sqrt(k / (k + lambda2 - 1))`, all in log space, and fits
/// `ln x_{k+1,k}` against `ln k` on `[k_max / 10, k_max]`.
pub fn property_h_slope(lambda1: f64, lambda2: f64, k_max: usize) -> Result<PropertyHReport> {
    if k_max < 1000 {
        return Err(CdError::param("k_max", "must be at least 1000"));
    }
    for (name, l) in [("lambda1", lambda1), ("lambda2", lambda2)] {
        if !(l > 0.0 && l.is_finite()) {
            return Err(CdError::param(name, "must be positive and finite"));
        }
    }
    let ln_w = |k: f64, l: f64| 0.5 * (k.ln() - (k + l - 1.0).ln());
    let mut samples = Vec::with_capacity(k_max);
    let mut ln_y = 0.0;
    let mut ln_x = f64::NEG_INFINITY;
    for k in 1..=k_max {
        let kf = k as f64;
        let carried = if k == 1 { f64::NEG_INFINITY } else { ln_x + ln_w(kf - 1.0, lambda2) };
        ln_x = log_add_exp(ln_y, carried) - ln_w(kf, lambda1);
        samples.push((k, ln_x));
        ln_y += ln_w(kf, lambda2) - ln_w(kf, lambda1);
    }
    let lo = k_max / 10;
    let (xs, ys): (Vec<f64>, Vec<f64>) = samples[lo - 1..]
        .iter()
        .map(|&(k, lx)| ((k as f64).ln(), lx))
        .unzip();
    let (slope, _) = linear_fit(&xs, &ys).ok_or_else(|| CdError::numeric("degenerate slope fit"))?;
    Ok(PropertyHReport {
        lambda_pair: (lambda1, lambda2),
        samples,
        fitted_slope: slope,
        verdict: PropertyHVerdict::from_slope(slope),
    })
}

/// Value of the free entry `x_{n-d, n}` on each diagonal of the correction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum BoundarySeed {
    /// Seed `1`, i.e. `K_{n-1,n} = T_{n-1,n}` on the first diagonal.
    #[default]
    Paper,
    /// Seed `0`; gives `K = 0` for `T = T_tilde`.
    Zero,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompactCorrection {
    /// `K_{k,j} = x_{k,j}(T_kk) T_{k,k+1} ... T_{j-1,j}` for `k < j`.
    pub blocks: BTreeMap<(usize, usize), UpperBand>,
    pub series: BTreeMap<(usize, usize), CouplingSeries>,
    /// `||(I+K)T - T_tilde(I+K)||_F / ||T||_F`.
    pub relative_residual: f64,
    /// Frobenius norm of entries of `K` with an index `>= N/2`.
    pub tail_norm: f64,
    pub n: usize,
    pub block_dim: usize,
}

impl CompactCorrection {
    /// Dense `K`.
    pub fn to_operator(&self) -> OperatorMatrix {
        let d = self.block_dim;
        let mut m = DMatrix::zeros(self.n * d, self.n * d);
        for (&(k, j), b) in &self.blocks {
            m.view_mut((k * d, j * d), (d, d)).copy_from(&b.to_dense());
        }
        OperatorMatrix::new(m, Some(vec![d; self.n])).expect("finite blocks")
    }

    pub fn is_zero(&self) -> bool {
        self.blocks.values().all(|b| b.is_zero())
    }
}

/// Solves `(I+K) T = T_tilde (I+K)` with `K` strictly block upper triangular.
///
/// Both flags are treated as upper-triangular matrices over the commutative
/// algebra of series in `T_kk`, with `t_{k,k+1} = 1` and `t_{k,j} = phi_{k,j}`
/// relative to the adjacent products. Along each diagonal `d` of `K`
/// (`x_{k,k+d}`) the equation for entry `(k, k+d+1)` gives
/// `x_{k,k+d} = x_{k+1,k+d+1} + tt_{k,k+d+1} - t_{k,k+d+1}
///  + sum_{l=k+2}^{k+d} tt_{k,l} x_{l,k+d+1} - sum_{l=k+1}^{k+d-1} x_{k,l} t_{l,k+d+1}`,
/// swept upward from the free last entry `x_{n-d,n}`.
pub fn compact_correction(t: &FlagOperator, t_tilde: &FlagOperator, seed: BoundarySeed) -> Result<CompactCorrection> {
    let n = t.n();
    let dim = t.block_dim();
    if t_tilde.n() != n || t_tilde.block_dim() != dim {
        return Err(CdError::Precondition("flags differ in size".into()));
    }
    let (s, st) = (t.spec(), t_tilde.spec());
    if s.lambdas() != st.lambdas() {
        return Err(CdError::Precondition("diagonal blocks differ".into()));
    }
    for k in 0..n.saturating_sub(1) {
        if s.coupling(k, k + 1) != st.coupling(k, k + 1) || t.block(k, k + 1) != t_tilde.block(k, k + 1) {
            return Err(CdError::Precondition(format!(
                "first superdiagonal blocks ({}, {}) differ",
                k + 1,
                k + 2
            )));
        }
    }
    let rel = |spec: &crate::flag::FlagSpec, k: usize, j: usize| {
        if j == k + 1 {
            CouplingSeries::one()
        } else {
            spec.coupling(k, j)
        }
    };
    let mut x: BTreeMap<(usize, usize), CouplingSeries> = BTreeMap::new();
    let get = |x: &BTreeMap<(usize, usize), CouplingSeries>, k: usize, j: usize| x.get(&(k, j)).cloned().unwrap_or_else(CouplingSeries::zero);
    for d in 1..n {
        let seed_val = match seed {
            BoundarySeed::Paper => CouplingSeries::one(),
            BoundarySeed::Zero => CouplingSeries::zero(),
        };
        x.insert((n - 1 - d, n - 1), seed_val);
        for k in (0..n - 1 - d).rev() {
            let m = k + d + 1;
            let mut acc = get(&x, k + 1, m).add(&rel(st, k, m)).sub(&rel(s, k, m));
            for l in k + 2..=k + d {
                acc = acc.add(&rel(st, k, l).mul(&get(&x, l, m))?);
            }
            for l in k + 1..k + d {
                acc = acc.sub(&get(&x, k, l).mul(&rel(s, l, m))?);
            }
            x.insert((k, k + d), acc);
        }
    }
    let mut blocks = BTreeMap::new();
    for (&(k, j), xs) in &x {
        let mut p = t.block(k, k + 1).expect("adjacent block").clone();
        for l in k + 1..j {
            p = p.mul(t.block(l, l + 1).expect("adjacent block"));
        }
        let band = xs.apply_to(&t.diag_block(k).band()).mul(&p);
        if !band.is_finite() {
            return Err(CdError::Numeric {
                reason: "correction block is not finite".into(),
                condition: None,
                diagonal: Some(j - k),
            });
        }
        blocks.insert((k, j), band);
    }
    // (I+K) T - T_tilde (I+K), block by block.
    let ipk = |k: usize, j: usize| -> UpperBand {
        if k == j {
            UpperBand::identity(dim)
        } else {
            blocks.get(&(k, j)).cloned().unwrap_or_else(|| UpperBand::zeros(dim))
        }
    };
    let mut t_norm_sq = 0.0;
    for k in 0..n {
        for j in k..n {
            t_norm_sq += t.band_block(k, j).frobenius_norm().powi(2);
        }
    }
    let t_norm = t_norm_sq.sqrt();
    let mut total_sq = 0.0;
    for gap in 0..n {
        let mut diag_sq = 0.0;
        for k in 0..n - gap {
            let m = k + gap;
            let mut acc = UpperBand::zeros(dim);
            for l in k..=m {
                acc = acc.add(&ipk(k, l).mul(&t.band_block(l, m)));
                acc = acc.sub(&t_tilde.band_block(k, l).mul(&ipk(l, m)));
            }
            diag_sq += acc.frobenius_norm().powi(2);
        }
        if diag_sq.sqrt() > 1e-8 * t_norm {
            return Err(CdError::Numeric {
                reason: format!("residual {:e} on block diagonal {gap} exceeds tolerance", diag_sq.sqrt()),
                condition: None,
                diagonal: Some(gap),
            });
        }
        total_sq += diag_sq;
    }
    let tail_norm = blocks
        .values()
        .map(|b| b.tail_frobenius(dim / 2).powi(2))
        .sum::<f64>()
        .sqrt();
    Ok(CompactCorrection {
        blocks,
        series: x,
        relative_residual: total_sq.sqrt() / t_norm,
        tail_norm,
        n,
        block_dim: dim,
    })
}

/// Result of [`intertwiner_triangularity`].
#[derive(Debug, Clone, PartialEq)]
pub struct IntertwinerReport {
    /// Stabilized `X` with `X A = B X`: block-lower part plus diagonal.
    pub solution: OperatorMatrix,
    /// `||strictly lower blocks||_F / ||X||_F`.
    pub lower_mass_ratio: f64,
    /// `(i, j) -> (raw, filtered)` kernel counts for `i > j`.
    pub lower_counts: BTreeMap<(usize, usize), (usize, usize)>,
    /// Window change of the diagonal element chosen per level.
    pub diagonal_stability: Vec<f64>,
}

/// Block structure of intertwiners `X A = B X` between two flags.
///
/// Blocks are found from the bottom-left corner upward: with every block
/// below it already zero, `X_ij` (`i > j`) lies in `Ker tau_{B_ii, A_jj}`,
/// and diagonal blocks in `Ker tau_{B_jj, A_jj}`. Each kernel is filtered by
/// doubling; lower blocks take the sum of their surviving elements and each
/// diagonal block the most stable survivor at unit operator norm.
pub fn intertwiner_triangularity(
    a: Arc<dyn BlockFlag>,
    b: Arc<dyn BlockFlag>,
    block_dim: usize,
    tol: f64,
) -> Result<IntertwinerReport> {
    let n = a.n();
    if b.n() != n {
        return Err(CdError::param("flags", "flags have different numbers of levels"));
    }
    let d = block_dim;
    let mut x = DMatrix::zeros(n * d, n * d);
    let mut lower_counts = BTreeMap::new();
    let mut lower_sq = 0.0;
    for gap in (1..n).rev() {
        for j in 0..n - gap {
            let i = j + gap;
            let map = SylvesterMap::between_blocks(b.clone(), i, a.clone(), j, d)?;
            let kb = kernel_basis(&map, d, tol)?;
            let sum = kb.filtered().fold(DMatrix::zeros(d, d), |acc, e| acc + e);
            lower_sq += sum.norm_squared();
            x.view_mut((i * d, j * d), (d, d)).copy_from(&sum);
            lower_counts.insert((i, j), (kb.raw_count(), kb.filtered_count));
        }
    }
    let mut diagonal_stability = Vec::with_capacity(n);
    for j in 0..n {
        let map = SylvesterMap::between_blocks(b.clone(), j, a.clone(), j, d)?;
        let kb = kernel_basis(&map, d, tol)?;
        let best = kb
            .elements
            .iter()
            .zip(&kb.stability)
            .filter(|(_, s)| **s < STABILITY_TOL)
            .min_by(|p, q| p.1.total_cmp(q.1));
        let Some((e, s)) = best else {
            return Err(CdError::Structural(format!("no stable intertwiner on level {}", j + 1)));
        };
        let e = e / Complex64::new(spectral_norm(e), 0.0);
        x.view_mut((j * d, j * d), (d, d)).copy_from(&e);
        diagonal_stability.push(*s);
    }
    let total = x.norm();
    Ok(IntertwinerReport {
        solution: OperatorMatrix::new(x, Some(vec![d; n]))?,
        lower_mass_ratio: lower_sq.sqrt() / total,
        lower_counts,
        diagonal_stability,
    })
}
