//! Flag-structured operators built from weighted Bergman shifts, their
//! structure gauges, and orthogonalization of idempotent families.
//!
//! Levels are 0-based in this API. Block `(k, k+1)` is
//! `phi_{k,k+1}(T_kk) D_k` with `D_k` diagonal,
//! `d_n = prod_{j=1..n} sqrt(j/(j+lambda_{k+1}-1)) / sqrt(j/(j+lambda_k-1))`
//! for basis index `n >= 0` (so `d_0 = 1`); with this indexing
//! `T_kk D_k = D_k T_{k+1,k+1}` holds exactly. Longer blocks are
//! `T_{k,j} = phi_{k,j}(T_kk) T_{k,k+1} ... T_{j-1,j}`. Every coupling
//! defaults to the constant series `1`.

use std::collections::BTreeMap;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::band::UpperBand;
use crate::error::{CdError, Result};
use crate::fit::{fit_window, power_law_exponent};
use crate::geometry::{eigen_section_within, Section};
use crate::linalg::{inverse_checked, svd};
pub use crate::series::CouplingSeries;
use crate::shift::{build_bergman_shift, CommutatorProfile, OperatorMatrix, WeightedShift};

const ONE: Complex64 = Complex64::new(1.0, 0.0);

/// Quoted in every rejection of a lambda gap outside `(0, 2)`.
pub const GAP_CITATION: &str = "If λ₂−λ₁<2, then";

#[derive(Debug, Clone, PartialEq)]
pub struct FlagSpec {
    lambdas: Vec<f64>,
    couplings: BTreeMap<(usize, usize), CouplingSeries>,
    dim_per_block: usize,
}

impl FlagSpec {
    pub fn new(lambdas: Vec<f64>, dim_per_block: usize) -> Result<Self> {
        if lambdas.is_empty() {
            return Err(CdError::Spec {
                field: "lambda".into(),
                reason: "at least one level required".into(),
                citation: None,
            });
        }
        if let Some(l) = lambdas.iter().find(|l| !(**l > 0.0 && l.is_finite())) {
            return Err(CdError::Spec {
                field: "lambda".into(),
                reason: format!("lambda must be positive, got {l}"),
                citation: None,
            });
        }
        for (k, w) in lambdas.windows(2).enumerate() {
            let gap = w[1] - w[0];
            if !(gap > 0.0 && gap < 2.0) {
                return Err(CdError::Spec {
                    field: "lambda".into(),
                    reason: format!(
                        "gap lambda_{} - lambda_{} = {gap} must lie in (0, 2)",
                        k + 2,
                        k + 1
                    ),
                    citation: Some(GAP_CITATION),
                });
            }
        }
        if dim_per_block < 2 {
            return Err(CdError::Spec {
                field: "truncation".into(),
                reason: "truncation must be at least 2".into(),
                citation: None,
            });
        }
        Ok(FlagSpec {
            lambdas,
            couplings: BTreeMap::new(),
            dim_per_block,
        })
    }

    /// Sets `phi_{k,j}` for 0-based levels `k < j`.
    pub fn with_coupling(mut self, k: usize, j: usize, series: CouplingSeries) -> Result<Self> {
        if !(k < j && j < self.n()) {
            return Err(CdError::Spec {
                field: "couplings".into(),
                reason: format!("coupling ({}, {}) outside 1 <= from < to <= {}", k + 1, j + 1, self.n()),
                citation: None,
            });
        }
        self.couplings.insert((k, j), series);
        Ok(self)
    }

    pub fn n(&self) -> usize {
        self.lambdas.len()
    }

    pub fn lambdas(&self) -> &[f64] {
        &self.lambdas
    }

    pub fn dim_per_block(&self) -> usize {
        self.dim_per_block
    }

    pub fn coupling(&self, k: usize, j: usize) -> CouplingSeries {
        self.couplings.get(&(k, j)).cloned().unwrap_or_else(CouplingSeries::one)
    }

    /// Explicitly set couplings only.
    pub fn explicit_couplings(&self) -> &BTreeMap<(usize, usize), CouplingSeries> {
        &self.couplings
    }

    pub fn with_dim(&self, dim: usize) -> FlagSpec {
        FlagSpec {
            dim_per_block: dim,
            ..self.clone()
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FlagOperator {
    spec: FlagSpec,
    diag_blocks: Vec<WeightedShift>,
    adjacent_diagonals: Vec<Vec<f64>>,
    off_blocks: BTreeMap<(usize, usize), UpperBand>,
}

/// `d_n` of the adjacent intertwiner between levels of parameters `l1 < l2`.
pub fn adjacent_diagonal(l1: f64, l2: f64, dim: usize) -> Vec<f64> {
    let mut d = Vec::with_capacity(dim);
    let mut acc = 1.0;
    d.push(acc);
    for n in 1..dim {
        let n = n as f64;
        acc *= ((n + l1 - 1.0) / (n + l2 - 1.0)).sqrt();
        d.push(acc);
    }
    d
}

pub fn build_ncfb(spec: &FlagSpec) -> Result<FlagOperator> {
    let n = spec.n();
    let dim = spec.dim_per_block();
    let diag_blocks: Vec<WeightedShift> = spec
        .lambdas()
        .iter()
        .map(|&l| build_bergman_shift(l, dim))
        .collect::<Result<_>>()?;
    let bands: Vec<UpperBand> = diag_blocks.iter().map(|s| s.band()).collect();
    let mut adjacent_diagonals = Vec::with_capacity(n.saturating_sub(1));
    let mut off_blocks = BTreeMap::new();
    for k in 0..n.saturating_sub(1) {
        let d = adjacent_diagonal(spec.lambdas()[k], spec.lambdas()[k + 1], dim);
        let dband = UpperBand::diagonal_matrix(d.iter().map(|&x| Complex64::new(x, 0.0)).collect());
        let block = spec.coupling(k, k + 1).apply_to(&bands[k]).mul(&dband);
        adjacent_diagonals.push(d);
        off_blocks.insert((k, k + 1), block);
    }
    for gap in 2..n {
        for k in 0..n - gap {
            let j = k + gap;
            let mut product = off_blocks[&(k, k + 1)].clone();
            for l in k + 1..j {
                product = product.mul(&off_blocks[&(l, l + 1)]);
            }
            let block = spec.coupling(k, j).apply_to(&bands[k]).mul(&product);
            off_blocks.insert((k, j), block);
        }
    }
    if off_blocks.values().any(|b| !b.is_finite()) {
        return Err(CdError::numeric("coupling series diverges on the truncation"));
    }
    Ok(FlagOperator {
        spec: spec.clone(),
        diag_blocks,
        adjacent_diagonals,
        off_blocks,
    })
}

impl FlagOperator {
    pub fn spec(&self) -> &FlagSpec {
        &self.spec
    }

    pub fn n(&self) -> usize {
        self.spec.n()
    }

    pub fn block_dim(&self) -> usize {
        self.spec.dim_per_block()
    }

    pub fn dim(&self) -> usize {
        self.n() * self.block_dim()
    }

    pub fn diag_block(&self, k: usize) -> &WeightedShift {
        &self.diag_blocks[k]
    }

    /// Off-diagonal block `(k, j)` for `k < j`.
    pub fn block(&self, k: usize, j: usize) -> Option<&UpperBand> {
        self.off_blocks.get(&(k, j))
    }

    /// Block `(k, j)` as a band; diagonal blocks included, lower blocks zero.
    pub fn band_block(&self, k: usize, j: usize) -> UpperBand {
        match k.cmp(&j) {
            std::cmp::Ordering::Equal => self.diag_blocks[k].band(),
            std::cmp::Ordering::Less => self.off_blocks[&(k, j)].clone(),
            std::cmp::Ordering::Greater => UpperBand::zeros(self.block_dim()),
        }
    }

    /// The `d_n` sequence of `D_k` between levels `k` and `k + 1`.
    pub fn adjacent_diagonal(&self, k: usize) -> &[f64] {
        &self.adjacent_diagonals[k]
    }

    pub fn at_dim(&self, dim: usize) -> Result<FlagOperator> {
        build_ncfb(&self.spec.with_dim(dim))
    }

    /// Same flag with block `(k, j)` replaced, e.g. forced to zero.
    pub fn with_block(&self, k: usize, j: usize, block: UpperBand) -> Result<FlagOperator> {
        if !(k < j && j < self.n()) || block.dim() != self.block_dim() {
            return Err(CdError::param("block", "index or dimension mismatch"));
        }
        let mut out = self.clone();
        out.off_blocks.insert((k, j), block);
        Ok(out)
    }

    /// Dense assembly; intended for small truncations.
    pub fn to_operator(&self) -> OperatorMatrix {
        let n = self.n();
        let d = self.block_dim();
        let mut m = DMatrix::zeros(n * d, n * d);
        for k in 0..n {
            for j in k..n {
                let b = self.band_block(k, j).to_dense();
                m.view_mut((k * d, j * d), (d, d)).copy_from(&b);
            }
        }
        OperatorMatrix::new(m, Some(vec![d; n])).expect("flag blocks are finite")
    }

    /// Squared row and column norms of the full flag, block by block.
    fn full_norms(&self) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
        let n = self.n();
        let d = self.block_dim();
        let mut rows = vec![vec![0.0; d]; n];
        let mut cols = vec![vec![0.0; d]; n];
        for k in 0..n {
            for j in k..n {
                let b = self.band_block(k, j);
                rows[k].iter_mut().zip(b.row_norms_sqr()).for_each(|(a, x)| *a += x);
                cols[j].iter_mut().zip(b.col_norms_sqr()).for_each(|(a, x)| *a += x);
            }
        }
        (rows, cols)
    }
}

/// Output of [`verify_flag_structure`].
#[derive(Debug, Clone, PartialEq)]
pub struct StructureReport {
    /// `||T_kk T_{k,k+1} - T_{k,k+1} T_{k+1,k+1}|| / (||T_kk|| ||T_{k,k+1}||)`.
    pub intertwining_residuals: Vec<f64>,
    /// Fitted exponent of `d_n` per adjacent pair.
    pub decay_exponents: Vec<Option<f64>>,
    /// `-(lambda_{k+1} - lambda_k) / 2` per adjacent pair.
    pub expected_exponents: Vec<f64>,
    /// Self-commutator diagonal of the full flag, one profile per block row.
    pub commutator_profiles: Vec<CommutatorProfile>,
    /// Largest tail sup over the block profiles.
    pub essential_normality_gauge: f64,
    pub strongly_irreducible: bool,
}

impl StructureReport {
    pub fn passes(&self, exponent_tol: f64) -> bool {
        self.intertwining_residuals.iter().all(|r| *r <= 1e-12)
            && self
                .decay_exponents
                .iter()
                .zip(&self.expected_exponents)
                .all(|(f, e)| f.is_some_and(|f| (f - e).abs() <= exponent_tol))
            && self.strongly_irreducible
    }
}

pub fn verify_flag_structure(flag: &FlagOperator) -> StructureReport {
    let n = flag.n();
    let d = flag.block_dim();
    let cutoff = (d / 10).max(1);
    let mut intertwining_residuals = Vec::new();
    let mut decay_exponents = Vec::new();
    let mut expected_exponents = Vec::new();
    let mut strongly_irreducible = true;
    for k in 0..n.saturating_sub(1) {
        let tk = flag.diag_block(k).band();
        let tk1 = flag.diag_block(k + 1).band();
        let b = flag.block(k, k + 1).expect("adjacent block");
        let res = tk.mul(b).sub(&b.mul(&tk1)).frobenius_norm();
        let scale = tk.frobenius_norm() * b.frobenius_norm();
        intertwining_residuals.push(if scale > 0.0 { res / scale } else { res });
        strongly_irreducible &= !b.is_zero();
        let dn = flag.adjacent_diagonal(k);
        decay_exponents.push(power_law_exponent(
            fit_window(cutoff, d).map(|i| (i as f64, dn[i])),
            8,
        ));
        let l = flag.spec().lambdas();
        expected_exponents.push(-(l[k + 1] - l[k]) / 2.0);
    }
    let (rows, cols) = flag.full_norms();
    let commutator_profiles: Vec<CommutatorProfile> = rows
        .iter()
        .zip(&cols)
        .map(|(r, c)| {
            let diag = r.iter().zip(c).map(|(a, b)| a - b).collect();
            CommutatorProfile::from_diagonal(diag, cutoff)
        })
        .collect();
    let essential_normality_gauge = commutator_profiles.iter().map(|p| p.tail_sup).fold(0.0, f64::max);
    StructureReport {
        intertwining_residuals,
        decay_exponents,
        expected_exponents,
        commutator_profiles,
        essential_normality_gauge,
        strongly_irreducible,
    }
}

/// Idempotents `P_j` with `sum P_j = I` and `P_j P_k = 0` for `j != k`.
#[derive(Debug, Clone, PartialEq)]
pub struct IdempotentFamily {
    projections: Vec<DMatrix<Complex64>>,
    compact_gauge: Vec<f64>,
}

const FAMILY_TOL: f64 = 1e-9;

impl IdempotentFamily {
    pub fn new(projections: Vec<DMatrix<Complex64>>) -> Result<Self> {
        let first = projections
            .first()
            .ok_or_else(|| CdError::Structural("empty idempotent family".into()))?;
        let dim = first.nrows();
        if projections.iter().any(|p| p.nrows() != dim || p.ncols() != dim) {
            return Err(CdError::Structural("projections must share one square shape".into()));
        }
        let scale = projections.iter().map(|p| p.norm()).fold(1.0, f64::max);
        let tol = FAMILY_TOL * scale * scale;
        let id = DMatrix::<Complex64>::identity(dim, dim);
        let sum = projections.iter().fold(DMatrix::zeros(dim, dim), |acc, p| acc + p);
        let dev = (sum - &id).norm();
        if dev > tol {
            return Err(CdError::Structural(format!("family does not sum to the identity (deviation {dev:e})")));
        }
        for (j, p) in projections.iter().enumerate() {
            let e = (p * p - p).norm();
            if e > tol {
                return Err(CdError::Structural(format!("P_{} is not idempotent (deviation {e:e})", j + 1)));
            }
            for (k, q) in projections.iter().enumerate() {
                if k != j {
                    let e = (p * q).norm();
                    if e > tol {
                        return Err(CdError::Structural(format!(
                            "P_{} P_{} = {e:e} is not zero",
                            j + 1,
                            k + 1
                        )));
                    }
                }
            }
        }
        let compact_gauge = projections
            .iter()
            .map(|p| tail_frobenius(&(p - p.adjoint()), dim / 2))
            .collect();
        Ok(IdempotentFamily {
            projections,
            compact_gauge,
        })
    }

    /// `P_j = S E_j S^{-1}` for coordinate projections `E_j` of the given
    /// ranks and `S = I + N`, `N` strictly upper triangular with seeded
    /// entries `strength * g / (1 + i + j)`.
    pub fn random_similar(ranks: &[usize], strength: f64, seed: u64) -> Result<Self> {
        let dim: usize = ranks.iter().sum();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut s = DMatrix::<Complex64>::identity(dim, dim);
        for i in 0..dim {
            for j in i + 1..dim {
                let g = Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
                s[(i, j)] = g * (strength / (1.0 + (i + j) as f64));
            }
        }
        let (sinv, _) = inverse_checked(&s)?;
        let mut offset = 0;
        let mut projections = Vec::with_capacity(ranks.len());
        for &r in ranks {
            let mut e = DMatrix::<Complex64>::zeros(dim, dim);
            for i in offset..offset + r {
                e[(i, i)] = ONE;
            }
            projections.push(&s * e * &sinv);
            offset += r;
        }
        Self::new(projections)
    }

    pub fn projections(&self) -> &[DMatrix<Complex64>] {
        &self.projections
    }

    /// Tail Frobenius norm of `P_j - P_j^*` (entries with an index >= dim/2).
    pub fn compact_gauge(&self) -> &[f64] {
        &self.compact_gauge
    }

    pub fn dim(&self) -> usize {
        self.projections[0].nrows()
    }
}

fn tail_frobenius(m: &DMatrix<Complex64>, from: usize) -> f64 {
    let mut acc = 0.0;
    for j in 0..m.ncols() {
        for i in 0..m.nrows() {
            if i.max(j) >= from {
                acc += m[(i, j)].norm_sqr();
            }
        }
    }
    acc.sqrt()
}

#[derive(Debug, Clone)]
pub struct Orthogonalization {
    /// Accumulated `X` with `Q_j = X P_j X^{-1}`.
    pub conjugator: OperatorMatrix,
    pub projections: Vec<DMatrix<Complex64>>,
    /// Tail Frobenius norm of `X - polar(X)`.
    pub compactness_witness: f64,
    /// `max_j ||Q_j^2 - Q_j||`, `max_j ||Q_j - Q_j^*||`, `||sum Q_j - I||`,
    /// `max_{j != k} ||Q_j Q_k||`.
    pub idempotency_residual: f64,
    pub selfadjoint_residual: f64,
    pub sum_residual: f64,
    pub product_residual: f64,
}

/// Stage `j` writes the current `P'_j` as `[[I, K_j], [0, 0]]` against
/// `Ran P'_j` and its orthogonal complement and conjugates the whole family by
/// `X_j = [[I, K_j], [0, I]] = I + (P'_j - Pi_j)`, `X_j^{-1} = I - (P'_j - Pi_j)`,
/// with `Pi_j` the orthogonal projection onto `Ran P'_j`.
pub fn orthogonalize_idempotents(family: &IdempotentFamily) -> Result<Orthogonalization> {
    let dim = family.dim();
    let id = DMatrix::<Complex64>::identity(dim, dim);
    let mut current: Vec<DMatrix<Complex64>> = family.projections().to_vec();
    let mut x = id.clone();
    let last = current.len() - 1;
    for j in 0..last {
        let p = current[j].clone();
        let rank = p.trace().re.round().max(0.0) as usize;
        let dec = svd(&p)?;
        let u = dec.u.columns(0, rank).into_owned();
        let pi = &u * u.adjoint();
        let k = &p - &pi;
        let xj = &id + &k;
        let xj_inv = &id - &k;
        for q in current.iter_mut() {
            *q = &xj * &*q * &xj_inv;
        }
        x = xj * x;
    }
    // The last member is I minus the others; re-forming it removes drift.
    let others = current[..last].iter().fold(DMatrix::zeros(dim, dim), |acc, q| acc + q);
    current[last] = &id - others;
    let polar = crate::linalg::polar_unitary(&x)?;
    let compactness_witness = tail_frobenius(&(&x - polar), dim / 2);
    let mut idem: f64 = 0.0;
    let mut sa: f64 = 0.0;
    let mut prod: f64 = 0.0;
    for (j, q) in current.iter().enumerate() {
        idem = idem.max((q * q - q).norm());
        sa = sa.max((q - q.adjoint()).norm());
        for (k, r) in current.iter().enumerate() {
            if j != k {
                prod = prod.max((q * r).norm());
            }
        }
    }
    let sum = current.iter().fold(DMatrix::zeros(dim, dim), |acc, q| acc + q);
    Ok(Orthogonalization {
        conjugator: OperatorMatrix::new(x, None)?,
        sum_residual: (sum - id).norm(),
        projections: current,
        compactness_witness,
        idempotency_residual: idem,
        selfadjoint_residual: sa,
        product_residual: prod,
    })
}

/// Block-diagonal `S = diag(W_j (+) I)`: each `W_j` acts on the leading
/// `window` coordinates of its level and the identity elsewhere, so the same
/// `S` makes sense at every truncation `>= window`.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowConjugation {
    windows: Vec<DMatrix<Complex64>>,
    inverses: Vec<DMatrix<Complex64>>,
}

fn random_gaussian(rng: &mut ChaCha8Rng) -> Complex64 {
    // Box-Muller; only distributional symmetry matters here.
    let u1: f64 = rng.random_range(f64::EPSILON..1.0);
    let u2: f64 = rng.random_range(0.0..1.0);
    let r = (-2.0 * u1.ln()).sqrt();
    Complex64::from_polar(r, 2.0 * std::f64::consts::PI * u2)
}

impl WindowConjugation {
    pub fn new(windows: Vec<DMatrix<Complex64>>) -> Result<Self> {
        let inverses = windows
            .iter()
            .map(|w| inverse_checked(w).map(|(inv, _)| inv))
            .collect::<Result<_>>()?;
        Ok(WindowConjugation { windows, inverses })
    }

    /// Seeded unitary windows (QR of complex Gaussian matrices).
    pub fn random_unitary(levels: usize, window: usize, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let windows = (0..levels)
            .map(|_| {
                let g = DMatrix::from_fn(window, window, |_, _| random_gaussian(&mut rng));
                g.qr().q()
            })
            .collect();
        Self::new(windows)
    }

    /// Seeded `I + norm * u v^* / (|u| |v|)` per level.
    pub fn random_rank_one(levels: usize, window: usize, norm: f64, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let windows = (0..levels)
            .map(|_| {
                let u = DVector::from_fn(window, |_, _| random_gaussian(&mut rng));
                let v = DVector::from_fn(window, |_, _| random_gaussian(&mut rng));
                let scale = norm / (u.norm() * v.norm());
                DMatrix::identity(window, window) + &u * v.adjoint() * Complex64::new(scale, 0.0)
            })
            .collect();
        Self::new(windows)
    }

    pub fn scalar(levels: usize, c: Complex64) -> Result<Self> {
        Self::new(vec![DMatrix::from_element(1, 1, c); levels])
    }

    pub fn identity(levels: usize) -> Self {
        Self::scalar(levels, ONE).expect("identity is invertible")
    }

    pub fn levels(&self) -> usize {
        self.windows.len()
    }

    pub fn window(&self, j: usize) -> &DMatrix<Complex64> {
        &self.windows[j]
    }

    pub fn window_size(&self, j: usize) -> usize {
        self.windows[j].nrows()
    }

    /// Scalar windows act as `c I` on the whole level, not just the window.
    fn scalar_of(&self, j: usize) -> Option<Complex64> {
        (self.windows[j].nrows() == 1).then(|| self.windows[j][(0, 0)])
    }

    fn apply_window(m: &DMatrix<Complex64>, scalar: Option<Complex64>, v: &DVector<Complex64>) -> DVector<Complex64> {
        if let Some(c) = scalar {
            return v * c;
        }
        let w = m.nrows();
        let mut out = v.clone();
        let head = m * v.rows(0, w);
        out.rows_mut(0, w).copy_from(&head);
        out
    }

    /// `S_j v`.
    pub fn apply(&self, j: usize, v: &DVector<Complex64>) -> DVector<Complex64> {
        Self::apply_window(&self.windows[j], self.scalar_of(j), v)
    }

    /// `S_j^{-1} v`.
    pub fn apply_inverse(&self, j: usize, v: &DVector<Complex64>) -> DVector<Complex64> {
        Self::apply_window(&self.inverses[j], self.scalar_of(j).map(|c| ONE / c), v)
    }

    /// Dense `S_j` at truncation `dim`.
    pub fn dense(&self, j: usize, dim: usize) -> DMatrix<Complex64> {
        self.dense_of(&self.windows[j], self.scalar_of(j), dim)
    }

    pub fn dense_inverse(&self, j: usize, dim: usize) -> DMatrix<Complex64> {
        self.dense_of(&self.inverses[j], self.scalar_of(j).map(|c| ONE / c), dim)
    }

    fn dense_of(&self, m: &DMatrix<Complex64>, scalar: Option<Complex64>, dim: usize) -> DMatrix<Complex64> {
        if let Some(c) = scalar {
            return DMatrix::identity(dim, dim) * c;
        }
        let mut out = DMatrix::identity(dim, dim);
        let w = m.nrows();
        out.view_mut((0, 0), (w, w)).copy_from(m);
        out
    }

    pub fn inverse(&self) -> WindowConjugation {
        WindowConjugation {
            windows: self.inverses.clone(),
            inverses: self.windows.clone(),
        }
    }
}

/// Common view of flag-structured operators: diagonal-block sections and
/// block actions. Levels are 0-based.
pub trait BlockFlag: Send + Sync {
    fn n(&self) -> usize;
    fn block_dim(&self) -> usize;
    /// Eigen-section of diagonal block `j`, certified up to `radius`.
    fn diag_section(&self, j: usize, radius: f64) -> Result<Section>;
    /// `T_{l,j} v`.
    fn apply_block(&self, l: usize, j: usize, v: &DVector<Complex64>) -> DVector<Complex64>;
    fn block_is_zero(&self, l: usize, j: usize) -> bool;
    fn dense_block(&self, l: usize, j: usize) -> DMatrix<Complex64>;
    fn lambdas(&self) -> Vec<f64>;
    /// The same operator at another per-block truncation.
    fn rebuilt(&self, dim: usize) -> Result<Box<dyn BlockFlag>>;
}

impl BlockFlag for FlagOperator {
    fn n(&self) -> usize {
        FlagOperator::n(self)
    }

    fn block_dim(&self) -> usize {
        FlagOperator::block_dim(self)
    }

    fn diag_section(&self, j: usize, radius: f64) -> Result<Section> {
        eigen_section_within(self.diag_block(j), radius)
    }

    fn apply_block(&self, l: usize, j: usize, v: &DVector<Complex64>) -> DVector<Complex64> {
        DVector::from_vec(self.band_block(l, j).matvec(v.as_slice()))
    }

    fn block_is_zero(&self, l: usize, j: usize) -> bool {
        self.band_block(l, j).is_zero()
    }

    fn dense_block(&self, l: usize, j: usize) -> DMatrix<Complex64> {
        self.band_block(l, j).to_dense()
    }

    fn lambdas(&self) -> Vec<f64> {
        self.spec().lambdas().to_vec()
    }

    fn rebuilt(&self, dim: usize) -> Result<Box<dyn BlockFlag>> {
        Ok(Box::new(self.at_dim(dim)?))
    }
}

/// `B = S A S^{-1}` for a flag `A` and block-diagonal window conjugation `S`.
/// Sections of `B_jj` are `S_j t_j`.
#[derive(Debug, Clone)]
pub struct ConjugatedFlag {
    base: FlagOperator,
    conj: WindowConjugation,
}

impl ConjugatedFlag {
    pub fn new(base: FlagOperator, conj: WindowConjugation) -> Result<Self> {
        if conj.levels() != base.n() {
            return Err(CdError::param("conjugation", "one window per level required"));
        }
        if (0..base.n()).any(|j| conj.window_size(j) > base.block_dim()) {
            return Err(CdError::param("conjugation", "window larger than the truncation"));
        }
        Ok(ConjugatedFlag { base, conj })
    }

    pub fn base(&self) -> &FlagOperator {
        &self.base
    }

    pub fn conjugation(&self) -> &WindowConjugation {
        &self.conj
    }

    pub fn at_dim(&self, dim: usize) -> Result<ConjugatedFlag> {
        ConjugatedFlag::new(self.base.at_dim(dim)?, self.conj.clone())
    }

    /// Dense assembly of `S A S^{-1}`.
    pub fn to_operator(&self) -> OperatorMatrix {
        let n = self.base.n();
        let d = self.base.block_dim();
        let mut m = DMatrix::zeros(n * d, n * d);
        for l in 0..n {
            for j in l..n {
                m.view_mut((l * d, j * d), (d, d)).copy_from(&self.dense_block(l, j));
            }
        }
        OperatorMatrix::new(m, Some(vec![d; n])).expect("finite blocks")
    }
}

impl BlockFlag for ConjugatedFlag {
    fn n(&self) -> usize {
        self.base.n()
    }

    fn block_dim(&self) -> usize {
        self.base.block_dim()
    }

    fn diag_section(&self, j: usize, radius: f64) -> Result<Section> {
        let t = self.base.diag_section(j, radius)?;
        let conj = self.conj.clone();
        let (dim, tail) = (t.source_dim(), t.tail_estimate());
        Ok(Section::from_fn(dim, radius, tail, move |w| conj.apply(j, &t.coeffs(w))))
    }

    fn apply_block(&self, l: usize, j: usize, v: &DVector<Complex64>) -> DVector<Complex64> {
        let x = self.conj.apply_inverse(j, v);
        let y = self.base.apply_block(l, j, &x);
        self.conj.apply(l, &y)
    }

    fn block_is_zero(&self, l: usize, j: usize) -> bool {
        self.base.block_is_zero(l, j)
    }

    fn dense_block(&self, l: usize, j: usize) -> DMatrix<Complex64> {
        let d = self.base.block_dim();
        self.conj.dense(l, d) * self.base.dense_block(l, j) * self.conj.dense_inverse(j, d)
    }

    fn lambdas(&self) -> Vec<f64> {
        self.base.spec().lambdas().to_vec()
    }

    fn rebuilt(&self, dim: usize) -> Result<Box<dyn BlockFlag>> {
        Ok(Box::new(self.at_dim(dim)?))
    }
}

/// Flag given only by a dense block upper-triangular matrix. Diagonal blocks
/// must be upper triangular with constant diagonal so that their sections
/// come from back-substitution.
#[derive(Debug, Clone)]
pub struct DenseFlag {
    op: OperatorMatrix,
    lambdas: Vec<f64>,
}

impl DenseFlag {
    pub fn new(op: OperatorMatrix, lambdas: Vec<f64>) -> Result<Self> {
        let sizes = op
            .block_structure()
            .ok_or_else(|| CdError::param("op", "block structure required"))?;
        if sizes.windows(2).any(|w| w[0] != w[1]) {
            return Err(CdError::param("op", "blocks must share one size"));
        }
        if lambdas.len() != sizes.len() {
            return Err(CdError::param("lambdas", "one label per level required"));
        }
        Ok(DenseFlag { op, lambdas })
    }

    pub fn operator(&self) -> &OperatorMatrix {
        &self.op
    }
}

impl BlockFlag for DenseFlag {
    fn n(&self) -> usize {
        self.op.block_count()
    }

    fn block_dim(&self) -> usize {
        self.op.dim() / self.op.block_count()
    }

    fn diag_section(&self, j: usize, radius: f64) -> Result<Section> {
        crate::geometry::triangular_section(&self.op.block(j, j), radius)
    }

    fn apply_block(&self, l: usize, j: usize, v: &DVector<Complex64>) -> DVector<Complex64> {
        self.op.block(l, j) * v
    }

    fn block_is_zero(&self, l: usize, j: usize) -> bool {
        self.op.block(l, j).iter().all(|x| *x == Complex64::new(0.0, 0.0))
    }

    fn dense_block(&self, l: usize, j: usize) -> DMatrix<Complex64> {
        self.op.block(l, j)
    }

    fn lambdas(&self) -> Vec<f64> {
        self.lambdas.clone()
    }

    fn rebuilt(&self, _dim: usize) -> Result<Box<dyn BlockFlag>> {
        Err(CdError::Precondition("a dense flag has a single truncation".into()))
    }
}

/// Shared handle used by families that rebuild at other truncations.
pub type SharedFlag = Arc<dyn BlockFlag>;

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gap_rules() {
        assert!(FlagSpec::new(vec![2.0, 3.0], 8).is_ok());
        for bad in [vec![2.0, 4.5], vec![2.0, 4.0], vec![3.0, 2.0], vec![2.0, 2.0]] {
            match FlagSpec::new(bad, 8) {
                Err(CdError::Spec { citation, .. }) => assert_eq!(citation, Some(GAP_CITATION)),
                other => panic!("expected rejection, got {other:?}"),
            }
        }
    }

    #[test]
    fn one_level_is_the_shift() {
        let f = build_ncfb(&FlagSpec::new(vec![2.0], 16).unwrap()).unwrap();
        assert_eq!(f.n(), 1);
        assert_eq!(f.to_operator().entries(), &build_bergman_shift(2.0, 16).unwrap().to_dense());
    }

    #[test]
    fn adjacent_diagonal_telescopes() {
        // d_n^2 = 2 / (n + 2) for lambda = (2, 3).
        let d = adjacent_diagonal(2.0, 3.0, 50);
        for (n, x) in d.iter().enumerate() {
            assert!((x * x - 2.0 / (n as f64 + 2.0)).abs() < 1e-14, "n = {n}");
        }
    }

    #[test]
    fn forced_zero_block_breaks_irreducibility() {
        let f = build_ncfb(&FlagSpec::new(vec![2.0, 3.0], 64).unwrap()).unwrap();
        assert!(verify_flag_structure(&f).strongly_irreducible);
        let g = f.with_block(0, 1, UpperBand::zeros(64)).unwrap();
        assert!(!verify_flag_structure(&g).strongly_irreducible);
    }

    #[test]
    fn orthogonal_family_is_fixed() {
        let mut e1 = DMatrix::<Complex64>::zeros(4, 4);
        e1[(0, 0)] = ONE;
        e1[(1, 1)] = ONE;
        let e2 = DMatrix::<Complex64>::identity(4, 4) - &e1;
        let fam = IdempotentFamily::new(vec![e1.clone(), e2]).unwrap();
        let out = orthogonalize_idempotents(&fam).unwrap();
        assert!((out.conjugator.entries() - DMatrix::<Complex64>::identity(4, 4)).norm() < 1e-14);
        assert!((&out.projections[0] - e1).norm() < 1e-14);
    }

    #[test]
    fn family_must_sum_to_identity() {
        let mut e1 = DMatrix::<Complex64>::zeros(3, 3);
        e1[(0, 0)] = ONE;
        assert!(matches!(IdempotentFamily::new(vec![e1]), Err(CdError::Structural(_))));
    }

    #[test]
    fn window_conjugation_roundtrip() {
        let c = WindowConjugation::random_rank_one(2, 5, 0.2, 7).unwrap();
        let v = DVector::from_fn(9, |i, _| Complex64::new(i as f64, 1.0));
        let back = c.apply_inverse(1, &c.apply(1, &v));
        assert!((back - &v).norm() < 1e-13);
        let dense = c.dense(0, 9) * c.dense_inverse(0, 9);
        assert!((dense - DMatrix::<Complex64>::identity(9, 9)).norm() < 1e-13);
        let u = WindowConjugation::random_unitary(1, 4, 3).unwrap();
        let w = u.window(0);
        assert!((w.adjoint() * w - DMatrix::<Complex64>::identity(4, 4)).norm() < 1e-13);
    }
}
