//! Dense complex linear algebra shared by the modules.
//!
//! nalgebra is the matrix carrier everywhere; factorizations that dominate
//! run time (SVD, LU with inverse) go through faer.

use faer::linalg::solvers::{DenseSolveCore, Solve};
use faer::Mat;
use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::error::{CdError, Result};

/// Dense solves whose 1-norm condition number exceeds this are rejected.
pub const CONDITION_BOUND: f64 = 1e12;

pub fn to_faer(m: &DMatrix<Complex64>) -> Mat<Complex64> {
    Mat::from_fn(m.nrows(), m.ncols(), |i, j| m[(i, j)])
}

pub fn from_faer(m: faer::MatRef<'_, Complex64>) -> DMatrix<Complex64> {
    DMatrix::from_fn(m.nrows(), m.ncols(), |i, j| m[(i, j)])
}

/// Full singular value decomposition `m = u * diag(s) * v^H`.
#[derive(Debug, Clone)]
pub struct Svd {
    pub u: DMatrix<Complex64>,
    pub s: Vec<f64>,
    pub v: DMatrix<Complex64>,
}

pub fn svd(m: &DMatrix<Complex64>) -> Result<Svd> {
    if m.is_empty() {
        return Ok(Svd {
            u: DMatrix::identity(m.nrows(), m.nrows()),
            s: Vec::new(),
            v: DMatrix::identity(m.ncols(), m.ncols()),
        });
    }
    let f = to_faer(m);
    let dec = f
        .svd()
        .map_err(|e| CdError::numeric(format!("SVD did not converge: {e:?}")))?;
    let s = dec.S().column_vector().iter().map(|x| x.re).collect();
    Ok(Svd {
        u: from_faer(dec.U()),
        s,
        v: from_faer(dec.V()),
    })
}

pub fn singular_values(m: &DMatrix<Complex64>) -> Result<Vec<f64>> {
    if m.is_empty() {
        return Ok(Vec::new());
    }
    to_faer(m)
        .singular_values()
        .map_err(|e| CdError::numeric(format!("SVD did not converge: {e:?}")))
}

pub fn spectral_norm(m: &DMatrix<Complex64>) -> f64 {
    singular_values(m)
        .ok()
        .and_then(|s| s.first().copied())
        .unwrap_or(0.0)
}

pub fn one_norm(m: &DMatrix<Complex64>) -> f64 {
    m.column_iter()
        .map(|c| c.iter().map(|x| x.norm()).sum::<f64>())
        .fold(0.0, f64::max)
}

pub fn is_finite(m: &DMatrix<Complex64>) -> bool {
    m.iter().all(|x| x.re.is_finite() && x.im.is_finite())
}

fn lu_inverse(a: &DMatrix<Complex64>) -> Result<(faer::linalg::solvers::PartialPivLu<Complex64>, DMatrix<Complex64>, f64)> {
    if a.nrows() != a.ncols() {
        return Err(CdError::param("matrix", "square matrix required"));
    }
    let lu = to_faer(a).partial_piv_lu();
    let inv = from_faer(lu.inverse().as_ref());
    let cond = if is_finite(&inv) {
        one_norm(a) * one_norm(&inv)
    } else {
        f64::INFINITY
    };
    if !(cond <= CONDITION_BOUND) {
        return Err(CdError::ill_conditioned(
            format!("condition estimate {cond:e} exceeds bound {CONDITION_BOUND:e}"),
            cond,
        ));
    }
    Ok((lu, inv, cond))
}

/// Inverse together with its 1-norm condition number.
pub fn inverse_checked(a: &DMatrix<Complex64>) -> Result<(DMatrix<Complex64>, f64)> {
    lu_inverse(a).map(|(_, inv, cond)| (inv, cond))
}

/// Solves `a x = b` by partial-pivot LU; rejects ill-conditioned systems.
pub fn solve_checked(a: &DMatrix<Complex64>, b: &DMatrix<Complex64>) -> Result<(DMatrix<Complex64>, f64)> {
    let (lu, _, cond) = lu_inverse(a)?;
    let x = lu.solve(to_faer(b).as_ref());
    Ok((from_faer(x.as_ref()), cond))
}

/// Minimal-norm least-squares solution of `a x = b` with relative rank
/// cutoff `rcond`. Returns `(x, ||a x - b||_F)`.
pub fn pinv_solve(
    a: &DMatrix<Complex64>,
    b: &DMatrix<Complex64>,
    rcond: f64,
) -> Result<(DMatrix<Complex64>, f64)> {
    let dec = svd(a)?;
    let smax = dec.s.first().copied().unwrap_or(0.0);
    let uhb = dec.u.adjoint() * b;
    let mut y = DMatrix::zeros(a.ncols(), b.ncols());
    for (k, &s) in dec.s.iter().enumerate() {
        if s > rcond * smax && s > 0.0 {
            for c in 0..b.ncols() {
                y[(k, c)] = uhb[(k, c)] / s;
            }
        }
    }
    let x = &dec.v * y;
    let residual = (a * &x - b).norm();
    Ok((x, residual))
}

/// Unitary factor `U` of the polar decomposition `m = U P`.
pub fn polar_unitary(m: &DMatrix<Complex64>) -> Result<DMatrix<Complex64>> {
    let dec = svd(m)?;
    Ok(&dec.u * dec.v.adjoint())
}
