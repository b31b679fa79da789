//! Truncated weighted backward shifts and dense operator utilities.
//!
//! A shift of dimension `N` has constant diagonal `a0` and superdiagonal
//! `weights[k] = a_{k,k+1}`, so `T e_{k+1} = a_{k,k+1} e_k`. The Bergman model
//! of parameter `lambda` uses `a_{k-1,k} = sqrt(k / (k + lambda - 1))`.

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::band::UpperBand;
use crate::error::{CdError, Result};
use crate::fit::{fit_window, power_law_exponent};
use crate::linalg::inverse_checked;

const ZERO: Complex64 = Complex64::new(0.0, 0.0);

#[derive(Debug, Clone, PartialEq)]
pub struct WeightedShift {
    dim: usize,
    diag: Complex64,
    weights: Vec<Complex64>,
    lambda: Option<f64>,
}

impl WeightedShift {
    /// General shift with explicit weights; `dim = weights.len() + 1`.
    pub fn new(diag: Complex64, weights: Vec<Complex64>) -> Result<Self> {
        if weights.is_empty() {
            return Err(CdError::param("dim", "a shift needs dim >= 2"));
        }
        if weights.iter().any(|w| !(w.re.is_finite() && w.im.is_finite())) || !diag.re.is_finite() || !diag.im.is_finite() {
            return Err(CdError::param("weights", "non-finite entry"));
        }
        Ok(WeightedShift {
            dim: weights.len() + 1,
            diag,
            weights,
            lambda: None,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn diag(&self) -> Complex64 {
        self.diag
    }

    pub fn weights(&self) -> &[Complex64] {
        &self.weights
    }

    pub fn lambda(&self) -> Option<f64> {
        self.lambda
    }

    /// Same operator truncated to `dim`. Bergman shifts can grow; a general
    /// shift can only be cut down.
    pub fn at_dim(&self, dim: usize) -> Result<WeightedShift> {
        if let Some(lambda) = self.lambda {
            let mut s = build_bergman_shift(lambda, dim)?;
            s.diag = self.diag;
            return Ok(s);
        }
        if dim < 2 || dim > self.dim {
            return Err(CdError::Truncation {
                required_dim: dim,
                reason: format!("general shift only known up to dim {}", self.dim),
            });
        }
        WeightedShift::new(self.diag, self.weights[..dim - 1].to_vec())
    }

    /// Same weights with diagonal `a0` (used to move the spectrum off `w`).
    pub fn with_diag(&self, a0: Complex64) -> WeightedShift {
        WeightedShift {
            diag: a0,
            ..self.clone()
        }
    }

    pub fn band(&self) -> UpperBand {
        UpperBand::bidiagonal(self.diag, &self.weights)
    }

    pub fn to_dense(&self) -> DMatrix<Complex64> {
        self.band().to_dense()
    }

    pub fn to_operator(&self) -> OperatorMatrix {
        OperatorMatrix {
            entries: self.to_dense(),
            block_structure: None,
        }
    }
}

/// Dense carrier for operator arithmetic on a truncation.
#[derive(Debug, Clone, PartialEq)]
pub struct OperatorMatrix {
    entries: DMatrix<Complex64>,
    block_structure: Option<Vec<usize>>,
}

impl OperatorMatrix {
    pub fn new(entries: DMatrix<Complex64>, block_structure: Option<Vec<usize>>) -> Result<Self> {
        if entries.nrows() != entries.ncols() {
            return Err(CdError::param("entries", "operator matrix must be square"));
        }
        if !crate::linalg::is_finite(&entries) {
            return Err(CdError::param("entries", "non-finite entry"));
        }
        if let Some(b) = &block_structure {
            if b.iter().sum::<usize>() != entries.nrows() || b.contains(&0) {
                return Err(CdError::param("block_structure", "block sizes must be positive and sum to dim"));
            }
        }
        Ok(OperatorMatrix {
            entries,
            block_structure,
        })
    }

    pub fn dim(&self) -> usize {
        self.entries.nrows()
    }

    pub fn entries(&self) -> &DMatrix<Complex64> {
        &self.entries
    }

    pub fn into_entries(self) -> DMatrix<Complex64> {
        self.entries
    }

    pub fn block_structure(&self) -> Option<&[usize]> {
        self.block_structure.as_deref()
    }

    fn block_offsets(&self) -> Vec<usize> {
        let sizes = self.block_structure.clone().unwrap_or_else(|| vec![self.dim()]);
        let mut offs = vec![0];
        for s in sizes {
            offs.push(offs.last().unwrap() + s);
        }
        offs
    }

    pub fn block_count(&self) -> usize {
        self.block_structure.as_ref().map_or(1, |b| b.len())
    }

    /// Block `(i, j)` (0-based) of the block structure.
    pub fn block(&self, i: usize, j: usize) -> DMatrix<Complex64> {
        let offs = self.block_offsets();
        self.entries
            .view((offs[i], offs[j]), (offs[i + 1] - offs[i], offs[j + 1] - offs[j]))
            .into_owned()
    }

    /// Frobenius norm of everything strictly below the block diagonal.
    pub fn below_block_diagonal_norm(&self) -> f64 {
        let n = self.block_count();
        let mut acc = 0.0;
        for i in 0..n {
            for j in 0..i {
                acc += self.block(i, j).norm_squared();
            }
        }
        acc.sqrt()
    }
}

/// Diagonal of `T T* - T* T` with tail and decay gauges.
#[derive(Debug, Clone, PartialEq)]
pub struct CommutatorProfile {
    pub diagonal_entries: Vec<f64>,
    pub tail_sup: f64,
    pub decay_exponent: Option<f64>,
}

impl CommutatorProfile {
    /// Gauges computed over `[cutoff, 0.95 * len)`.
    pub fn from_diagonal(diagonal_entries: Vec<f64>, cutoff: usize) -> Self {
        let window = fit_window(cutoff, diagonal_entries.len());
        let tail_sup = diagonal_entries[window.clone()]
            .iter()
            .map(|x| x.abs())
            .fold(0.0, f64::max);
        let decay_exponent = power_law_exponent(
            window.map(|n| (n as f64, diagonal_entries[n])),
            8,
        );
        CommutatorProfile {
            diagonal_entries,
            tail_sup,
            decay_exponent,
        }
    }
}

pub fn build_bergman_shift(lambda: f64, dim: usize) -> Result<WeightedShift> {
    if !(lambda > 0.0) || !lambda.is_finite() {
        return Err(CdError::param("lambda", format!("must be positive, got {lambda}")));
    }
    if dim < 2 {
        return Err(CdError::param("dim", format!("must be at least 2, got {dim}")));
    }
    let weights = (1..dim)
        .map(|k| {
            let k = k as f64;
            Complex64::new((k / (k + lambda - 1.0)).sqrt(), 0.0)
        })
        .collect();
    Ok(WeightedShift {
        dim,
        diag: ZERO,
        weights,
        lambda: Some(lambda),
    })
}

/// Entry `n` is `|a_{n,n+1}|^2 - |a_{n-1,n}|^2` (row norm minus column norm of
/// the truncation), with `a_{-1,0} := 0`. The last entry carries the truncation
/// edge and is excluded from the gauges.
pub fn self_commutator_profile(shift: &WeightedShift, cutoff: usize) -> Result<CommutatorProfile> {
    let dim = shift.dim();
    if cutoff + 8 >= dim {
        return Err(CdError::param(
            "cutoff",
            format!("cutoff {cutoff} must be below dim - 8 = {}", dim as i64 - 8),
        ));
    }
    let w = shift.weights();
    let entries = (0..dim)
        .map(|n| {
            let row = w.get(n).map_or(0.0, |x| x.norm_sqr());
            let col = if n == 0 { 0.0 } else { w[n - 1].norm_sqr() };
            row - col
        })
        .collect();
    Ok(CommutatorProfile::from_diagonal(entries, cutoff))
}

/// `(op - alpha I)(I - conj(alpha) op)^{-1}` on the truncation.
pub fn mobius_transform(op: &OperatorMatrix, alpha: Complex64) -> Result<OperatorMatrix> {
    if !(alpha.norm() < 1.0) {
        return Err(CdError::param("alpha", format!("|alpha| must be < 1, got {}", alpha.norm())));
    }
    let n = op.dim();
    let id = DMatrix::<Complex64>::identity(n, n);
    let resolvent = &id - op.entries() * alpha.conj();
    let (inv, _) = inverse_checked(&resolvent)?;
    let out = (op.entries() - &id * alpha) * inv;
    OperatorMatrix::new(out, op.block_structure.clone())
}

/// `sum_m f[m] op^m`. All supplied coefficients are used unless the remaining
/// tail is provably below `tail_tol`; growth past `1e150` is reported as
/// divergence.
pub fn apply_power_series(op: &OperatorMatrix, f: &[Complex64], tail_tol: f64) -> Result<OperatorMatrix> {
    let n = op.dim();
    let norm_op = crate::linalg::spectral_norm(op.entries());
    let mut power = DMatrix::<Complex64>::identity(n, n);
    let mut sum = DMatrix::<Complex64>::zeros(n, n);
    let abs_tail: Vec<f64> = {
        let mut acc = 0.0;
        let mut v: Vec<f64> = f
            .iter()
            .rev()
            .map(|c| {
                acc += c.norm();
                acc
            })
            .collect();
        v.reverse();
        v
    };
    for (m, c) in f.iter().enumerate() {
        if !(c.re.is_finite() && c.im.is_finite()) {
            return Err(CdError::param("series", format!("coefficient {m} is not finite")));
        }
        let pn = power.norm();
        if pn == 0.0 {
            break;
        }
        if norm_op < 1.0 && m > 0 {
            // Remaining terms are bounded by ||op^m|| * sum_{k>=m} |f_k| ||op||^{k-m}.
            if pn * abs_tail[m] < tail_tol {
                break;
            }
        }
        if *c != ZERO {
            sum += &power * *c;
        }
        let term = pn * c.norm();
        if !term.is_finite() || term > 1e150 || !crate::linalg::is_finite(&sum) {
            return Err(CdError::numeric(format!(
                "power series diverges at the operator scale (term {m} has norm {term:e})"
            )));
        }
        if m + 1 < f.len() {
            power = &power * op.entries();
        }
    }
    OperatorMatrix::new(sum, op.block_structure.clone())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(x: f64) -> Complex64 {
        Complex64::new(x, 0.0)
    }

    #[test]
    fn bergman_weights_small_cases() {
        let s = build_bergman_shift(1.0, 4).unwrap();
        assert_eq!(s.weights(), &[c(1.0); 3]);
        let s = build_bergman_shift(2.0, 3).unwrap();
        assert!((s.weights()[0].re - 0.5f64.sqrt()).abs() < 1e-16);
        assert!((s.weights()[1].re - (2.0f64 / 3.0).sqrt()).abs() < 1e-16);
        // sqrt(1/3.5) = 0.534522483824848769...
        let s = build_bergman_shift(3.5, 2).unwrap();
        assert!((s.weights()[0].re - 0.534_522_483_824_848_8).abs() < 1e-15);
    }

    #[test]
    fn bergman_rejects_bad_parameters() {
        assert!(matches!(build_bergman_shift(0.0, 4), Err(CdError::Parameter { field: "lambda", .. })));
        assert!(matches!(build_bergman_shift(-1.0, 4), Err(CdError::Parameter { field: "lambda", .. })));
        assert!(matches!(build_bergman_shift(2.0, 1), Err(CdError::Parameter { field: "dim", .. })));
    }

    #[test]
    fn unweighted_commutator_is_rank_one() {
        let p = self_commutator_profile(&build_bergman_shift(1.0, 64).unwrap(), 4).unwrap();
        assert_eq!(p.diagonal_entries[0], 1.0);
        assert!(p.diagonal_entries[1..63].iter().all(|x| *x == 0.0));
        assert_eq!(p.tail_sup, 0.0);
        assert_eq!(p.decay_exponent, None);
    }

    #[test]
    fn bergman_two_commutator_entries() {
        let p = self_commutator_profile(&build_bergman_shift(2.0, 200).unwrap(), 10).unwrap();
        for n in 0..190 {
            let exact = 1.0 / ((n as f64 + 1.0) * (n as f64 + 2.0));
            assert!((p.diagonal_entries[n] - exact).abs() < 1e-15, "n = {n}");
        }
    }

    #[test]
    fn cutoff_too_large() {
        let s = build_bergman_shift(2.0, 20).unwrap();
        assert!(self_commutator_profile(&s, 12).is_err());
        assert!(self_commutator_profile(&s, 11).is_ok());
    }

    #[test]
    fn mobius_trivial_cases() {
        let op = build_bergman_shift(2.0, 6).unwrap().to_operator();
        let same = mobius_transform(&op, c(0.0)).unwrap();
        assert!((same.entries() - op.entries()).norm() < 1e-15);
        let zero = OperatorMatrix::new(DMatrix::zeros(4, 4), None).unwrap();
        let out = mobius_transform(&zero, c(0.3)).unwrap();
        assert!((out.entries() + DMatrix::<Complex64>::identity(4, 4) * c(0.3)).norm() < 1e-15);
        assert!(mobius_transform(&zero, c(1.0)).is_err());
    }

    #[test]
    fn power_series_trivial_cases() {
        let op = build_bergman_shift(2.0, 6).unwrap().to_operator();
        let id = apply_power_series(&op, &[c(0.0), c(1.0)], 1e-14).unwrap();
        assert!((id.entries() - op.entries()).norm() < 1e-15);
        let k = apply_power_series(&op, &[c(2.5)], 1e-14).unwrap();
        assert!((k.entries() - DMatrix::<Complex64>::identity(6, 6) * c(2.5)).norm() < 1e-15);
        let big = OperatorMatrix::new(DMatrix::identity(3, 3) * c(10.0), None).unwrap();
        assert!(apply_power_series(&big, &vec![c(1.0); 200], 1e-14).is_err());
    }
}
