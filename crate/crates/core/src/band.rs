//! Upper-triangular banded storage.
//!
//! Flag blocks at `dim = 4000` would need gigabytes as dense complex matrices,
//! while every block produced by the construction is upper triangular with a
//! bandwidth bounded by the coupling-series length. `UpperBand` stores only
//! the diagonals `0..=bandwidth`.

use nalgebra::DMatrix;
use num_complex::Complex64;

const ZERO: Complex64 = Complex64::new(0.0, 0.0);
const ONE: Complex64 = Complex64::new(1.0, 0.0);

/// `diags[o][i]` is entry `(i, i + o)`; `diags[o].len() == dim - o`.
#[derive(Debug, Clone, PartialEq)]
pub struct UpperBand {
    dim: usize,
    diags: Vec<Vec<Complex64>>,
}

impl UpperBand {
    pub fn zeros(dim: usize) -> Self {
        UpperBand {
            dim,
            diags: vec![vec![ZERO; dim]],
        }
    }

    pub fn identity(dim: usize) -> Self {
        Self::scalar(dim, ONE)
    }

    pub fn scalar(dim: usize, c: Complex64) -> Self {
        UpperBand {
            dim,
            diags: vec![vec![c; dim]],
        }
    }

    /// Builds from explicit diagonals; missing tail entries are zero-filled and
    /// diagonals beyond `dim - 1` are dropped.
    pub fn from_diagonals(dim: usize, diags: Vec<Vec<Complex64>>) -> Self {
        let mut out = Vec::with_capacity(diags.len().max(1));
        for (o, mut d) in diags.into_iter().enumerate() {
            if o >= dim.max(1) {
                break;
            }
            d.resize(dim - o, ZERO);
            out.push(d);
        }
        if out.is_empty() {
            out.push(vec![ZERO; dim]);
        }
        UpperBand { dim, diags: out }
    }

    /// Constant diagonal `a0` and superdiagonal `weights`.
    pub fn bidiagonal(a0: Complex64, weights: &[Complex64]) -> Self {
        let dim = weights.len() + 1;
        Self::from_diagonals(dim, vec![vec![a0; dim], weights.to_vec()])
    }

    pub fn diagonal_matrix(entries: Vec<Complex64>) -> Self {
        let dim = entries.len();
        UpperBand {
            dim,
            diags: vec![entries],
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn bandwidth(&self) -> usize {
        self.diags.len() - 1
    }

    pub fn diagonal(&self, offset: usize) -> Option<&[Complex64]> {
        self.diags.get(offset).map(|d| d.as_slice())
    }

    pub fn get(&self, i: usize, j: usize) -> Complex64 {
        if j < i || i >= self.dim || j >= self.dim {
            return ZERO;
        }
        self.diags.get(j - i).map_or(ZERO, |d| d[i])
    }

    /// Leading `dim x dim` submatrix.
    pub fn truncate(&self, dim: usize) -> Self {
        assert!(dim <= self.dim, "truncate can only shrink");
        let diags = self
            .diags
            .iter()
            .take(dim.max(1))
            .enumerate()
            .map(|(o, d)| d[..dim - o].to_vec())
            .collect();
        UpperBand { dim, diags }
    }

    pub fn mul(&self, rhs: &UpperBand) -> UpperBand {
        assert_eq!(self.dim, rhs.dim, "band dimension mismatch");
        let n = self.dim;
        let bw = (self.bandwidth() + rhs.bandwidth()).min(n.saturating_sub(1));
        let mut diags: Vec<Vec<Complex64>> = (0..=bw).map(|o| vec![ZERO; n - o]).collect();
        for (p, da) in self.diags.iter().enumerate() {
            for (q, db) in rhs.diags.iter().enumerate() {
                let o = p + q;
                if o > bw {
                    continue;
                }
                let out = &mut diags[o];
                for i in 0..n - o {
                    out[i] += da[i] * db[i + p];
                }
            }
        }
        UpperBand { dim: n, diags }
    }

    pub fn add(&self, rhs: &UpperBand) -> UpperBand {
        self.combine(rhs, ONE)
    }

    pub fn sub(&self, rhs: &UpperBand) -> UpperBand {
        self.combine(rhs, -ONE)
    }

    fn combine(&self, rhs: &UpperBand, sign: Complex64) -> UpperBand {
        assert_eq!(self.dim, rhs.dim, "band dimension mismatch");
        let bw = self.bandwidth().max(rhs.bandwidth());
        let diags = (0..=bw)
            .map(|o| {
                let mut d = vec![ZERO; self.dim - o];
                if let Some(a) = self.diags.get(o) {
                    d.iter_mut().zip(a).for_each(|(x, y)| *x += y);
                }
                if let Some(b) = rhs.diags.get(o) {
                    d.iter_mut().zip(b).for_each(|(x, y)| *x += sign * y);
                }
                d
            })
            .collect();
        UpperBand {
            dim: self.dim,
            diags,
        }
    }

    pub fn scale(&self, c: Complex64) -> UpperBand {
        UpperBand {
            dim: self.dim,
            diags: self
                .diags
                .iter()
                .map(|d| d.iter().map(|x| x * c).collect())
                .collect(),
        }
    }

    pub fn matvec(&self, v: &[Complex64]) -> Vec<Complex64> {
        assert_eq!(v.len(), self.dim, "vector length mismatch");
        let mut out = vec![ZERO; self.dim];
        for (o, d) in self.diags.iter().enumerate() {
            for (i, a) in d.iter().enumerate() {
                out[i] += a * v[i + o];
            }
        }
        out
    }

    /// Evaluates `sum_m coeffs[m] * self^m` by Horner's rule.
    pub fn polynomial(&self, coeffs: &[Complex64]) -> UpperBand {
        let mut acc = UpperBand::zeros(self.dim);
        for c in coeffs.iter().rev() {
            acc = acc.mul(self).add(&UpperBand::scalar(self.dim, *c));
        }
        acc
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.diags
            .iter()
            .flatten()
            .map(|x| x.norm_sqr())
            .sum::<f64>()
            .sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.diags
            .iter()
            .flatten()
            .map(|x| x.norm())
            .fold(0.0, f64::max)
    }

    pub fn is_zero(&self) -> bool {
        self.diags.iter().flatten().all(|x| *x == ZERO)
    }

    pub fn is_finite(&self) -> bool {
        self.diags
            .iter()
            .flatten()
            .all(|x| x.re.is_finite() && x.im.is_finite())
    }

    /// Squared Euclidean norm of every row.
    pub fn row_norms_sqr(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        for d in &self.diags {
            for (i, a) in d.iter().enumerate() {
                out[i] += a.norm_sqr();
            }
        }
        out
    }

    /// Squared Euclidean norm of every column.
    pub fn col_norms_sqr(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        for (o, d) in self.diags.iter().enumerate() {
            for (i, a) in d.iter().enumerate() {
                out[i + o] += a.norm_sqr();
            }
        }
        out
    }

    pub fn to_dense(&self) -> DMatrix<Complex64> {
        let mut m = DMatrix::zeros(self.dim, self.dim);
        for (o, d) in self.diags.iter().enumerate() {
            for (i, a) in d.iter().enumerate() {
                m[(i, i + o)] = *a;
            }
        }
        m
    }

    /// Frobenius norm of the entries whose row or column index is at least
    /// `from`.
    pub fn tail_frobenius(&self, from: usize) -> f64 {
        let mut acc = 0.0;
        for (o, d) in self.diags.iter().enumerate() {
            for (i, a) in d.iter().enumerate() {
                if i + o >= from {
                    acc += a.norm_sqr();
                }
            }
        }
        acc.sqrt()
    }
}
