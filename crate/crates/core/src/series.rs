//! Truncated power series `phi(z) = sum_m c_m z^m` used as couplings.

use num_complex::Complex64;

use crate::band::UpperBand;
use crate::error::{CdError, Result};

/// Hard cap on stored coefficients.
pub const MAX_TERMS: usize = 64;

/// Coefficients beyond the cap may be dropped only if this small relative to
/// the retained ones.
const TAIL_TOL: f64 = 1e-14;

#[derive(Debug, Clone, PartialEq)]
pub struct CouplingSeries {
    coeffs: Vec<Complex64>,
}

impl CouplingSeries {
    pub fn new(coeffs: Vec<Complex64>) -> Result<Self> {
        if coeffs.len() > MAX_TERMS {
            return Err(CdError::param(
                "series",
                format!("{} coefficients exceed the cap of {MAX_TERMS}", coeffs.len()),
            ));
        }
        if coeffs.iter().any(|c| !(c.re.is_finite() && c.im.is_finite())) {
            return Err(CdError::param("series", "non-finite coefficient"));
        }
        Ok(CouplingSeries { coeffs }.trimmed())
    }

    pub fn from_real(coeffs: &[f64]) -> Result<Self> {
        Self::new(coeffs.iter().map(|&c| Complex64::new(c, 0.0)).collect())
    }

    pub fn constant(c: Complex64) -> Self {
        CouplingSeries { coeffs: vec![c] }.trimmed()
    }

    pub fn one() -> Self {
        Self::constant(Complex64::new(1.0, 0.0))
    }

    pub fn zero() -> Self {
        CouplingSeries { coeffs: Vec::new() }
    }

    fn trimmed(mut self) -> Self {
        while self.coeffs.last().is_some_and(|c| *c == Complex64::new(0.0, 0.0)) {
            self.coeffs.pop();
        }
        self
    }

    pub fn coeffs(&self) -> &[Complex64] {
        &self.coeffs
    }

    pub fn is_zero(&self) -> bool {
        self.coeffs.is_empty()
    }

    pub fn is_one(&self) -> bool {
        self.coeffs == [Complex64::new(1.0, 0.0)]
    }

    pub fn eval(&self, z: Complex64) -> Complex64 {
        self.coeffs
            .iter()
            .rev()
            .fold(Complex64::new(0.0, 0.0), |acc, c| acc * z + c)
    }

    pub fn add(&self, rhs: &CouplingSeries) -> CouplingSeries {
        self.combine(rhs, 1.0)
    }

    pub fn sub(&self, rhs: &CouplingSeries) -> CouplingSeries {
        self.combine(rhs, -1.0)
    }

    fn combine(&self, rhs: &CouplingSeries, sign: f64) -> CouplingSeries {
        let n = self.coeffs.len().max(rhs.coeffs.len());
        let coeffs = (0..n)
            .map(|m| {
                let a = self.coeffs.get(m).copied().unwrap_or_default();
                let b = rhs.coeffs.get(m).copied().unwrap_or_default();
                a + b * sign
            })
            .collect();
        CouplingSeries { coeffs }.trimmed()
    }

    /// Cauchy product, cut at [`MAX_TERMS`]; fails if the discarded tail is
    /// not negligible.
    pub fn mul(&self, rhs: &CouplingSeries) -> Result<CouplingSeries> {
        if self.is_zero() || rhs.is_zero() {
            return Ok(Self::zero());
        }
        let full = self.coeffs.len() + rhs.coeffs.len() - 1;
        let mut out = vec![Complex64::new(0.0, 0.0); full];
        for (i, a) in self.coeffs.iter().enumerate() {
            for (j, b) in rhs.coeffs.iter().enumerate() {
                out[i + j] += a * b;
            }
        }
        if full > MAX_TERMS {
            let kept: f64 = out[..MAX_TERMS].iter().map(|c| c.norm()).sum();
            let tail: f64 = out[MAX_TERMS..].iter().map(|c| c.norm()).sum();
            if tail > TAIL_TOL * kept.max(f64::MIN_POSITIVE) {
                return Err(CdError::numeric(format!(
                    "series product needs {full} terms; tail {tail:e} exceeds the cap of {MAX_TERMS}"
                )));
            }
            out.truncate(MAX_TERMS);
        }
        Ok(CouplingSeries { coeffs: out }.trimmed())
    }

    /// `phi(T)` for a banded upper-triangular `T`.
    pub fn apply_to(&self, t: &UpperBand) -> UpperBand {
        t.polynomial(&self.coeffs)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn s(c: &[f64]) -> CouplingSeries {
        CouplingSeries::from_real(c).unwrap()
    }

    #[test]
    fn trailing_zeros_are_trimmed() {
        assert_eq!(s(&[1.0, 0.0, 0.0]), CouplingSeries::one());
        assert!(s(&[0.0]).is_zero());
    }

    #[test]
    fn product_and_eval() {
        let p = s(&[1.0, 1.0]).mul(&s(&[1.0, -1.0])).unwrap();
        assert_eq!(p, s(&[1.0, 0.0, -1.0]));
        let z = Complex64::new(0.3, 0.4);
        assert!((p.eval(z) - (Complex64::new(1.0, 0.0) - z * z)).norm() < 1e-15);
    }

    #[test]
    fn cap_is_enforced() {
        assert!(CouplingSeries::new(vec![Complex64::new(1.0, 0.0); MAX_TERMS + 1]).is_err());
        let long = CouplingSeries::new(vec![Complex64::new(1.0, 0.0); 40]).unwrap();
        assert!(long.mul(&long).is_err());
    }
}
