//! Second fundamental forms, coupling recovery and the two equivalence
//! deciders (unitary and unitary-plus-compact) on grid samples.
//!
//! Levels are 0-based; residual names use 1-based levels.

use std::f64::consts::PI;
use std::sync::Arc;

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::error::{CdError, Result};
use crate::flag::{BlockFlag, WindowConjugation};
use crate::geometry::{curvature_scalar, dwdwbar, eigen_section_within, DiskGrid, Section};
use crate::linalg::{inverse_checked, spectral_norm};
use crate::shift::WeightedShift;

const I: Complex64 = Complex64::new(0.0, 1.0);

#[derive(Debug, Clone, PartialEq)]
pub struct ThetaField {
    pub grid: DiskGrid,
    pub levels: (usize, usize),
    /// `||T_{l,j} t_j(w)||^2 / ||t_j(w)||^2`.
    pub ratio_values: Vec<f64>,
    /// `K / (ratio - K)^{1/2}` with `K` the curvature of level `l`; adjacent
    /// levels only, `None` where the ratio vanishes.
    pub form_values: Option<Vec<Option<Complex64>>>,
}

fn sections(flag: &dyn BlockFlag, grid: &DiskGrid) -> Result<Vec<Section>> {
    (0..flag.n()).map(|j| flag.diag_section(j, grid.reach())).collect()
}

fn check_levels(flag: &dyn BlockFlag, l: usize, j: usize) -> Result<()> {
    if !(l < j && j < flag.n()) {
        return Err(CdError::param("levels", format!("need 1 <= l < j <= {}", flag.n())));
    }
    Ok(())
}

fn ratio_at(flag: &dyn BlockFlag, l: usize, j: usize, tj: &Section, w: Complex64) -> f64 {
    let t = tj.coeffs(w);
    flag.apply_block(l, j, &t).norm_squared() / t.norm_squared()
}

pub fn theta_field(flag: &dyn BlockFlag, levels: (usize, usize), grid: &DiskGrid) -> Result<ThetaField> {
    let (l, j) = levels;
    check_levels(flag, l, j)?;
    let tj = flag.diag_section(j, grid.reach())?;
    let points = grid.points();
    let ratio_values: Vec<f64> = points.iter().map(|&w| ratio_at(flag, l, j, &tj, w)).collect();
    let form_values = if j == l + 1 {
        let tl = flag.diag_section(l, grid.reach())?;
        let k = curvature_scalar(&tl, grid)?.scalar_values().expect("scalar field");
        Some(
            ratio_values
                .iter()
                .zip(k)
                .map(|(&r, k)| (r > 0.0 && r - k > 0.0).then(|| Complex64::new(k / (r - k).sqrt(), 0.0)))
                .collect(),
        )
    } else {
        None
    };
    Ok(ThetaField {
        grid: grid.clone(),
        levels,
        ratio_values,
        form_values,
    })
}

/// `T_{l,j} t_j(w) = c(w) t_l(w)` with `c = <t_l, T_{l,j} t_j> / ||t_l||^2`.
fn proportionality(flag: &dyn BlockFlag, l: usize, j: usize, tl: &Section, tj: &Section, w: Complex64) -> Result<Complex64> {
    let a = tl.coeffs(w);
    let b = flag.apply_block(l, j, &tj.coeffs(w));
    let c = a.dotc(&b) / a.norm_squared();
    let miss = (&b - &a * c).norm();
    if miss > 1e-8 * a.norm() * c.norm().max(1.0) {
        return Err(CdError::Structural(format!(
            "T_({},{}) t_{} is not proportional to t_{} at w = {w} (defect {miss:e})",
            l + 1,
            j + 1,
            j + 1,
            l + 1
        )));
    }
    Ok(c)
}

/// Samples of `phi_{l,j}` with `T_{l,j} = phi_{l,j}(T_ll) T_{l,l+1} ... T_{j-1,j}`.
///
/// For adjacent levels this is the proportionality factor of
/// `T_{l,l+1} t_{l+1}` against `t_l`; otherwise that factor divided by the
/// product of the adjacent ones along the chain.
pub fn recover_coupling(flag: &dyn BlockFlag, levels: (usize, usize), grid: &DiskGrid) -> Result<Vec<Complex64>> {
    let (l, j) = levels;
    check_levels(flag, l, j)?;
    let secs = sections(flag, grid)?;
    grid.points()
        .into_iter()
        .map(|w| {
            let c = proportionality(flag, l, j, &secs[l], &secs[j], w)?;
            if j == l + 1 {
                return Ok(c);
            }
            let mut chain = Complex64::new(1.0, 0.0);
            for k in l..j {
                chain *= proportionality(flag, k, k + 1, &secs[k], &secs[k + 1], w)?;
            }
            if chain == Complex64::new(0.0, 0.0) {
                return Err(CdError::Structural(format!("adjacent chain vanishes at w = {w}")));
            }
            Ok(c / chain)
        })
        .collect()
}

/// `y` embedded as `y (+) I` at dimension `dim` (or `y` itself if full size).
fn embedded(y: &DMatrix<Complex64>, dim: usize) -> Result<DMatrix<Complex64>> {
    let m = y.nrows();
    if m != y.ncols() || m > dim {
        return Err(CdError::param("conjugator", "square matrix no larger than the block required"));
    }
    let mut full = DMatrix::identity(dim, dim);
    full.view_mut((0, 0), (m, m)).copy_from(y);
    Ok(full)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PsiCheck {
    /// `sup |K_T - K_Tt - ddbar ln(||Y^{-1} t||^2 / ||t||^2)|`.
    pub residual: f64,
    /// `sup ||(Tt - w) tt|| / ||tt||` for `tt = Y^{-1} t`, `Tt = Y^{-1} T Y`.
    pub eigen_residual: f64,
}

/// Checks `K_T - K_Tt = ddbar ln(||Y^{-1} t||^2 / ||t||^2)` for
/// `Tt = Y^{-1} T Y` with section `Y^{-1} t`. `y` may be a leading window,
/// acting as the identity beyond it.
pub fn psi_laplacian_check(shift: &WeightedShift, y: &DMatrix<Complex64>, grid: &DiskGrid) -> Result<PsiCheck> {
    let dim = shift.dim();
    let yfull = embedded(y, dim)?;
    let (yinv, _) = inverse_checked(&yfull)?;
    let t = eigen_section_within(shift, grid.reach())?;
    let tt = t.mapped(Arc::new(yinv.clone()));
    let t_dense = shift.to_dense();
    let k = curvature_scalar(&t, grid)?.scalar_values().expect("scalar field");
    let kt = curvature_scalar(&tt, grid)?.scalar_values().expect("scalar field");
    let ln_phi = |w: Complex64| (tt.norm_sqr(w) / t.norm_sqr(w)).ln();
    let mut residual: f64 = 0.0;
    let mut eigen_residual: f64 = 0.0;
    for (p, w) in grid.points().into_iter().enumerate() {
        let lap = dwdwbar(&ln_phi, w, grid.fd_step(), grid.richardson());
        residual = residual.max((k[p] - kt[p] - lap).abs());
        // (Tt - w) tt = Y^{-1} (T - w) t; the last row of (T - w) t is the
        // truncation row and is dropped.
        let tw = t.coeffs(w);
        let mut raw = &t_dense * &tw - &tw * w;
        raw[dim - 1] = Complex64::new(0.0, 0.0);
        eigen_residual = eigen_residual.max((&yinv * raw).norm() / tt.coeffs(w).norm());
    }
    Ok(PsiCheck {
        residual,
        eigen_residual,
    })
}

/// Per-level conjugators `Y_j` realizing `B = Y A Y^{-1}` with the derived
/// fields. `phi_j(w) = ||Y_j t_j(w)||^2 / ||t_j(w)||^2` for sections `t_j`
/// of `A`. `alpha_j` and `Psi_j` refer to the normalized `X_j = Y_j / (2 ||Y_j||)`,
/// which acts as `alpha_j I` beyond its window.
#[derive(Debug, Clone, PartialEq)]
pub struct UKWitness {
    pub conjugators: WindowConjugation,
    pub alphas: Vec<f64>,
    pub phi_fields: Vec<Vec<f64>>,
    pub psi_fields: Vec<Vec<f64>>,
}

impl UKWitness {
    pub fn new(conjugators: WindowConjugation, a: &dyn BlockFlag, grid: &DiskGrid) -> Result<Self> {
        if conjugators.levels() != a.n() {
            return Err(CdError::param("witness", "one conjugator per level required"));
        }
        let secs = sections(a, grid)?;
        let points = grid.points();
        let dim = a.block_dim();
        let mut alphas = Vec::new();
        let mut phi_fields = Vec::new();
        let mut psi_fields = Vec::new();
        for (j, t) in secs.iter().enumerate() {
            let y = conjugators.dense(j, conjugators.window_size(j).min(dim));
            inverse_checked(&conjugators.dense(j, dim))?;
            let scale = 2.0 * spectral_norm(&y).max(1.0);
            let alpha = 1.0 / scale;
            let phi: Vec<f64> = points.iter().map(|&w| phi_at(&conjugators, j, t, w)).collect();
            if phi.iter().any(|p| !(*p > 0.0)) {
                return Err(CdError::numeric(format!("phi_{} is not positive on the grid", j + 1)));
            }
            let psi = phi.iter().map(|p| (p * alpha * alpha + 1.0 - alpha * alpha).ln()).collect();
            alphas.push(alpha);
            phi_fields.push(phi);
            psi_fields.push(psi);
        }
        Ok(UKWitness {
            conjugators,
            alphas,
            phi_fields,
            psi_fields,
        })
    }
}

fn phi_at(conj: &WindowConjugation, j: usize, t: &Section, w: Complex64) -> f64 {
    let v = t.coeffs(w);
    conj.apply(j, &v).norm_squared() / v.norm_squared()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EquivalenceKind {
    Unitary,
    Uk,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    Equivalent,
    NotEquivalent,
    Undecided,
}

impl Verdict {
    pub fn as_str(&self) -> &'static str {
        match self {
            Verdict::Equivalent => "equivalent",
            Verdict::NotEquivalent => "not_equivalent",
            Verdict::Undecided => "undecided",
        }
    }

    /// All residuals `<= tol`: equivalent; any `> 10 tol`: not equivalent.
    pub fn from_residuals(residuals: &[(String, f64)], tol: f64) -> Verdict {
        if residuals.is_empty() || residuals.iter().any(|(_, r)| r.is_nan()) {
            return Verdict::Undecided;
        }
        if residuals.iter().any(|(_, r)| *r > 10.0 * tol) {
            Verdict::NotEquivalent
        } else if residuals.iter().all(|(_, r)| *r <= tol) {
            Verdict::Equivalent
        } else {
            Verdict::Undecided
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EquivalenceVerdict {
    pub kind: EquivalenceKind,
    pub verdict: Verdict,
    /// Level matching; always the identity.
    pub matching: Vec<usize>,
    /// Named sup-norm residuals.
    pub residuals: Vec<(String, f64)>,
    pub tolerance: f64,
    pub diagnostics: Vec<String>,
    pub witness: Option<UKWitness>,
    /// `(i / 2 pi) ddbar ln phi_j` per level and grid point (uk only).
    pub correction_fields: Option<Vec<Vec<Complex64>>>,
}

fn same_shape(a: &dyn BlockFlag, b: &dyn BlockFlag) -> Result<()> {
    if a.n() != b.n() {
        return Err(CdError::param("flags", "flags have different numbers of levels"));
    }
    Ok(())
}

fn curvatures(flag: &dyn BlockFlag, grid: &DiskGrid) -> Result<Vec<Vec<f64>>> {
    sections(flag, grid)?
        .iter()
        .map(|s| Ok(curvature_scalar(s, grid)?.scalar_values().expect("scalar field")))
        .collect()
}

fn sup_diff<T: Copy>(a: &[T], b: &[T], f: impl Fn(T, T) -> f64) -> f64 {
    a.iter().zip(b).map(|(x, y)| f(*x, *y)).fold(0.0, f64::max)
}

/// Chern-coefficient functions of two curvature tuples at each point,
/// compared coefficientwise.
fn chern_gap(ka: &[Vec<f64>], kb: &[Vec<f64>]) -> f64 {
    let npts = ka[0].len();
    let factor = I / (2.0 * PI);
    let mut worst: f64 = 0.0;
    for p in 0..npts {
        let xa: Vec<Complex64> = ka.iter().map(|k| factor * k[p]).collect();
        let xb: Vec<Complex64> = kb.iter().map(|k| factor * k[p]).collect();
        let ea = crate::geometry::elementary_symmetric(&xa);
        let eb = crate::geometry::elementary_symmetric(&xb);
        worst = worst.max(sup_diff(&ea, &eb, |x, y| (x - y).norm()));
    }
    worst
}

fn permutation_note(ka: &[Vec<f64>], kb: &[Vec<f64>]) -> Option<String> {
    let n = ka.len();
    for i in 0..n {
        for j in 0..n {
            if i != j {
                let d = sup_diff(&ka[i], &kb[j], |x, y| (x - y).abs());
                if d < 1e-6 {
                    return Some(format!(
                        "curvature of level {} of A matches level {} of B (sup gap {d:e}); matching kept index-wise",
                        i + 1,
                        j + 1
                    ));
                }
            }
        }
    }
    None
}

/// Index-wise comparison of curvatures, all `theta` ratios and all
/// recovered couplings.
pub fn decide_unitary(a: &dyn BlockFlag, b: &dyn BlockFlag, grid: &DiskGrid, tol: f64) -> Result<EquivalenceVerdict> {
    same_shape(a, b)?;
    check_tol(tol)?;
    let n = a.n();
    let ka = curvatures(a, grid)?;
    let kb = curvatures(b, grid)?;
    let mut residuals = Vec::new();
    let mut diagnostics = Vec::new();
    let chern = ka
        .iter()
        .zip(&kb)
        .map(|(x, y)| sup_diff(x, y, |p, q| (p - q).abs()))
        .fold(0.0, f64::max);
    residuals.push(("chern".to_string(), chern));
    diagnostics.push(format!("chern coefficient gap {:e}", chern_gap(&ka, &kb)));
    if let Some(note) = permutation_note(&ka, &kb) {
        diagnostics.push(note);
    }
    let mut undecided = false;
    for l in 0..n {
        for j in l + 1..n {
            let ta = theta_field(a, (l, j), grid)?;
            let tb = theta_field(b, (l, j), grid)?;
            residuals.push((
                format!("theta({},{})", l + 1, j + 1),
                sup_diff(&ta.ratio_values, &tb.ratio_values, |x, y| (x - y).abs()),
            ));
            match (recover_coupling(a, (l, j), grid), recover_coupling(b, (l, j), grid)) {
                (Ok(pa), Ok(pb)) => residuals.push((
                    format!("coupling({},{})", l + 1, j + 1),
                    sup_diff(&pa, &pb, |x, y| (x - y).norm()),
                )),
                (Err(e), _) | (_, Err(e)) => {
                    undecided = true;
                    diagnostics.push(format!("coupling({},{}): {e}", l + 1, j + 1));
                }
            }
        }
    }
    let mut verdict = Verdict::from_residuals(&residuals, tol);
    if undecided && verdict == Verdict::Equivalent {
        verdict = Verdict::Undecided;
    }
    Ok(EquivalenceVerdict {
        kind: EquivalenceKind::Unitary,
        verdict,
        matching: (0..n).collect(),
        residuals,
        tolerance: tol,
        diagnostics,
        witness: None,
        correction_fields: None,
    })
}

fn check_tol(tol: f64) -> Result<()> {
    if !(tol > 0.0 && tol.is_finite()) {
        return Err(CdError::param("tol", "must be positive and finite"));
    }
    Ok(())
}

/// Verifies a supplied witness: per level
/// `K_{A,j} - K_{B,j} = ddbar ln phi_j` ("curvature(j)") and
/// `(phi_j / phi_{j+1}) ratio_A = ratio_B` for adjacent `theta` ("theta(j,j+1)").
/// Without a witness the verdict is undecided.
pub fn decide_uk(
    a: &dyn BlockFlag,
    b: &dyn BlockFlag,
    witness: Option<&UKWitness>,
    grid: &DiskGrid,
    tol: f64,
) -> Result<EquivalenceVerdict> {
    same_shape(a, b)?;
    check_tol(tol)?;
    let n = a.n();
    let Some(witness) = witness else {
        return Ok(EquivalenceVerdict {
            kind: EquivalenceKind::Uk,
            verdict: Verdict::Undecided,
            matching: (0..n).collect(),
            residuals: Vec::new(),
            tolerance: tol,
            diagnostics: vec!["no witness supplied; witness search is not attempted".into()],
            witness: None,
            correction_fields: None,
        });
    };
    if witness.conjugators.levels() != n {
        return Err(CdError::param("witness", "one conjugator per level required"));
    }
    let secs = sections(a, grid)?;
    let ka = curvatures(a, grid)?;
    let kb = curvatures(b, grid)?;
    let points = grid.points();
    let mut residuals = Vec::new();
    let mut correction_fields = Vec::with_capacity(n);
    for j in 0..n {
        let t = &secs[j];
        let conj = &witness.conjugators;
        let ln_phi = |w: Complex64| phi_at(conj, j, t, w).ln();
        let mut worst: f64 = 0.0;
        let mut corr = Vec::with_capacity(points.len());
        for (p, &w) in points.iter().enumerate() {
            let lap = dwdwbar(&ln_phi, w, grid.fd_step(), grid.richardson());
            worst = worst.max((ka[j][p] - kb[j][p] - lap).abs());
            corr.push(I / (2.0 * PI) * lap);
        }
        residuals.push((format!("curvature({})", j + 1), worst));
        correction_fields.push(corr);
    }
    for j in 0..n.saturating_sub(1) {
        let ta = theta_field(a, (j, j + 1), grid)?;
        let tb = theta_field(b, (j, j + 1), grid)?;
        let pj = &witness.phi_fields[j];
        let pk = &witness.phi_fields[j + 1];
        let worst = (0..points.len())
            .map(|p| (pj[p] / pk[p] * ta.ratio_values[p] - tb.ratio_values[p]).abs())
            .fold(0.0, f64::max);
        residuals.push((format!("theta({},{})", j + 1, j + 2), worst));
    }
    let verdict = Verdict::from_residuals(&residuals, tol);
    Ok(EquivalenceVerdict {
        kind: EquivalenceKind::Uk,
        verdict,
        matching: (0..n).collect(),
        residuals,
        tolerance: tol,
        diagnostics: Vec::new(),
        witness: Some(witness.clone()),
        correction_fields: Some(correction_fields),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn verdict_bands() {
        let r = |v: f64| vec![("x".to_string(), v)];
        assert_eq!(Verdict::from_residuals(&r(1e-7), 1e-6), Verdict::Equivalent);
        assert_eq!(Verdict::from_residuals(&r(5e-6), 1e-6), Verdict::Undecided);
        assert_eq!(Verdict::from_residuals(&r(2e-5), 1e-6), Verdict::NotEquivalent);
        assert_eq!(Verdict::from_residuals(&[], 1e-6), Verdict::Undecided);
    }
}
