//! One function per subcommand. Each returns the output text; the caller
//! writes it and the manifest.

use std::sync::Arc;

use cdlab_core::comparator::{
    decide_uk, decide_unitary, theta_field, EquivalenceVerdict, UKWitness, Verdict,
};
use cdlab_core::flag::{
    adjacent_diagonal, orthogonalize_idempotents, verify_flag_structure, BlockFlag, IdempotentFamily,
    WindowConjugation,
};
use cdlab_core::geometry::{chern_polynomial, curvature_scalar, DiskGrid};
use cdlab_core::intertwine::{
    compact_correction, intertwiner_triangularity, kernel_basis, property_h_slope, BoundarySeed, KernelBasis,
    SylvesterMap, DEFAULT_KERNEL_TOL,
};
use nalgebra::DMatrix;
use num_complex::Complex64;
use serde_json::{json, Value};

use crate::error::{CliError, CliResult};
use crate::grid::{parse_grid, DEFAULT_GRID};
use crate::output::{grid_csv, json_text, sha256_hex};
use crate::spec::{load_spec, BuiltFlag, LoadedSpec};
use crate::{Opts, EXIT_NOT_EQUIVALENT, EXIT_OK, EXIT_UNDECIDED};

pub const DEFAULT_UNITARY_TOL: f64 = 1e-6;
pub const DEFAULT_UK_TOL: f64 = 1e-3;
pub const DEFAULT_KMAX: usize = 10_000;
pub const DEFAULT_KERNEL_DIM: usize = 48;
pub const DEFAULT_TRIANGULARITY_DIM: usize = 32;
pub const DEFAULT_FAMILY_DIM: usize = 24;
pub const DEFAULT_FAMILY_MEMBERS: usize = 3;
pub const FAMILY_STRENGTH: f64 = 0.5;

/// Output text plus what goes into the manifest.
#[derive(Debug, Clone, PartialEq)]
pub struct Outcome {
    pub text: String,
    pub exit: i32,
    pub grid: Option<String>,
    pub fd_step: Option<f64>,
    pub tol: Option<f64>,
}

fn used(o: &Opts, allowed: &[&str]) -> CliResult<()> {
    let given = [
        ("spec", !o.spec.is_empty()),
        ("grid", o.grid.is_some()),
        ("tol", o.tol.is_some()),
        ("fd-step", o.fd_step.is_some()),
        ("seed", o.seed.is_some()),
        ("lambda1", o.lambda1.is_some()),
        ("lambda2", o.lambda2.is_some()),
        ("kmax", o.kmax.is_some()),
        ("levels", o.levels.is_some()),
        ("dim", o.dim.is_some()),
        ("boundary", o.boundary.is_some()),
        ("members", o.members.is_some()),
    ];
    match given.iter().find(|(name, on)| *on && !allowed.contains(name)) {
        Some((name, _)) => Err(CliError::field(*name, format!("--{name} is not used by this command"))),
        None => Ok(()),
    }
}

fn tolerance(o: &Opts, default: f64) -> CliResult<f64> {
    let tol = o.tol.unwrap_or(default);
    if !(tol > 0.0 && tol < 1.0) {
        return Err(CliError::field("tol", format!("tolerance must lie in (0, 1), got {tol}")));
    }
    Ok(tol)
}

fn specs(o: &Opts, count: usize) -> CliResult<Vec<LoadedSpec>> {
    if o.spec.len() != count {
        return Err(CliError::field(
            "spec",
            format!("expected {count} --spec argument(s), got {}", o.spec.len()),
        ));
    }
    o.spec.iter().map(|p| load_spec(p)).collect()
}

fn grid(o: &Opts) -> CliResult<(DiskGrid, String)> {
    let text = o.grid.clone().unwrap_or_else(|| DEFAULT_GRID.to_string());
    Ok((parse_grid(&text, o.fd_step)?, text))
}

fn grid_outcome(text: String, grid: &DiskGrid, grid_text: String) -> Outcome {
    Outcome {
        text,
        exit: EXIT_OK,
        grid: Some(grid_text),
        fd_step: Some(grid.fd_step()),
        tol: None,
    }
}

fn cjson(z: Complex64) -> Value {
    json!([z.re, z.im])
}

fn level_curvatures(flag: &dyn BlockFlag, grid: &DiskGrid) -> CliResult<Vec<cdlab_core::geometry::CurvatureField>> {
    (0..flag.n())
        .map(|j| Ok(curvature_scalar(&flag.diag_section(j, grid.reach())?, grid)?))
        .collect()
}

/// Column-major little-endian `(re, im)` bytes of the dense matrix.
fn matrix_digest(m: &DMatrix<Complex64>) -> String {
    let mut bytes = Vec::with_capacity(m.len() * 16);
    for z in m.iter() {
        bytes.extend_from_slice(&z.re.to_le_bytes());
        bytes.extend_from_slice(&z.im.to_le_bytes());
    }
    sha256_hex(&bytes)
}

pub fn build(o: &Opts) -> CliResult<Outcome> {
    used(o, &["spec"])?;
    let spec = specs(o, 1)?.remove(0);
    let built = spec.build()?;
    let dense = built.dense();
    let flag = built.as_block_flag();
    let report = json!({
        "spec": spec.canonical(),
        "n": flag.n(),
        "block_dim": flag.block_dim(),
        "dim": dense.nrows(),
        "frobenius_norm": dense.norm(),
        "operator_sha256": matrix_digest(&dense),
    });
    Ok(Outcome::ok(json_text(&report)))
}

pub fn curvature(o: &Opts) -> CliResult<Outcome> {
    used(o, &["spec", "grid", "fd-step"])?;
    let spec = specs(o, 1)?.remove(0);
    let (grid, gtext) = grid(o)?;
    let built = spec.build()?;
    let fields = level_curvatures(built.as_block_flag(), &grid)?;
    let n = fields.len();
    let columns: Vec<String> = if n == 1 {
        vec!["k".into()]
    } else {
        (1..=n).map(|j| format!("k{j}")).collect()
    };
    let scalars: Vec<Vec<f64>> = fields.iter().map(|f| f.scalar_values().expect("scalar field")).collect();
    let rows: Vec<Vec<f64>> = (0..grid.len()).map(|p| scalars.iter().map(|k| k[p]).collect()).collect();
    Ok(grid_outcome(grid_csv(&grid, &columns, &rows)?, &grid, gtext))
}

pub fn chern(o: &Opts) -> CliResult<Outcome> {
    used(o, &["spec", "grid", "fd-step"])?;
    let spec = specs(o, 1)?.remove(0);
    let (grid, gtext) = grid(o)?;
    let built = spec.build()?;
    let fields = level_curvatures(built.as_block_flag(), &grid)?;
    let chern = chern_polynomial(&fields)?;
    let n = fields.len();
    let columns: Vec<String> = (1..=n).flat_map(|m| [format!("re_c{m}"), format!("im_c{m}")]).collect();
    let rows: Vec<Vec<f64>> = chern
        .coefficients
        .iter()
        .map(|c| c[1..].iter().flat_map(|z| [z.re, z.im]).collect())
        .collect();
    Ok(grid_outcome(grid_csv(&grid, &columns, &rows)?, &grid, gtext))
}

fn parse_levels(text: Option<&str>, n: usize) -> CliResult<(usize, usize)> {
    let text = text.unwrap_or("1,2");
    let bad = || CliError::field("levels", format!("expected l,j with 1 <= l < j <= {n}, got `{text}`"));
    let (l, j) = text.split_once(',').ok_or_else(bad)?;
    let l: usize = l.trim().parse().map_err(|_| bad())?;
    let j: usize = j.trim().parse().map_err(|_| bad())?;
    if !(1 <= l && l < j && j <= n) {
        return Err(bad());
    }
    Ok((l - 1, j - 1))
}

pub fn theta(o: &Opts) -> CliResult<Outcome> {
    used(o, &["spec", "grid", "fd-step", "levels"])?;
    let spec = specs(o, 1)?.remove(0);
    let levels = parse_levels(o.levels.as_deref(), spec.n())?;
    let (grid, gtext) = grid(o)?;
    let built = spec.build()?;
    let field = theta_field(built.as_block_flag(), levels, &grid)?;
    let rows: Vec<Vec<f64>> = (0..grid.len())
        .map(|p| {
            let form = field
                .form_values
                .as_ref()
                .and_then(|f| f[p])
                .unwrap_or(Complex64::new(f64::NAN, f64::NAN));
            vec![field.ratio_values[p], form.re, form.im]
        })
        .collect();
    let columns = ["ratio".to_string(), "re_form".into(), "im_form".into()];
    Ok(grid_outcome(grid_csv(&grid, &columns, &rows)?, &grid, gtext))
}

/// Sup distance between the diagonal of the best kept element (scaled so its
/// first entry is 1) and the telescoped weights `d_n`.
fn diagonal_match(basis: &KernelBasis, l1: f64, l2: f64, dim: usize) -> Option<f64> {
    let d = adjacent_diagonal(l1, l2, dim);
    basis
        .filtered()
        .filter_map(|e| {
            let s = e[(0, 0)];
            (s.norm() > 0.0).then(|| (0..dim).map(|i| (e[(i, i)] / s - d[i]).norm()).fold(0.0, f64::max))
        })
        .reduce(f64::min)
}

fn kernel_json(basis: &KernelBasis, diag: Option<f64>) -> Value {
    json!({
        "raw_count": basis.raw_count(),
        "filtered_count": basis.filtered_count,
        "stability": basis.stability,
        "diagonal_match": diag,
    })
}

pub fn intertwine(o: &Opts) -> CliResult<Outcome> {
    used(o, &["spec", "lambda1", "lambda2", "dim", "tol"])?;
    let tol = tolerance(o, DEFAULT_KERNEL_TOL)?;
    let report = match (o.lambda1, o.lambda2, o.spec.len()) {
        (Some(l1), Some(l2), 0) => {
            let dim = o.dim.unwrap_or(DEFAULT_KERNEL_DIM);
            let forward = kernel_basis(&SylvesterMap::bergman_pair(l1, l2, dim)?, dim, tol)?;
            let reverse = kernel_basis(&SylvesterMap::bergman_pair(l2, l1, dim)?, dim, tol)?;
            json!({
                "lambda1": l1,
                "lambda2": l2,
                "base_dim": dim,
                "tol": tol,
                "forward": kernel_json(&forward, diagonal_match(&forward, l1, l2, dim)),
                "reverse": kernel_json(&reverse, None),
            })
        }
        (None, None, 2) => {
            let mut s = specs(o, 2)?;
            let b = s.pop().unwrap().build()?;
            let a = s.pop().unwrap().build()?;
            let dim = o.dim.unwrap_or(DEFAULT_TRIANGULARITY_DIM);
            let r = intertwiner_triangularity(shared(a), shared(b), dim, tol)?;
            let counts: Vec<Value> = r
                .lower_counts
                .iter()
                .map(|((i, j), (raw, kept))| json!({"block": [i + 1, j + 1], "raw": raw, "filtered": kept}))
                .collect();
            json!({
                "block_dim": dim,
                "tol": tol,
                "lower_mass_ratio": r.lower_mass_ratio,
                "lower_counts": counts,
                "diagonal_stability": r.diagonal_stability,
                "solution_norm": r.solution.entries().norm(),
            })
        }
        _ => {
            return Err(CliError::field(
                "spec",
                "give either --lambda1 and --lambda2, or two --spec files",
            ))
        }
    };
    Ok(Outcome {
        tol: Some(tol),
        ..Outcome::ok(json_text(&report))
    })
}

fn shared(b: BuiltFlag) -> Arc<dyn BlockFlag> {
    match b {
        BuiltFlag::Plain(f) => Arc::new(f),
        BuiltFlag::Conjugated(f) => Arc::new(f),
    }
}

pub fn property_h(o: &Opts) -> CliResult<Outcome> {
    used(o, &["lambda1", "lambda2", "kmax"])?;
    let (Some(l1), Some(l2)) = (o.lambda1, o.lambda2) else {
        return Err(CliError::field("lambda1", "--lambda1 and --lambda2 are required"));
    };
    let kmax = o.kmax.unwrap_or(DEFAULT_KMAX);
    let r = property_h_slope(l1, l2, kmax)?;
    let last = r.samples.last().map(|s| s.1);
    let report = json!({
        "lambda1": l1,
        "lambda2": l2,
        "kmax": kmax,
        "slope": r.fitted_slope,
        "verdict": r.verdict.as_str(),
        "last_log_value": last,
    });
    Ok(Outcome::ok(json_text(&report)))
}

pub fn correct(o: &Opts) -> CliResult<Outcome> {
    used(o, &["spec", "boundary"])?;
    let seed = match o.boundary.as_deref() {
        None | Some("paper") => BoundarySeed::Paper,
        Some("zero") => BoundarySeed::Zero,
        Some(other) => return Err(CliError::field("boundary", format!("expected paper or zero, got `{other}`"))),
    };
    let mut s = specs(o, 2)?;
    let bt = s.pop().unwrap().build()?;
    let at = s.pop().unwrap().build()?;
    let c = compact_correction(at.plain()?, bt.plain()?, seed)?;
    let series: Vec<Value> = c
        .series
        .iter()
        .map(|((k, j), s)| {
            json!({"from": k + 1, "to": j + 1, "series": s.coeffs().iter().map(|z| cjson(*z)).collect::<Vec<_>>()})
        })
        .collect();
    let k = c.to_operator();
    let report = json!({
        "boundary": if seed == BoundarySeed::Paper { "paper" } else { "zero" },
        "n": c.n,
        "block_dim": c.block_dim,
        "relative_residual": c.relative_residual,
        "tail_norm": c.tail_norm,
        "k_norm": k.entries().norm(),
        "k_is_zero": c.is_zero(),
        "series": series,
        "k_sha256": matrix_digest(k.entries()),
    });
    Ok(Outcome::ok(json_text(&report)))
}

pub fn orthogonalize(o: &Opts) -> CliResult<Outcome> {
    used(o, &["seed", "dim", "members"])?;
    let seed = o
        .seed
        .ok_or_else(|| CliError::field("seed", "orthogonalize draws a random family; --seed is required"))?;
    let dim = o.dim.unwrap_or(DEFAULT_FAMILY_DIM);
    let members = o.members.unwrap_or(DEFAULT_FAMILY_MEMBERS);
    if members < 2 || members > dim {
        return Err(CliError::field("members", format!("need 2 <= members <= dim = {dim}")));
    }
    let ranks: Vec<usize> = (0..members).map(|i| dim / members + usize::from(i < dim % members)).collect();
    let family = IdempotentFamily::random_similar(&ranks, FAMILY_STRENGTH, seed)?;
    let out = orthogonalize_idempotents(&family)?;
    let again = orthogonalize_idempotents(&IdempotentFamily::new(out.projections.clone())?)?;
    let eye = DMatrix::<Complex64>::identity(dim, dim);
    let report = json!({
        "seed": seed,
        "dim": dim,
        "ranks": ranks,
        "input_compact_gauge": family.compact_gauge(),
        "idempotency_residual": out.idempotency_residual,
        "selfadjoint_residual": out.selfadjoint_residual,
        "sum_residual": out.sum_residual,
        "product_residual": out.product_residual,
        "compactness_witness": out.compactness_witness,
        "conjugator_sha256": matrix_digest(out.conjugator.entries()),
        "rerun_conjugator_deviation": (again.conjugator.entries() - eye).norm(),
    });
    Ok(Outcome::ok(json_text(&report)))
}

fn verdict_exit(v: Verdict) -> i32 {
    match v {
        Verdict::Equivalent => EXIT_OK,
        Verdict::NotEquivalent => EXIT_NOT_EQUIVALENT,
        Verdict::Undecided => EXIT_UNDECIDED,
    }
}

fn verdict_json(v: &EquivalenceVerdict) -> Value {
    let residuals: Vec<Value> = v.residuals.iter().map(|(k, r)| json!({"name": k, "value": r})).collect();
    let mut out = json!({
        "kind": match v.kind {
            cdlab_core::comparator::EquivalenceKind::Unitary => "unitary",
            cdlab_core::comparator::EquivalenceKind::Uk => "uk",
        },
        "verdict": v.verdict.as_str(),
        "tolerance": v.tolerance,
        "matching": v.matching.iter().map(|j| j + 1).collect::<Vec<_>>(),
        "residuals": residuals,
        "diagnostics": v.diagnostics,
    });
    if let Some(w) = &v.witness {
        let phi_range: Vec<Value> = w
            .phi_fields
            .iter()
            .map(|f| {
                let lo = f.iter().cloned().fold(f64::INFINITY, f64::min);
                let hi = f.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                json!([lo, hi])
            })
            .collect();
        out["witness"] = json!({"alphas": w.alphas, "phi_range": phi_range});
    }
    if let Some(c) = &v.correction_fields {
        let sup: Vec<f64> = c.iter().map(|f| f.iter().map(|z| z.norm()).fold(0.0, f64::max)).collect();
        out["correction_sup"] = json!(sup);
    }
    out
}

fn verdict_outcome(v: &EquivalenceVerdict, grid: &DiskGrid, gtext: String) -> Outcome {
    Outcome {
        text: json_text(&verdict_json(v)),
        exit: verdict_exit(v.verdict),
        grid: Some(gtext),
        fd_step: Some(grid.fd_step()),
        tol: Some(v.tolerance),
    }
}

pub fn compare_unitary(o: &Opts) -> CliResult<Outcome> {
    used(o, &["spec", "grid", "fd-step", "tol"])?;
    let tol = tolerance(o, DEFAULT_UNITARY_TOL)?;
    let mut s = specs(o, 2)?;
    let (grid, gtext) = grid(o)?;
    let b = s.pop().unwrap().build()?;
    let a = s.pop().unwrap().build()?;
    let v = decide_unitary(a.as_block_flag(), b.as_block_flag(), &grid, tol)?;
    Ok(verdict_outcome(&v, &grid, gtext))
}

/// `Y` with `B = Y A Y^{-1}` read off the specs' own conjugations, when
/// that is possible.
fn spec_witness(a: &BuiltFlag, b: &BuiltFlag, n: usize) -> CliResult<Option<WindowConjugation>> {
    Ok(match (a.conjugation(), b.conjugation()) {
        (None, None) => Some(WindowConjugation::identity(n)),
        (None, Some(sb)) => Some(sb.clone()),
        (Some(sa), None) => Some(sa.inverse()),
        (Some(sa), Some(sb)) => {
            let sizes_match = (0..n).all(|j| sa.window_size(j) == sb.window_size(j) && sa.window_size(j) > 1);
            if !sizes_match {
                return Ok(None);
            }
            let windows = (0..n)
                .map(|j| sb.window(j) * sa.inverse().window(j))
                .collect();
            Some(WindowConjugation::new(windows)?)
        }
    })
}

pub fn compare_uk(o: &Opts) -> CliResult<Outcome> {
    used(o, &["spec", "grid", "fd-step", "tol"])?;
    let tol = tolerance(o, DEFAULT_UK_TOL)?;
    let mut s = specs(o, 2)?;
    let (grid, gtext) = grid(o)?;
    let b = s.pop().unwrap().build()?;
    let a = s.pop().unwrap().build()?;
    let (fa, fb) = (a.as_block_flag(), b.as_block_flag());
    let witness = if fa.n() == fb.n() {
        match spec_witness(&a, &b, fa.n())? {
            Some(y) => Some(UKWitness::new(y, fa, &grid)?),
            None => None,
        }
    } else {
        None
    };
    let v = decide_uk(fa, fb, witness.as_ref(), &grid, tol)?;
    Ok(verdict_outcome(&v, &grid, gtext))
}

pub fn verify_structure(o: &Opts) -> CliResult<Outcome> {
    used(o, &["spec"])?;
    let spec = specs(o, 1)?.remove(0);
    let built = spec.build()?;
    let r = verify_flag_structure(built.plain()?);
    let profiles: Vec<Value> = r
        .commutator_profiles
        .iter()
        .map(|p| json!({"tail_sup": p.tail_sup, "decay_exponent": p.decay_exponent}))
        .collect();
    let report = json!({
        "intertwining_residuals": r.intertwining_residuals,
        "decay_exponents": r.decay_exponents,
        "expected_exponents": r.expected_exponents,
        "commutator_profiles": profiles,
        "essential_normality_gauge": r.essential_normality_gauge,
        "strongly_irreducible": r.strongly_irreducible,
        "passes": r.passes(0.05),
    });
    Ok(Outcome::ok(json_text(&report)))
}
