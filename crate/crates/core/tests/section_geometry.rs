use std::f64::consts::PI;

use cdlab_core::flag::{build_ncfb, FlagSpec};
use cdlab_core::geometry::*;
use cdlab_core::series::CouplingSeries;
use cdlab_core::shift::build_bergman_shift;
use nalgebra::DVector;
use num_complex::Complex64;
use proptest::prelude::*;
use statrs::function::gamma::ln_gamma;

const I: Complex64 = Complex64::new(0.0, 1.0);

/// `sum_n Gamma(n + lambda) / (n! Gamma(lambda)) r^{2n}`, summed in log space.
fn binomial_norm(lambda: f64, r: f64) -> f64 {
    let mut sum = 0.0;
    for n in 0..20000 {
        let nf = n as f64;
        let ln_term = ln_gamma(nf + lambda) - ln_gamma(nf + 1.0) - ln_gamma(lambda) + 2.0 * nf * r.ln();
        let term = ln_term.exp();
        sum += term;
        if n > 50 && term < 1e-18 * sum {
            break;
        }
    }
    sum
}

#[test]
fn unweighted_section_at_half() {
    let s = eigen_section(&build_bergman_shift(1.0, 512).unwrap()).unwrap();
    let c = s.coeffs(Complex64::new(0.5, 0.0));
    for k in 0..5 {
        assert!((c[k].re - 0.5f64.powi(k as i32)).abs() < 1e-15);
    }
    assert!((s.norm_sqr(Complex64::new(0.5, 0.0)) - 4.0 / 3.0).abs() < 1e-13);
    let c0 = s.coeffs(Complex64::new(0.0, 0.0));
    assert_eq!(c0[0], Complex64::new(1.0, 0.0));
    assert!(c0.iter().skip(1).all(|z| *z == Complex64::new(0.0, 0.0)));
}

#[test]
fn lambda_two_norm_against_gamma_series() {
    let s = eigen_section(&build_bergman_shift(2.0, 512).unwrap()).unwrap();
    let got = s.norm_sqr(Complex64::new(0.6, 0.0));
    assert!((got / binomial_norm(2.0, 0.6) - 1.0).abs() < 1e-12);
    assert!((got - 1.0 / 0.4096).abs() < 1e-10);
}

#[test]
fn curvature_closed_form_on_polar_grid() {
    let grid = DiskGrid::polar(0.8, 9, 12).unwrap();
    for &lambda in &[1.0, 2.0, 3.5] {
        let s = eigen_section(&build_bergman_shift(lambda, 512).unwrap()).unwrap();
        let fd = curvature_scalar(&s, &grid).unwrap().scalar_values().unwrap();
        let exact = CurvatureField::bergman_closed_form(lambda, &grid).scalar_values().unwrap();
        for (a, b) in fd.iter().zip(&exact) {
            assert!((a / b - 1.0).abs() < 1e-5, "lambda {lambda}: {a} vs {b}");
        }
    }
}

#[test]
fn curvature_point_values() {
    let s1 = eigen_section(&build_bergman_shift(1.0, 512).unwrap()).unwrap();
    let k0 = curvature_scalar(&s1, &DiskGrid::single(Complex64::new(0.0, 0.0)).unwrap()).unwrap();
    assert!((k0.scalar_values().unwrap()[0] + 1.0).abs() < 1e-5);
    let s2 = eigen_section(&build_bergman_shift(2.0, 512).unwrap()).unwrap();
    let k = curvature_scalar(&s2, &DiskGrid::single(Complex64::new(0.5, 0.0)).unwrap()).unwrap();
    assert!((k.scalar_values().unwrap()[0] / (-32.0 / 9.0) - 1.0).abs() < 1e-4);
}

#[test]
fn constant_section_is_flat() {
    let s = Section::from_fn(1, 0.9, 0.0, |_| DVector::from_element(1, Complex64::new(1.0, 0.0)));
    let grid = DiskGrid::polar(0.8, 3, 4).unwrap();
    assert!(curvature_scalar(&s, &grid).unwrap().scalar_values().unwrap().iter().all(|k| *k == 0.0));
}

#[test]
fn rank_one_matrix_curvature_matches_scalar() {
    let s = eigen_section(&build_bergman_shift(2.0, 512).unwrap()).unwrap();
    let grid = DiskGrid::polar(0.6, 3, 5).unwrap();
    let scalar = curvature_scalar(&s, &grid).unwrap().scalar_values().unwrap();
    let (_, m) = metric_and_curvature_matrix(&[s], &grid).unwrap();
    for (a, b) in m.values.iter().zip(&scalar) {
        assert!((a[(0, 0)].re - b).abs() < 1e-8 * b.abs() && a[(0, 0)].im.abs() < 1e-8);
    }
}

#[test]
fn decoupled_frame_is_block_diagonal() {
    let spec = FlagSpec::new(vec![2.0, 3.0], 256)
        .unwrap()
        .with_coupling(0, 1, CouplingSeries::zero())
        .unwrap();
    let flag = build_ncfb(&spec).unwrap();
    let grid = DiskGrid::polar(0.5, 3, 4).unwrap();
    let frame = solve_frame(&flag, &grid.points()).unwrap();
    for w in grid.points() {
        let g1 = frame[1].coeffs(w);
        assert!(g1.rows(0, 256).norm() == 0.0);
    }
    let (_, m) = metric_and_curvature_matrix(&frame, &grid).unwrap();
    for (p, w) in grid.points().into_iter().enumerate() {
        let k = &m.values[p];
        assert!(k[(0, 1)].norm() < 1e-8 && k[(1, 0)].norm() < 1e-8);
        for (j, lambda) in [2.0f64, 3.0].iter().enumerate() {
            let exact = -lambda / (1.0 - w.norm_sqr()).powi(2);
            assert!((k[(j, j)].re / exact - 1.0).abs() < 1e-6);
        }
    }
}

#[test]
fn frame_vectors_are_eigenvectors() {
    let flag = build_ncfb(&FlagSpec::new(vec![2.0, 2.9, 3.7], 256).unwrap()).unwrap();
    let op = flag.to_operator();
    let points: Vec<Complex64> = DiskGrid::polar(0.8, 4, 6).unwrap().points();
    let frame = solve_frame(&flag, &points).unwrap();
    for w in points {
        for g in &frame {
            let v = g.coeffs(w);
            let r = op.entries() * &v - &v * w;
            assert!(r.norm() <= 1e-8 * v.norm(), "w {w}: {}", r.norm() / v.norm());
        }
    }
}

#[test]
fn chern_polynomial_hand_expansion() {
    let grid = DiskGrid::single(Complex64::new(0.0, 0.0)).unwrap();
    let fields: Vec<CurvatureField> = [1.0, 2.0]
        .iter()
        .map(|l| CurvatureField::bergman_closed_form(*l, &grid))
        .collect();
    let c = &chern_polynomial(&fields).unwrap().coefficients[0];
    assert!((c[0] - 1.0).norm() < 1e-15);
    assert!((c[1] + 3.0 * I / (2.0 * PI)).norm() < 1e-15);
    assert!((c[2] + 1.0 / (2.0 * PI * PI)).norm() < 1e-15);
}

#[test]
fn chern_field_factorizes_flag_curvatures() {
    let flag = build_ncfb(&FlagSpec::new(vec![2.0, 2.9, 3.7], 512).unwrap()).unwrap();
    let grid = DiskGrid::polar(0.8, 9, 12).unwrap();
    let fields: Vec<CurvatureField> = (0..3)
        .map(|j| curvature_scalar(&eigen_section(flag.diag_block(j)).unwrap(), &grid).unwrap())
        .collect();
    let chern = chern_polynomial(&fields).unwrap();
    for p in 0..grid.len() {
        let k: Vec<Complex64> = fields.iter().map(|f| f.values[p][(0, 0)]).collect();
        let c = &chern.coefficients[p];
        let e1: Complex64 = k.iter().sum::<Complex64>() * I / (2.0 * PI);
        assert!((c[1] - e1).norm() < 1e-8);
        let back = curvatures_from_chern(c).unwrap();
        assert!(multiset_distance(&back, &k) < 1e-8, "point {p}");
    }
}

#[test]
fn grid_evaluation_is_deterministic() {
    let s = eigen_section(&build_bergman_shift(3.5, 512).unwrap()).unwrap();
    let grid = DiskGrid::polar(0.8, 5, 7).unwrap();
    let a = curvature_scalar(&s, &grid).unwrap().scalar_values().unwrap();
    let b = curvature_scalar(&s, &grid).unwrap().scalar_values().unwrap();
    assert!(a.iter().zip(&b).all(|(x, y)| x.to_bits() == y.to_bits()));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn section_norm_matches_gamma_series(lambda in 0.3f64..6.0, r in 0.0f64..0.8) {
        let s = eigen_section(&build_bergman_shift(lambda, 512).unwrap()).unwrap();
        let got = s.norm_sqr(Complex64::new(r, 0.0));
        prop_assert!((got / binomial_norm(lambda, r) - 1.0).abs() < 1e-11);
    }

    #[test]
    fn roots_recover_curvature_multisets(k in proptest::collection::vec(-40.0f64..-0.5, 1..5)) {
        let x: Vec<Complex64> = k.iter().map(|k| I / (2.0 * PI) * *k).collect();
        let c = elementary_symmetric(&x);
        let back = curvatures_from_chern(&c).unwrap();
        let want: Vec<Complex64> = k.iter().map(|k| Complex64::new(*k, 0.0)).collect();
        let scale = k.iter().fold(1.0f64, |m, v| m.max(v.abs()));
        prop_assert!(multiset_distance(&back, &want) < 1e-8 * scale);
    }
}
