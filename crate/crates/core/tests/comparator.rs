use cdlab_core::comparator::*;
use cdlab_core::flag::*;
use cdlab_core::geometry::DiskGrid;
use cdlab_core::intertwine::{compact_correction, BoundarySeed};
use cdlab_core::series::CouplingSeries;
use cdlab_core::shift::{build_bergman_shift, OperatorMatrix};
use nalgebra::DMatrix;
use num_complex::Complex64;
use proptest::prelude::*;

fn flag(lambdas: &[f64], dim: usize) -> FlagOperator {
    build_ncfb(&FlagSpec::new(lambdas.to_vec(), dim).unwrap()).unwrap()
}

#[test]
fn theta_ratio_at_half() {
    let f = flag(&[2.0, 3.0], 512);
    let th = theta_field(&f, (0, 1), &DiskGrid::single(Complex64::new(0.5, 0.0)).unwrap()).unwrap();
    assert!((th.ratio_values[0] - 0.75).abs() < 1e-12);
    assert!(th.form_values.as_ref().unwrap()[0].is_some());
}

#[test]
fn theta_ratio_closed_form_all_pairs() {
    let grid = DiskGrid::polar(0.8, 9, 12).unwrap();
    for lambdas in [vec![2.0, 2.9, 3.7], vec![1.0, 1.5, 2.4, 3.9]] {
        let f = flag(&lambdas, 512);
        for l in 0..lambdas.len() - 1 {
            let th = theta_field(&f, (l, l + 1), &grid).unwrap();
            let gap = lambdas[l + 1] - lambdas[l];
            for (w, r) in grid.points().iter().zip(&th.ratio_values) {
                assert!((r / (1.0 - w.norm_sqr()).powf(gap) - 1.0).abs() < 1e-6);
            }
        }
    }
}

#[test]
fn decoupled_ratio_vanishes() {
    let spec = FlagSpec::new(vec![2.0, 3.0], 256)
        .unwrap()
        .with_coupling(0, 1, CouplingSeries::zero())
        .unwrap();
    let f = build_ncfb(&spec).unwrap();
    let grid = DiskGrid::polar(0.6, 3, 4).unwrap();
    let th = theta_field(&f, (0, 1), &grid).unwrap();
    assert!(th.ratio_values.iter().all(|r| *r == 0.0));
    assert!(th.form_values.unwrap().iter().all(Option::is_none));
    assert!(recover_coupling(&f, (0, 1), &grid).unwrap().iter().all(|c| c.norm() == 0.0));
}

#[test]
fn recovered_couplings() {
    let spec = FlagSpec::new(vec![2.0, 2.9, 3.7], 512)
        .unwrap()
        .with_coupling(0, 2, CouplingSeries::from_real(&[0.0, 1.0]).unwrap())
        .unwrap();
    let f = build_ncfb(&spec).unwrap();
    let grid = DiskGrid::polar(0.8, 5, 8).unwrap();
    for l in 0..2 {
        for c in recover_coupling(&f, (l, l + 1), &grid).unwrap() {
            assert!((c - 1.0).norm() < 1e-8);
        }
    }
    let c13 = recover_coupling(&f, (0, 2), &grid).unwrap();
    for (w, c) in grid.points().iter().zip(&c13) {
        assert!((c - w).norm() < 1e-8, "w {w}: {c}");
    }
}

#[test]
fn psi_trivial_conjugators() {
    let s = build_bergman_shift(2.0, 256).unwrap();
    let grid = DiskGrid::polar(0.6, 4, 6).unwrap();
    let id = psi_laplacian_check(&s, &DMatrix::identity(4, 4), &grid).unwrap();
    assert_eq!(id.residual, 0.0);
    let scalar = DMatrix::<Complex64>::identity(256, 256) * Complex64::new(1.7, -0.4);
    let sc = psi_laplacian_check(&s, &scalar, &grid).unwrap();
    assert!(sc.residual <= 1e-8, "{:e}", sc.residual);
    assert!(sc.eigen_residual <= 1e-12);
}

#[test]
fn psi_identity_for_rank_one_perturbations() {
    let grid = DiskGrid::polar(0.6, 4, 6).unwrap();
    let lambdas = [1.0, 2.0, 3.5];
    for seed in 0..20u64 {
        let lambda = lambdas[seed as usize % 3];
        let s = build_bergman_shift(lambda, 256).unwrap();
        let y = WindowConjugation::random_rank_one(1, 6, 0.2, seed).unwrap();
        let p = psi_laplacian_check(&s, &y.dense(0, 6), &grid).unwrap();
        assert!(p.residual <= 1e-4, "seed {seed}: {:e}", p.residual);
        assert!(p.eigen_residual <= 1e-10);
    }
}

#[test]
fn unitary_self_comparison() {
    let a = flag(&[2.0, 2.9, 3.7], 512);
    let grid = DiskGrid::polar(0.8, 5, 6).unwrap();
    let v = decide_unitary(&a, &a, &grid, 1e-6).unwrap();
    assert_eq!(v.verdict, Verdict::Equivalent);
    assert!(v.residuals.iter().all(|(_, r)| *r == 0.0));
    assert_eq!(v.matching, vec![0, 1, 2]);
}

#[test]
fn lambda_offset_is_seen_at_origin() {
    let a = flag(&[2.0, 3.0], 512);
    let b = flag(&[2.1, 3.0], 512);
    let v = decide_unitary(&a, &b, &DiskGrid::single(Complex64::new(0.0, 0.0)).unwrap(), 1e-6).unwrap();
    assert_eq!(v.verdict, Verdict::NotEquivalent);
    let chern = v.residuals.iter().find(|(k, _)| k == "chern").unwrap().1;
    assert!((chern - 0.1).abs() < 1e-6);
}

#[test]
fn small_perturbations_are_not_equivalent() {
    let grid = DiskGrid::polar(0.8, 5, 6).unwrap();
    let base = [2.0, 2.9, 3.7];
    let a = flag(&base, 512);
    for j in 0..3 {
        let mut l = base;
        l[j] += 0.05;
        let v = decide_unitary(&a, &flag(&l, 512), &grid, 1e-6).unwrap();
        assert_eq!(v.verdict, Verdict::NotEquivalent, "level {j}");
    }
}

#[test]
fn unitary_conjugates_are_equivalent() {
    let a = flag(&[2.0, 2.9, 3.7], 512);
    let grid = DiskGrid::polar(0.8, 5, 6).unwrap();
    for seed in 0..4 {
        let b = ConjugatedFlag::new(a.clone(), WindowConjugation::random_unitary(3, 8, seed).unwrap()).unwrap();
        let v = decide_unitary(&a, &b, &grid, 1e-6).unwrap();
        assert_eq!(v.verdict, Verdict::Equivalent, "seed {seed}: {:?}", v.residuals);
    }
}

#[test]
fn compact_conjugate_with_identity_witness() {
    let dim = 128;
    let mk = |phi: &[f64]| {
        let spec = FlagSpec::new(vec![2.0, 2.9, 3.7], dim)
            .unwrap()
            .with_coupling(0, 2, CouplingSeries::from_real(phi).unwrap())
            .unwrap();
        build_ncfb(&spec).unwrap()
    };
    let t = mk(&[0.0, 1.0]);
    let tt = mk(&[0.0, 2.0]);
    let k = compact_correction(&t, &tt, BoundarySeed::Paper).unwrap().to_operator().into_entries();
    let eye = DMatrix::<Complex64>::identity(3 * dim, 3 * dim);
    // K^3 = 0 for three levels
    let x = &eye + &k;
    let xinv = &eye - &k + &k * &k;
    let b = &x * t.to_operator().entries() * &xinv;
    let b = DenseFlag::new(OperatorMatrix::new(b, Some(vec![dim; 3])).unwrap(), vec![2.0, 2.9, 3.7]).unwrap();
    let grid = DiskGrid::polar(0.6, 4, 6).unwrap();
    let w = UKWitness::new(WindowConjugation::identity(3), &t, &grid).unwrap();
    assert!(w.phi_fields.iter().flatten().all(|p| *p == 1.0));
    let v = decide_uk(&t, &b, Some(&w), &grid, 1e-3).unwrap();
    assert_eq!(v.verdict, Verdict::Equivalent, "{:?}", v.residuals);
}

#[test]
fn rank_one_conjugates_with_witness() {
    let a = flag(&[2.0, 2.9, 3.7], 512);
    let grid = DiskGrid::polar(0.8, 5, 6).unwrap();
    for seed in 0..3 {
        let y = WindowConjugation::random_rank_one(3, 6, 0.2, seed).unwrap();
        let b = ConjugatedFlag::new(a.clone(), y.clone()).unwrap();
        let w = UKWitness::new(y, &a, &grid).unwrap();
        let v = decide_uk(&a, &b, Some(&w), &grid, 1e-3).unwrap();
        assert_eq!(v.verdict, Verdict::Equivalent);
        assert!(w.alphas.iter().all(|a| *a > 0.0 && *a < 1.0));
        // unitary comparison still sees the same curvatures
        let u = decide_unitary(&a, &b, &grid, 1e-6).unwrap();
        assert!(u.residuals[0].1 > 1e-6, "rank-one conjugation moves curvature");
    }
}

#[test]
fn uk_offsets_are_not_equivalent() {
    let a = flag(&[2.0, 2.9, 3.7], 512);
    let b = flag(&[2.1, 3.0, 3.8], 512);
    let grid = DiskGrid::polar(0.8, 5, 6).unwrap();
    let w = UKWitness::new(WindowConjugation::identity(3), &a, &grid).unwrap();
    assert_eq!(decide_uk(&a, &b, Some(&w), &grid, 1e-3).unwrap().verdict, Verdict::NotEquivalent);
    assert_eq!(decide_uk(&a, &b, None, &grid, 1e-3).unwrap().verdict, Verdict::Undecided);
}

fn rank(v: Verdict) -> u8 {
    match v {
        Verdict::Equivalent => 0,
        Verdict::Undecided => 1,
        Verdict::NotEquivalent => 2,
    }
}

proptest! {
    #[test]
    fn shrinking_tol_never_improves_the_verdict(
        r in proptest::collection::vec(0.0f64..1e-2, 1..6),
        t1 in 1e-8f64..1e-2,
        shrink in 1.0f64..1e3,
    ) {
        let res: Vec<(String, f64)> = r.iter().enumerate().map(|(i, x)| (format!("r{i}"), *x)).collect();
        let loose = Verdict::from_residuals(&res, t1);
        let tight = Verdict::from_residuals(&res, t1 / shrink);
        prop_assert!(rank(tight) >= rank(loose));
    }
}
