use cdlab_core::flag::*;
use cdlab_core::series::CouplingSeries;
use nalgebra::DMatrix;
use num_complex::Complex64;
use proptest::prelude::*;
use statrs::function::gamma::ln_gamma;

const ONE: Complex64 = Complex64::new(1.0, 0.0);

/// `d_n = sqrt(Gamma(n + l1) Gamma(l2) / (Gamma(l1) Gamma(n + l2)))`.
fn telescoped(l1: f64, l2: f64, n: usize) -> f64 {
    let n = n as f64;
    (0.5 * (ln_gamma(n + l1) + ln_gamma(l2) - ln_gamma(l1) - ln_gamma(n + l2))).exp()
}

#[test]
fn adjacent_diagonal_matches_gamma_ratio() {
    for &(l1, l2) in &[(2.0, 3.0), (0.7, 2.1), (3.5, 4.0)] {
        let d = adjacent_diagonal(l1, l2, 600);
        for (n, x) in d.iter().enumerate() {
            assert!((x / telescoped(l1, l2, n) - 1.0).abs() < 1e-11, "({l1},{l2}) n {n}");
        }
    }
    // d_n^2 = 2 / (n + 2) for (2, 3)
    let d = adjacent_diagonal(2.0, 3.0, 50);
    assert!(d.iter().enumerate().all(|(n, x)| (x * x - 2.0 / (n as f64 + 2.0)).abs() < 1e-14));
}

#[test]
fn structure_at_4000() {
    // gaps 0.5, 0.9, 1.5
    let flag = build_ncfb(&FlagSpec::new(vec![1.0, 1.5, 2.4, 3.9], 4000).unwrap()).unwrap();
    let r = verify_flag_structure(&flag);
    for (k, (f, e)) in r.decay_exponents.iter().zip(&r.expected_exponents).enumerate() {
        let f = f.expect("fit");
        assert!((f - e).abs() < 0.05, "pair {k}: {f} vs {e}");
    }
    assert!(r.intertwining_residuals.iter().all(|x| *x <= 1e-12));
    assert!(r.strongly_irreducible);
    for p in &r.commutator_profiles {
        assert!(p.decay_exponent.expect("fit") < 0.0);
    }
    assert!(r.passes(0.05));
}

#[test]
fn two_level_decay() {
    let flag = build_ncfb(&FlagSpec::new(vec![2.0, 3.0], 4000).unwrap()).unwrap();
    let e = verify_flag_structure(&flag).decay_exponents[0].unwrap();
    assert!((e + 0.5).abs() < 0.05);
}

#[test]
fn single_level_passes() {
    let flag = build_ncfb(&FlagSpec::new(vec![2.0], 64).unwrap()).unwrap();
    let r = verify_flag_structure(&flag);
    assert!(r.decay_exponents.is_empty() && r.intertwining_residuals.is_empty());
    assert!(r.passes(0.05));
}

#[test]
fn boundary_gap_rejected() {
    let e = FlagSpec::new(vec![2.0, 4.0], 16).unwrap_err();
    assert!(e.to_string().contains("(0, 2)"));
    assert!(FlagSpec::new(vec![2.0, 2.0], 16).is_err());
}

#[test]
fn non_adjacent_block_from_series() {
    let spec = FlagSpec::new(vec![2.0, 2.9, 3.7], 40)
        .unwrap()
        .with_coupling(0, 2, CouplingSeries::from_real(&[0.0, 1.0]).unwrap())
        .unwrap();
    let flag = build_ncfb(&spec).unwrap();
    let op = flag.to_operator();
    let want = op.block(0, 0) * op.block(0, 1) * op.block(1, 2);
    assert!((op.block(0, 2) - &want).norm() < 1e-14 * want.norm());
}

#[test]
fn one_step_orthogonalization_by_hand() {
    let dim = 8;
    let mut p1 = DMatrix::<Complex64>::zeros(dim, dim);
    for i in 0..4 {
        p1[(i, i)] = ONE;
    }
    p1[(1, 6)] = Complex64::new(0.3, 0.0);
    let p2 = DMatrix::<Complex64>::identity(dim, dim) - &p1;
    let out = orthogonalize_idempotents(&IdempotentFamily::new(vec![p1.clone(), p2]).unwrap()).unwrap();
    let mut e1 = DMatrix::<Complex64>::zeros(dim, dim);
    for i in 0..4 {
        e1[(i, i)] = ONE;
    }
    assert!((&out.projections[0] - &e1).norm() < 1e-15);
    // the accumulated conjugator maps P_1 onto the coordinate projection
    let x = out.conjugator.entries();
    let (xinv, _) = cdlab_core::linalg::inverse_checked(x).unwrap();
    assert!((x * &p1 * xinv - &e1).norm() < 1e-14);
    assert!(out.idempotency_residual < 1e-15 && out.selfadjoint_residual < 1e-15);
    assert!(out.sum_residual < 1e-15 && out.product_residual < 1e-15);
}

#[test]
fn twenty_five_seeded_families() {
    for seed in 0..25 {
        let family = IdempotentFamily::random_similar(&[8, 8, 8], 0.5, seed).unwrap();
        let out = orthogonalize_idempotents(&family).unwrap();
        for r in [out.idempotency_residual, out.selfadjoint_residual, out.sum_residual, out.product_residual] {
            assert!(r <= 1e-10, "seed {seed}: {r:e}");
        }
        let again = orthogonalize_idempotents(&IdempotentFamily::new(out.projections.clone()).unwrap()).unwrap();
        let eye = DMatrix::<Complex64>::identity(24, 24);
        assert!((again.conjugator.entries() - eye).norm() <= 1e-10, "seed {seed}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn blocks_intertwine(
        l1 in 0.2f64..4.0,
        g1 in 0.05f64..1.95,
        g2 in 0.05f64..1.95,
        c in proptest::collection::vec(-1.0f64..1.0, 1..4),
    ) {
        let spec = FlagSpec::new(vec![l1, l1 + g1, l1 + g1 + g2], 64)
            .unwrap()
            .with_coupling(0, 1, CouplingSeries::from_real(&c).unwrap())
            .unwrap();
        let flag = build_ncfb(&spec).unwrap();
        let r = verify_flag_structure(&flag);
        prop_assert!(r.intertwining_residuals.iter().all(|x| *x <= 1e-12));
    }

    #[test]
    fn window_conjugation_is_invertible(seed in 0u64..1000, window in 2usize..8, norm in 0.0f64..0.9) {
        let c = WindowConjugation::random_rank_one(2, window, norm, seed).unwrap();
        let v = nalgebra::DVector::from_fn(16, |i, _| Complex64::new(i as f64, 1.0));
        let back = c.apply_inverse(1, &c.apply(1, &v));
        prop_assert!((back - &v).norm() < 1e-12 * v.norm());
    }
}
