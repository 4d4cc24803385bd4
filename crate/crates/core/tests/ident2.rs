use misclass_core::dgp::{fixtures, oracle_moments, DgpSpec2};
use misclass_core::ident2::{build_q, eig2x2, identify_prop1, identify_prop2, label_columns, EigenPair};
use misclass_core::moments::CellIndex;
use misclass_core::{Error, Tolerances};
use nalgebra::Matrix2;
use proptest::prelude::*;

const TOL: Tolerances = Tolerances::identification();

fn max_dev(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn truth(spec: &DgpSpec2) -> [f64; 12] {
    misclass_core::dgp::oracle_theta(spec, None)
}

#[test]
fn q00_of_dgp_a() {
    let q = build_q(&oracle_moments(&fixtures::dgp_a(), None));
    let q00 = q.q[0];
    assert_eq!(q00[0][0], 1.0);
    assert!((q00[0][1] - 1.4).abs() < 1e-15);
    assert!((q00[1][0] - 0.24).abs() < 1e-15);
    assert!((q00[1][1] - 0.56).abs() < 1e-15);
    let q11 = q.q[3];
    assert!((q11[1][0] - 0.83).abs() < 1e-15);
    assert!((q11[1][1] - 2.055).abs() < 1e-14);
}

#[test]
fn zero_treatment_moments_are_singular() {
    let mut m = oracle_moments(&fixtures::dgp_a(), None);
    for c in CellIndex::ALL {
        m.values_mut()[3 * c.position() + 1] = 0.0;
        m.values_mut()[3 * c.position() + 2] = 0.0;
    }
    assert!(matches!(identify_prop1(&build_q(&m), &TOL), Err(Error::SingularQ { .. })));
}

#[test]
fn prop1_recovers_dgp_a() {
    let spec = fixtures::dgp_a();
    let (set, diag) = identify_prop1(&build_q(&oracle_moments(&spec, None)), &TOL).unwrap();
    assert!((diag.eigenvalues[0] - 1.0 / 3.0).abs() < 1e-12);
    assert!((diag.eigenvalues[1] - 0.75).abs() < 1e-12);
    assert!(max_dev(&set.theta(), &truth(&spec)) < 1e-10);
    assert!((set.lambda[0][0] - 0.8).abs() < 1e-10);
    assert!((set.misclassification(0)[0] - 0.1).abs() < 1e-10);
    assert!(diag.reconstruction_error < 1e-12);
}

#[test]
fn z_constant_mixing_has_repeated_eigenvalues() {
    let spec = fixtures::binary("dgp-a-zirrelevant");
    let r = identify_prop1(&build_q(&oracle_moments(&spec, None)), &TOL);
    assert!(matches!(r, Err(Error::EigenvaluesNotDistinct { .. })), "{r:?}");
}

#[test]
fn affine_outcome_transform() {
    let spec = fixtures::dgp_a();
    let m = oracle_moments(&spec, None);
    let (base, _) = identify_prop1(&build_q(&m), &TOL).unwrap();
    let (moved, _) = identify_prop1(&build_q(&m.affine_outcome(2.0, 3.0)), &TOL).unwrap();
    assert!(max_dev(&moved.alpha, &[5.0, 6.0]) < 1e-9);
    assert!(max_dev(&moved.beta, &[4.0, 2.0]) < 1e-9);
    assert!(max_dev(base.l_t.as_flattened().as_flattened(), moved.l_t.as_flattened().as_flattened()) < 1e-9);
    assert!(max_dev(base.lambda.as_flattened(), moved.lambda.as_flattened()) < 1e-9);
}

#[test]
fn prop2_recovers_dgp_b() {
    let spec = fixtures::binary("dgp-b");
    let (set, _) = identify_prop2(&build_q(&oracle_moments(&spec, None)), &TOL).unwrap();
    assert!(max_dev(&set.theta(), &truth(&spec)) < 1e-10);
}

#[test]
fn prop2_with_flat_instrument_fails() {
    let mut spec = fixtures::binary("dgp-b");
    spec.pr_tstar = [0.5; 4];
    let r = identify_prop2(&build_q(&oracle_moments(&spec, None)), &TOL);
    assert!(matches!(r, Err(Error::EigenvaluesNotDistinct { .. })), "{r:?}");
}

#[test]
fn prop2_sign_flip() {
    let spec = fixtures::binary("dgp-b");
    let m = oracle_moments(&spec, None);
    let (base, _) = identify_prop2(&build_q(&m), &TOL).unwrap();
    let (flip, _) = identify_prop2(&build_q(&m.affine_outcome(-1.0, 0.0)), &TOL).unwrap();
    assert!(max_dev(&flip.beta, &[-base.beta[0], -base.beta[1]]) < 1e-10);
    assert_eq!(flip.l_t, base.l_t);
}

#[test]
fn routes_agree_when_both_apply() {
    let spec = fixtures::binary("dgp-c");
    let q = build_q(&oracle_moments(&spec, None));
    let (a, _) = identify_prop1(&q, &TOL).unwrap();
    let (b, _) = identify_prop2(&q, &TOL).unwrap();
    assert!(max_dev(&a.alpha, &b.alpha) < 1e-8);
    assert!(max_dev(&a.beta, &b.beta) < 1e-8);
}

#[test]
fn violating_world_keeps_factors_but_breaks_coefficients() {
    let spec = fixtures::binary("dgp-a-violating");
    let (set, _) = identify_prop1(&build_q(&oracle_moments(&spec, None)), &TOL).unwrap();
    for c in CellIndex::ALL {
        assert!((set.pr_tstar(c) - spec.pr_tstar_at(c)).abs() < 1e-9);
    }
    // E[Y|T*=1,v] picks up the offset
    assert!((set.outcome_means(0)[1] - 3.3).abs() < 1e-9);
    assert!((set.beta[0] - spec.beta[0]).abs() > 0.1);
}

#[test]
fn eig_of_q_tilde() {
    let q = build_q(&oracle_moments(&fixtures::dgp_a(), None));
    let g = |k: usize| Matrix2::new(1.0, q.q[k][0][1], q.q[k][1][0], q.q[k][1][1]);
    let qt = g(0) * g(1).try_inverse().unwrap() * g(3) * g(2).try_inverse().unwrap();
    let p = eig2x2(&qt, 1e-12).unwrap();
    assert!((p[0].value - 1.0 / 3.0).abs() < 1e-12);
    assert!((p[1].value - 0.75).abs() < 1e-12);
}

#[test]
fn labeling_ignores_input_order() {
    let a = EigenPair { value: 0.3, vector: [1.0, 0.8] };
    let b = EigenPair { value: 0.7, vector: [1.0, 0.1] };
    let (x, _) = label_columns([a, b], 0, &TOL).unwrap();
    let (y, _) = label_columns([b, a], 0, &TOL).unwrap();
    assert_eq!(x, y);
    let same = EigenPair { value: 0.7, vector: [1.0, 0.8] };
    assert!(matches!(label_columns([a, same], 1, &TOL), Err(Error::LabelingAmbiguous { z: 1, .. })));
}

fn arb_spec() -> impl Strategy<Value = DgpSpec2> {
    let prob = || 0.05f64..0.95;
    (
        [prob(), prob(), prob(), prob()],
        (0.02f64..0.4, 0.6f64..0.98, 0.02f64..0.4, 0.6f64..0.98),
        [-3.0f64..3.0, -3.0f64..3.0],
        [0.3f64..3.0, -3.0f64..-0.3],
    )
        .prop_map(|(p, (a, b, c, d), alpha, beta)| {
            let mut s = fixtures::dgp_a();
            s.pr_tstar = p;
            s.misclassification = [[a, b], [c, d]];
            s.alpha = alpha;
            s.beta = beta;
            s
        })
        .prop_filter("assumptions with margin", |s| {
            let r = misclass_core::dgp::verify_binary(s);
            r.routes[0].holds
                && r.clause("cross_ratio_distinct").unwrap().margin > 0.05
                && r.clause("instrument_relevance").unwrap().margin > 0.05
                && r.clause("covariate_relevance").unwrap().margin > 0.05
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn oracle_equivalence(spec in arb_spec()) {
        let q = build_q(&oracle_moments(&spec, None));
        let (set, diag) = identify_prop1(&q, &TOL).unwrap();
        prop_assert!(max_dev(&set.theta(), &truth(&spec)) < 1e-9);
        prop_assert!(diag.reconstruction_error < 1e-8);
    }

    #[test]
    fn affine_equivariance(spec in arb_spec(), a in prop_oneof![-4.0f64..-0.25, 0.25f64..4.0], b in -5.0f64..5.0) {
        let m = oracle_moments(&spec, None);
        let (base, _) = identify_prop1(&build_q(&m), &TOL).unwrap();
        let (moved, _) = identify_prop1(&build_q(&m.affine_outcome(a, b)), &TOL).unwrap();
        for v in 0..2 {
            prop_assert!((moved.alpha[v] - (a * base.alpha[v] + b)).abs() < 1e-9);
            prop_assert!((moved.beta[v] - a * base.beta[v]).abs() < 1e-9);
        }
        prop_assert!(max_dev(base.lambda.as_flattened(), moved.lambda.as_flattened()) < 1e-9);
    }
}
