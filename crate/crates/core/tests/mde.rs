use misclass_core::dgp::{fixtures, oracle_cell_variance, oracle_moments, oracle_phi, oracle_theta, simulate, DgpSpec};
use misclass_core::mde::{
    f_map, fit_minimum_distance, g_map, jacobian_f, jacobian_g, FitOptions, Start, SystemSolution,
};
use misclass_core::moments::{estimate_moments_discrete, CellIndex, MomentCovariance, MomentVector, Rate};
use misclass_core::{Error, Tolerances};
use nalgebra::DMatrix;
use proptest::prelude::*;

const TOL: Tolerances = Tolerances::identification();

fn phi_a() -> SystemSolution {
    SystemSolution(oracle_phi(&fixtures::dgp_a(), None))
}

fn oracle_cov() -> MomentCovariance {
    MomentCovariance { blocks: oracle_cell_variance(&fixtures::dgp_a(), None) }
}

fn fd_f(phi: &SystemSolution, h: f64) -> DMatrix<f64> {
    DMatrix::from_fn(12, 12, |r, c| {
        let (mut up, mut dn) = (phi.clone(), phi.clone());
        up.0[c] += h;
        dn.0[c] -= h;
        (f_map(&up).values()[r] - f_map(&dn).values()[r]) / (2.0 * h)
    })
}

fn fd_g(phi: &SystemSolution, m: &MomentVector, h: f64) -> (DMatrix<f64>, DMatrix<f64>) {
    let g = |p: &SystemSolution, m: &MomentVector| g_map(p, m, &TOL).unwrap().0;
    let d_phi = DMatrix::from_fn(12, 12, |r, c| {
        let (mut up, mut dn) = (phi.clone(), phi.clone());
        up.0[c] += h;
        dn.0[c] -= h;
        (g(&up, m)[r] - g(&dn, m)[r]) / (2.0 * h)
    });
    let d_m = DMatrix::from_fn(12, 12, |r, c| {
        let (mut up, mut dn) = (m.clone(), m.clone());
        up.values_mut()[c] += h;
        dn.values_mut()[c] -= h;
        (g(phi, &up)[r] - g(phi, &dn)[r]) / (2.0 * h)
    });
    (d_phi, d_m)
}

#[test]
fn f_map_reproduces_oracle_moments() {
    let m = f_map(&phi_a());
    let oracle = oracle_moments(&fixtures::dgp_a(), None);
    for (a, b) in m.values().iter().zip(oracle.values()) {
        assert!((a - b).abs() < 1e-14);
    }
}

#[test]
fn f_map_degenerate_mixture() {
    let mut phi = phi_a();
    for j in 4..8 {
        phi.0[j] = 0.0;
    }
    let m = f_map(&phi);
    for c in CellIndex::ALL {
        let mu0 = phi.mu(c.v, 0);
        let tau0 = phi.tau(c.z, 0);
        assert_eq!(m.ey(c), mu0);
        assert_eq!(m.et(c), tau0);
        assert!((m.eyt(c) - mu0 * tau0).abs() < 1e-15);
    }
}

#[test]
fn f_map_constant_outcome() {
    let mut phi = phi_a();
    phi.0[..4].copy_from_slice(&[3.0; 4]);
    let m = f_map(&phi);
    for c in CellIndex::ALL {
        assert!((m.ey(c) - 3.0).abs() < 1e-15);
        assert!((m.eyt(c) - 3.0 * m.et(c)).abs() < 1e-15);
    }
}

#[test]
fn g_map_recovers_dgp_a_coefficients() {
    let phi = phi_a();
    let theta = g_map(&phi, &f_map(&phi), &TOL).unwrap();
    let expect = [1.0, 2.0, 1.5, 1.0];
    for k in 0..4 {
        assert!((theta[k] - expect[k]).abs() < 1e-12);
    }
    assert_eq!(&theta.0[4..], &phi.0[4..]);
    let oracle = oracle_theta(&fixtures::dgp_a(), None);
    assert!(theta.0.iter().zip(oracle).all(|(a, b)| (a - b).abs() < 1e-10));
}

#[test]
fn g_map_flat_reduced_form() {
    let phi = phi_a();
    let mut m = f_map(&phi);
    let ey00 = m.ey(CellIndex::new(0, 0));
    m.values_mut()[3] = ey00;
    let theta = g_map(&phi, &m, &TOL).unwrap();
    assert_eq!(theta[1], 0.0);
}

#[test]
fn g_map_irrelevant_instrument() {
    let mut phi = phi_a();
    phi.0[5] = phi.0[4];
    let r = g_map(&phi, &f_map(&phi), &TOL);
    assert!(matches!(r, Err(Error::SingularIVMatrix { v: 0, .. })));
}

#[test]
fn jacobian_f_matches_finite_differences() {
    let phi = phi_a();
    let diff = (jacobian_f(&phi) - fd_f(&phi, 1e-6)).abs().max();
    assert!(diff < 1e-6, "{diff}");
}

#[test]
fn jacobian_f_at_zero_probabilities() {
    let mut phi = phi_a();
    for j in 4..8 {
        phi.0[j] = 0.0;
    }
    let f = jacobian_f(&phi);
    for c in CellIndex::ALL {
        let row = 3 * c.position() + 1;
        assert_eq!(f[(row, 8 + 2 * c.z as usize)], 1.0);
        assert_eq!(f[(row, 4 + c.position())], phi.tau(c.z, 1) - phi.tau(c.z, 0));
    }
}

#[test]
fn jacobian_f_block_sparsity() {
    let f = jacobian_f(&phi_a());
    for c in CellIndex::ALL {
        for col in 8..12 {
            assert_eq!(f[(3 * c.position(), col)], 0.0);
        }
    }
}

#[test]
fn jacobian_g_matches_finite_differences_and_sparsity() {
    let phi = phi_a();
    let m = f_map(&phi);
    let (gp, gm) = jacobian_g(&phi, &m, &TOL).unwrap();
    let (fp, fm) = fd_g(&phi, &m, 1e-6);
    assert!((&gp - fp).abs().max() < 1e-6);
    assert!((&gm - fm).abs().max() < 1e-6);
    for r in 4..12 {
        for c in 0..12 {
            assert_eq!(gp[(r, c)], if r == c { 1.0 } else { 0.0 });
            assert_eq!(gm[(r, c)], 0.0);
        }
    }
    for v in 0..2 {
        let row = 2 * v + 1;
        let allowed = [3 * CellIndex::new(0, v as u8).position(), 3 * CellIndex::new(1, v as u8).position()];
        for c in 0..12 {
            if allowed.contains(&c) {
                assert!(gm[(row, c)] != 0.0);
            } else {
                assert_eq!(gm[(row, c)], 0.0);
            }
        }
    }
}

#[test]
fn exact_moments_fit_with_zero_residual() {
    let report = fit_minimum_distance(&oracle_moments(&fixtures::dgp_a(), None), &oracle_cov(), &TOL, &FitOptions::default()).unwrap();
    let phi = phi_a();
    assert!(report.objective < 1e-20, "{}", report.objective);
    assert!(report.phi.0.iter().zip(phi.0).all(|(a, b)| (a - b).abs() < 1e-10));
    assert!(report.theta.0[..4].iter().zip([1.0, 2.0, 1.5, 1.0]).all(|(a, b)| (a - b).abs() < 1e-9));
    assert!(report.diagnostics.is_some());
}

#[test]
fn random_starts_reach_the_canonical_solution() {
    let opts = FitOptions { start: Start::Random { seed: 11 }, ..FitOptions::default() };
    let report = fit_minimum_distance(&oracle_moments(&fixtures::dgp_a(), None), &oracle_cov(), &TOL, &opts).unwrap();
    let phi = phi_a();
    assert!(report.phi.0.iter().zip(phi.0).all(|(a, b)| (a - b).abs() < 1e-8), "{:?}", report.phi);
}

#[test]
fn weighted_fit_agrees_on_exact_moments() {
    let opts = FitOptions { weighted: true, ..FitOptions::default() };
    let report = fit_minimum_distance(&oracle_moments(&fixtures::dgp_a(), None), &oracle_cov(), &TOL, &opts).unwrap();
    assert!(report.phi.0.iter().zip(phi_a().0).all(|(a, b)| (a - b).abs() < 1e-9));
}

#[test]
fn zero_covariance_gives_zero_standard_errors() {
    let mut m = oracle_moments(&fixtures::dgp_a(), None);
    m.rate = Rate::RootN { n: 1000 };
    let report = fit_minimum_distance(&m, &MomentCovariance::zeros(), &TOL, &FitOptions::default()).unwrap();
    assert!(report.cov_theta.iter().flatten().all(|&x| x == 0.0));
    assert!(report.se_theta.iter().all(|&x| x == 0.0));
    assert!((report.theta.0[1] - 2.0).abs() < 1e-9);
}

#[test]
fn covariance_is_symmetric_psd() {
    let sample = simulate(&DgpSpec::Binary(fixtures::dgp_a()), 20_000, 5);
    let est = estimate_moments_discrete(&sample.observations, None).unwrap();
    let report = fit_minimum_distance(&est.moments, &est.covariance, &Tolerances::estimation(), &FitOptions::default()).unwrap();
    for cov in [&report.cov_theta, &report.cov_phi] {
        let c = DMatrix::from_fn(12, 12, |i, j| cov[i][j]);
        assert!((&c - c.transpose()).abs().max() < 1e-8);
        let eig = c.symmetric_eigen().eigenvalues;
        assert!(eig.min() > -1e-8 * eig.max().max(1.0));
    }
    let a_n = (20_000f64).sqrt();
    for k in 0..12 {
        assert!((report.se_theta[k] - report.cov_theta[k][k].sqrt() / a_n).abs() < 1e-15);
    }
}

#[test]
fn outcome_scaling_is_equivariant() {
    let sample = simulate(&DgpSpec::Binary(fixtures::dgp_a()), 20_000, 6);
    let est = estimate_moments_discrete(&sample.observations, None).unwrap();
    let tol = Tolerances::estimation();
    let base = fit_minimum_distance(&est.moments, &est.covariance, &tol, &FitOptions::default()).unwrap();
    let a = 3.0;
    let scaled = fit_minimum_distance(&est.moments.affine_outcome(a, 0.0), &est.covariance.scale_outcome(a), &tol, &FitOptions::default()).unwrap();
    for k in 0..12 {
        let factor = if k < 4 { a } else { 1.0 };
        assert!((scaled.theta.0[k] - factor * base.theta.0[k]).abs() < 1e-8, "θ[{k}]");
        assert!((scaled.se_theta[k] - factor * base.se_theta[k]).abs() < 1e-8 * (1.0 + base.se_theta[k]));
    }
}

#[test]
fn sample_fit_covers_truth() {
    let spec = fixtures::dgp_a();
    let sample = simulate(&DgpSpec::Binary(spec.clone()), 100_000, 21);
    let est = estimate_moments_discrete(&sample.observations, None).unwrap();
    let report = fit_minimum_distance(&est.moments, &est.covariance, &Tolerances::estimation(), &FitOptions::default()).unwrap();
    let truth = oracle_theta(&spec, None);
    for k in 0..12 {
        assert!((report.theta.0[k] - truth[k]).abs() < 5.0 * report.se_theta[k], "θ[{k}]");
    }
    assert!(report.iterations <= 500);
}

#[test]
fn unidentified_moments_are_rejected() {
    let m = oracle_moments(&fixtures::binary("dgp-a-zirrelevant"), None);
    assert!(fit_minimum_distance(&m, &MomentCovariance::zeros(), &TOL, &FitOptions::default()).is_err());
}

#[test]
fn report_serializes() {
    let report = fit_minimum_distance(&oracle_moments(&fixtures::dgp_a(), None), &oracle_cov(), &TOL, &FitOptions::default()).unwrap();
    let json = serde_json::to_value(&report).unwrap();
    assert!(json["cov_theta"].as_array().unwrap().len() == 12);
    assert!(json["iterations"].is_u64());
}

fn feasible_phi() -> impl Strategy<Value = SystemSolution> {
    (
        prop::array::uniform4(-3.0..3.0f64),
        prop::array::uniform4(0.05..0.95f64),
        prop::array::uniform4(0.05..0.95f64),
    )
        .prop_map(|(mu, p, tau)| {
            let mut v = [0.0; 12];
            v[..4].copy_from_slice(&mu);
            v[4..8].copy_from_slice(&p);
            v[8..].copy_from_slice(&tau);
            SystemSolution(v)
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn jacobians_match_central_differences(phi in feasible_phi()) {
        let f = jacobian_f(&phi);
        let fd = fd_f(&phi, 1e-6);
        for (a, b) in f.iter().zip(fd.iter()) {
            prop_assert!((a - b).abs() <= 1e-5 * (1.0 + a.abs()));
        }
        let gap = (phi.0[5] - phi.0[4]).abs().min((phi.0[7] - phi.0[6]).abs());
        prop_assume!(gap > 0.05);
        let m = f_map(&phi);
        let (gp, gm) = jacobian_g(&phi, &m, &TOL).unwrap();
        let (fp, fm) = fd_g(&phi, &m, 1e-6);
        for (a, b) in gp.iter().zip(fp.iter()).chain(gm.iter().zip(fm.iter())) {
            prop_assert!((a - b).abs() <= 1e-5 * (1.0 + a.abs()));
        }
    }

    #[test]
    fn round_trip_recovers_implied_coefficients(phi in feasible_phi()) {
        let gap = (phi.0[5] - phi.0[4]).abs().min((phi.0[7] - phi.0[6]).abs());
        prop_assume!(gap > 0.05);
        let theta = g_map(&phi, &f_map(&phi), &TOL).unwrap();
        for v in 0..2u8 {
            let beta = phi.mu(v, 1) - phi.mu(v, 0);
            prop_assert!((theta.0[2 * v as usize + 1] - beta).abs() < 1e-10);
            prop_assert!((theta.0[2 * v as usize] - phi.mu(v, 0)).abs() < 1e-10);
        }
    }
}
