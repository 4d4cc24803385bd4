use misclass_core::dgp::{fixtures, oracle_effects, oracle_late, oracle_moments, oracle_tables, simulate_stream, DgpSpec};
use misclass_core::effects::{ate_tt_tut, late, pooled, EffectsInput};
use misclass_core::ident2::{build_q, identify_prop1};
use misclass_core::identk::{identify_mixture_tables, Partition};
use misclass_core::moments::CellIndex;
use misclass_core::{Error, Tolerances};

const TOL: Tolerances = Tolerances::identification();

fn dgp_m_input() -> EffectsInput {
    let spec = fixtures::dgp_m();
    let tables = oracle_tables(&spec, &Partition::new(spec.partition_cuts()).unwrap());
    let (mix, _) = identify_mixture_tables(&tables, &TOL).unwrap();
    EffectsInput::from_mixture(&mix, &tables).unwrap()
}

fn dgp_a_input() -> EffectsInput {
    let m = oracle_moments(&fixtures::dgp_a(), None);
    let (set, _) = identify_prop1(&build_q(&m), &TOL).unwrap();
    EffectsInput::from_binary(&set, &m)
}

#[test]
fn wald_ratio_examples() {
    assert_eq!(late([1.0, 1.0], [0.2, 0.6]).unwrap(), 0.0);
    assert!((late([1.0, 2.0], [0.2, 0.6]).unwrap() - 2.5).abs() < 1e-15);
    assert!(matches!(late([1.0, 2.0], [0.4, 0.4]), Err(Error::ZeroDenominator { .. })));
}

#[test]
fn homogeneous_world_effects_coincide() {
    let report = ate_tt_tut(&dgp_a_input(), [0.5, 0.5]).unwrap();
    for (v, beta) in [(0, 2.0), (1, 1.0)] {
        let e = &report.per_v[v];
        for x in [e.late, e.ate, e.tt, e.tut] {
            assert!((x - beta).abs() < 1e-10, "v={v}: {e:?}");
        }
    }
    assert_eq!(report.route, "prop1");
}

#[test]
fn dgp_m_effects_match_oracle() {
    let spec = fixtures::dgp_m();
    let report = ate_tt_tut(&dgp_m_input(), spec.pr_z_given_v).unwrap();
    for v in 0..2u8 {
        let e = &report.per_v[v as usize];
        let o = oracle_effects(&spec, v);
        assert!((e.ate - o.ate).abs() < 1e-8);
        assert!((e.tt - o.tt).abs() < 1e-8);
        assert!((e.tut - o.tut).abs() < 1e-8);
        assert!((e.pr_treated - o.pr_treated).abs() < 1e-8);
        assert!((e.late - oracle_late(&spec, v)).abs() < 1e-8);
    }
}

#[test]
fn effects_identity_and_proper_weights() {
    let spec = fixtures::dgp_m();
    let report = ate_tt_tut(&dgp_m_input(), spec.pr_z_given_v).unwrap();
    for e in &report.per_v {
        let mix = e.tt * e.pr_treated + e.tut * (1.0 - e.pr_treated);
        assert!((e.ate - mix).abs() < 1e-10);
        for w in [&e.pr_u, &e.pr_u_treated, &e.pr_u_untreated] {
            assert!(w.iter().all(|&x| x >= 0.0));
            assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-8);
        }
        let (lo, hi) = e.beta.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &b| (l.min(b), h.max(b)));
        assert!(e.ate >= lo - 1e-12 && e.ate <= hi + 1e-12);
    }
}

#[test]
fn constant_beta_makes_weights_irrelevant() {
    let mut input = dgp_m_input();
    for b in input.beta.iter_mut() {
        *b = [0.7, 0.7];
    }
    let report = ate_tt_tut(&input, [0.3, 0.6]).unwrap();
    for e in &report.per_v {
        for x in [e.ate, e.tt, e.tut] {
            assert!((x - 0.7).abs() < 1e-12);
        }
    }
}

#[test]
fn point_mass_among_treated() {
    let mut input = dgp_m_input();
    for c in CellIndex::ALL {
        let p = &mut input.pr_sstar[c.position()];
        p[0] += p[1];
        p[1] = 0.0;
    }
    let report = ate_tt_tut(&input, [0.5, 0.5]).unwrap();
    for v in 0..2 {
        assert_eq!(report.per_v[v].pr_u_treated, vec![0.0, 1.0]);
        assert!((report.per_v[v].tt - input.beta[1][v]).abs() < 1e-15);
    }
}

#[test]
fn no_treated_mass_is_degenerate() {
    let mut input = dgp_m_input();
    for c in CellIndex::ALL {
        let p = &mut input.pr_sstar[c.position()];
        p[0] += p[1];
        p[2] += p[3];
        p[1] = 0.0;
        p[3] = 0.0;
    }
    let r = ate_tt_tut(&input, [0.5, 0.5]);
    assert!(matches!(r, Err(Error::DegenerateTreatmentMass { t: 1, v: 0, .. })), "{r:?}");
}

#[test]
fn bad_instrument_share_is_rejected() {
    assert!(matches!(ate_tt_tut(&dgp_m_input(), [0.0, 0.5]), Err(Error::InvalidInput(_))));
}

#[test]
fn pooled_effects_weight_by_v() {
    let spec = fixtures::dgp_m();
    let report = ate_tt_tut(&dgp_m_input(), spec.pr_z_given_v).unwrap();
    let p = pooled(&report, spec.pr_v).unwrap();
    let w = [1.0 - spec.pr_v, spec.pr_v];
    let ate: f64 = (0..2).map(|v| w[v] * report.per_v[v].ate).sum();
    assert!((p.ate - ate).abs() < 1e-12);
    let treated: f64 = (0..2).map(|v| w[v] * report.per_v[v].pr_treated).sum();
    assert!((p.ate - (p.tt * treated + p.tut * (1.0 - treated))).abs() < 1e-10);
}

#[test]
fn dgp_m_effects_match_potential_outcome_simulation() {
    let spec = fixtures::dgp_m();
    let report = ate_tt_tut(&dgp_m_input(), spec.pr_z_given_v).unwrap();
    // [v][subpopulation: all, treated, untreated] -> (n, sum, sum of squares)
    let mut acc = [[(0.0f64, 0.0f64, 0.0f64); 3]; 2];
    let world = DgpSpec::Mixture(spec.clone());
    for stream in 0..10 {
        let sample = simulate_stream(&world, 1_000_000, 2024, stream);
        for (obs, lat) in sample.observations.iter().zip(&sample.latent) {
            let d = lat.y1 - lat.y0;
            let v = obs.v as usize;
            for k in [0, if lat.tstar == 1 { 1 } else { 2 }] {
                let a = &mut acc[v][k];
                a.0 += 1.0;
                a.1 += d;
                a.2 += d * d;
            }
        }
    }
    for v in 0..2 {
        let e = &report.per_v[v];
        for (k, target) in [e.ate, e.tt, e.tut].into_iter().enumerate() {
            let (n, s, ss) = acc[v][k];
            let mean = s / n;
            let se = ((ss / n - mean * mean).max(0.0) / n).sqrt();
            assert!((mean - target).abs() < 3.0 * se.max(1e-12), "v={v} k={k}: {mean} vs {target} (se {se})");
        }
    }
}
