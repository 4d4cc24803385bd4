//! Exact population quantities by enumeration over the finite latent support.
//!
//! Everything here is scalar arithmetic over `DgpSpec` fields. Nothing in this
//! file may call into the identification modules or a linear-algebra library.

use statrs::distribution::{Continuous, ContinuousCDF, Normal};

use crate::identk::partition::Partition;
use crate::identk::tables::{CellTable, JointTables};
use crate::moments::{CellIndex, MomentVector};

use super::spec::{DgpSpec2, DgpSpecK};

fn std_normal() -> Normal {
    Normal::standard()
}

fn cdf(z: f64) -> f64 {
    if z == f64::NEG_INFINITY {
        0.0
    } else if z == f64::INFINITY {
        1.0
    } else {
        std_normal().cdf(z)
    }
}

fn pdf(z: f64) -> f64 {
    if z.is_infinite() {
        0.0
    } else {
        std_normal().pdf(z)
    }
}

/// `(Pr(a < Y ≤ b), E[Y·1{a < Y ≤ b}])` for `Y ~ N(mean, sd²)`.
pub fn normal_interval(mean: f64, sd: f64, a: f64, b: f64) -> (f64, f64) {
    if sd == 0.0 {
        let inside = a < mean && mean <= b;
        return if inside { (1.0, mean) } else { (0.0, 0.0) };
    }
    let (za, zb) = ((a - mean) / sd, (b - mean) / sd);
    let p = cdf(zb) - cdf(za);
    (p, mean * p + sd * (pdf(za) - pdf(zb)))
}

/// Latent conditional means `E[Y|T*=t*, X=x, V=v]` (marginal over X when `x` is `None`).
fn outcome_mean(spec: &DgpSpec2, tstar: u8, v: u8, x: Option<f64>) -> f64 {
    let xterm = spec.covariate.map_or(0.0, |c| c.coef() * x.unwrap_or_else(|| c.mean()));
    spec.alpha[v as usize] + xterm + spec.beta[v as usize] * tstar as f64 + spec.offset(v, tstar)
}

/// Variance of `Y` around `outcome_mean`.
fn outcome_var(spec: &DgpSpec2, x: Option<f64>) -> f64 {
    let xvar = match (spec.covariate, x) {
        (Some(c), None) => c.coef().powi(2) * c.variance(),
        _ => 0.0,
    };
    spec.noise.sd().powi(2) + xvar
}

fn pr_t(spec: &DgpSpec2, t: u8, tstar: u8, z: u8) -> f64 {
    let p1 = spec.misclassification[z as usize][tstar as usize];
    if t == 1 {
        p1
    } else {
        1.0 - p1
    }
}

fn pr_tstar(spec: &DgpSpec2, tstar: u8, c: CellIndex) -> f64 {
    let p1 = spec.pr_tstar_at(c);
    if tstar == 1 {
        p1
    } else {
        1.0 - p1
    }
}

/// Population `m_x`: `(E[Y], E[T], E[YT])` per cell.
pub fn oracle_moments(spec: &DgpSpec2, x: Option<f64>) -> MomentVector {
    let mut values = [0.0; 12];
    for c in CellIndex::ALL {
        let (mut ey, mut et, mut eyt) = (0.0, 0.0, 0.0);
        for tstar in 0..2u8 {
            for t in 0..2u8 {
                let w = pr_tstar(spec, tstar, c) * pr_t(spec, t, tstar, c.z);
                let m = outcome_mean(spec, tstar, c.v, x);
                ey += w * m;
                et += w * t as f64;
                eyt += w * m * t as f64;
            }
        }
        values[3 * c.position()..3 * c.position() + 3].copy_from_slice(&[ey, et, eyt]);
    }
    MomentVector::from_values(values)
}

/// Population `Var[(Y, T, YT) | x, z, v]` per cell.
pub fn oracle_cell_variance(spec: &DgpSpec2, x: Option<f64>) -> [[[f64; 3]; 3]; 4] {
    let s2 = outcome_var(spec, x);
    let mut out = [[[0.0; 3]; 3]; 4];
    for c in CellIndex::ALL {
        // second moments of R = (Y, T, YT)
        let mut e = [[0.0; 3]; 3];
        let mut mean = [0.0; 3];
        for tstar in 0..2u8 {
            for t in 0..2u8 {
                let w = pr_tstar(spec, tstar, c) * pr_t(spec, t, tstar, c.z);
                let m = outcome_mean(spec, tstar, c.v, x);
                let (tf, ey2) = (t as f64, m * m + s2);
                mean[0] += w * m;
                mean[1] += w * tf;
                mean[2] += w * m * tf;
                e[0][0] += w * ey2;
                e[0][1] += w * m * tf;
                e[0][2] += w * ey2 * tf;
                e[1][1] += w * tf;
                e[1][2] += w * m * tf;
                e[2][2] += w * ey2 * tf;
            }
        }
        let block = &mut out[c.position()];
        for a in 0..3 {
            for b in a..3 {
                block[a][b] = e[a][b] - mean[a] * mean[b];
                block[b][a] = block[a][b];
            }
        }
    }
    out
}

/// True `φ`: `E[Y|T*,v]` (4), `Pr(T*=1|z,v)` (4), `E[T|T*,z]` (4).
pub fn oracle_phi(spec: &DgpSpec2, x: Option<f64>) -> [f64; 12] {
    let mut phi = [0.0; 12];
    for v in 0..2u8 {
        for tstar in 0..2u8 {
            phi[2 * v as usize + tstar as usize] = outcome_mean(spec, tstar, v, x);
        }
    }
    fill_common(spec, &mut phi);
    phi
}

/// True `θ`: `α(v), β(v)` (4) followed by the probability blocks of `φ`.
pub fn oracle_theta(spec: &DgpSpec2, x: Option<f64>) -> [f64; 12] {
    let mut theta = [0.0; 12];
    let xterm = spec.covariate.map_or(0.0, |c| c.coef() * x.unwrap_or_else(|| c.mean()));
    for v in 0..2 {
        theta[2 * v] = spec.alpha[v] + xterm;
        theta[2 * v + 1] = spec.beta[v];
    }
    fill_common(spec, &mut theta);
    theta
}

fn fill_common(spec: &DgpSpec2, out: &mut [f64; 12]) {
    out[4..8].copy_from_slice(&spec.pr_tstar);
    for z in 0..2 {
        out[8 + 2 * z] = spec.misclassification[z][0];
        out[8 + 2 * z + 1] = spec.misclassification[z][1];
    }
}

/// Implied `E[ε | z, v]` per cell.
pub fn implied_error_mean(spec: &DgpSpec2) -> [f64; 4] {
    CellIndex::ALL.map(|c| (0..2u8).map(|ts| pr_tstar(spec, ts, c) * spec.offset(c.v, ts)).sum())
}

/// `Pr(Y∈Δ_j | S*=s, V=v)` as `[j][s]`.
pub fn oracle_outcome_dist(spec: &DgpSpecK, partition: &Partition, v: u8) -> Vec<Vec<f64>> {
    let sd = spec.noise.sd();
    (0..partition.len())
        .map(|j| {
            let (a, b) = partition.bounds(j);
            (0..spec.k()).map(|s| normal_interval(spec.state_mean(s, v), sd, a, b).0).collect()
        })
        .collect()
}

/// Population report-by-interval tables.
pub fn oracle_tables(spec: &DgpSpecK, partition: &Partition) -> JointTables {
    let (k, m, sd) = (spec.k(), partition.len(), spec.noise.sd());
    let cells = CellIndex::ALL.map(|c| {
        let mut joint = vec![vec![0.0; m]; k];
        let mut y_joint = vec![vec![0.0; m]; k];
        for sstar in 0..k {
            let ps = spec.pr_sstar[c.position()][sstar];
            let mean = spec.state_mean(sstar, c.v);
            for j in 0..m {
                let (a, b) = partition.bounds(j);
                let (pj, yj) = normal_interval(mean, sd, a, b);
                for s in 0..k {
                    let w = ps * spec.emission[c.z as usize][s][sstar];
                    joint[s][j] += w * pj;
                    y_joint[s][j] += w * yj;
                }
            }
        }
        CellTable { joint, y_joint, count: f64::INFINITY }
    });
    JointTables { k, partition: partition.clone(), cells }
}

/// `Pr(T*=1 | U*=u, z, v)`.
pub fn pr_tstar_given_u(spec: &DgpSpecK, u: usize, c: CellIndex) -> f64 {
    let p = &spec.pr_sstar[c.position()];
    p[2 * u + 1] / (p[2 * u] + p[2 * u + 1])
}

/// `(E[Y], E[T], E[YT])` per cell for a mixture world, with `T` the treatment part of `S`.
pub fn oracle_mixture_moments(spec: &DgpSpecK) -> MomentVector {
    let mut values = [0.0; 12];
    for c in CellIndex::ALL {
        let (mut ey, mut et, mut eyt) = (0.0, 0.0, 0.0);
        for sstar in 0..spec.k() {
            let ps = spec.pr_sstar[c.position()][sstar];
            let m = spec.state_mean(sstar, c.v);
            let pt1: f64 = (0..spec.k())
                .filter(|s| s % 2 == 1)
                .map(|s| spec.emission[c.z as usize][s][sstar])
                .sum();
            ey += ps * m;
            et += ps * pt1;
            eyt += ps * m * pt1;
        }
        values[3 * c.position()..3 * c.position() + 3].copy_from_slice(&[ey, et, eyt]);
    }
    MomentVector::from_values(values)
}

/// Treatment effects computed from the latent law of a mixture world.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OracleEffects {
    pub ate: f64,
    pub tt: f64,
    pub tut: f64,
    pub pr_treated: f64,
}

pub fn oracle_effects(spec: &DgpSpecK, v: u8) -> OracleEffects {
    let p = spec.pr_sstar_given_v(v);
    let (mut ate, mut tt, mut tut, mut p1) = (0.0, 0.0, 0.0, 0.0);
    for u in 0..spec.k_u {
        let b = spec.beta[u][v as usize];
        let (q0, q1) = (p[2 * u], p[2 * u + 1]);
        ate += b * (q0 + q1);
        tt += b * q1;
        tut += b * q0;
        p1 += q1;
    }
    OracleEffects { ate, tt: tt / p1, tut: tut / (1.0 - p1), pr_treated: p1 }
}

/// Wald ratio on population quantities of a mixture world.
pub fn oracle_late(spec: &DgpSpecK, v: u8) -> f64 {
    let m = oracle_mixture_moments(spec);
    let (c0, c1) = (CellIndex::new(0, v), CellIndex::new(1, v));
    let pt = |c: CellIndex| (0..spec.k_u).map(|u| spec.pr_sstar[c.position()][2 * u + 1]).sum::<f64>();
    (m.ey(c1) - m.ey(c0)) / (pt(c1) - pt(c0))
}
