//! Treatment effects from identified latent-state probabilities.
//!
//! States are `s = 2u + t` for latent type `u` and true treatment `t`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ident2::DecompositionSet;
use crate::identk::{JointTables, MixtureDecomposition};
use crate::moments::{CellIndex, MomentVector};

/// Smallest accepted `|Δ Pr(T*=1)|` in the Wald ratio.
pub const WALD_FLOOR: f64 = 1e-12;
/// Smallest accepted `Pr(T*=t|V=v)` when conditioning on `T*`.
pub const TREATMENT_MASS_FLOOR: f64 = 1e-12;

/// Wald ratio `(E[Y|1,v] - E[Y|0,v]) / (Pr(T*=1|1,v) - Pr(T*=1|0,v))`.
pub fn late(ey_by_z: [f64; 2], pr_tstar_by_z: [f64; 2]) -> Result<f64> {
    let d = pr_tstar_by_z[1] - pr_tstar_by_z[0];
    if !(d.abs() >= WALD_FLOOR) {
        return Err(Error::ZeroDenominator { value: d });
    }
    Ok((ey_by_z[1] - ey_by_z[0]) / d)
}

/// Identified quantities the effects are built from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EffectsInput {
    /// Identification route the inputs came from.
    pub route: String,
    pub k_u: usize,
    /// `Pr(S*=s|z,v)` per cell, `s = 2u + t`.
    pub pr_sstar: [Vec<f64>; 4],
    /// `β(u,v)`.
    pub beta: Vec<[f64; 2]>,
    /// Observed `E[Y|z,v]` per cell.
    pub ey: [f64; 4],
}

impl EffectsInput {
    /// Single latent type from the binary decomposition.
    pub fn from_binary(set: &DecompositionSet, m: &MomentVector) -> Self {
        Self {
            route: set.route.as_str().into(),
            k_u: 1,
            pr_sstar: CellIndex::ALL.map(|c| set.lambda[c.position()].to_vec()),
            beta: vec![set.beta],
            ey: CellIndex::ALL.map(|c| m.ey(c)),
        }
    }

    /// Mixture decomposition with its outcome coefficients.
    pub fn from_mixture(mix: &MixtureDecomposition, tables: &JointTables) -> Result<Self> {
        let ab = mix
            .alpha_beta
            .as_ref()
            .ok_or_else(|| Error::InvalidInput("mixture decomposition lacks outcome coefficients".into()))?;
        Ok(Self {
            route: "mixture".into(),
            k_u: mix.k_u,
            pr_sstar: mix.lambda.clone(),
            beta: ab.beta.clone(),
            ey: CellIndex::ALL.map(|c| tables.cell(c).ey()),
        })
    }

    fn pr_tstar(&self, c: CellIndex) -> f64 {
        let p = &self.pr_sstar[c.position()];
        (0..self.k_u).map(|u| p[2 * u + 1]).sum()
    }
}

/// Effects conditional on one value of `V`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VEffects {
    pub v: u8,
    pub late: f64,
    pub ate: f64,
    pub tt: f64,
    pub tut: f64,
    /// `Pr(T*=1|V=v)`.
    pub pr_treated: f64,
    /// `Pr(U*=u|V=v)`.
    pub pr_u: Vec<f64>,
    /// `Pr(U*=u|T*=1,V=v)`.
    pub pr_u_treated: Vec<f64>,
    /// `Pr(U*=u|T*=0,V=v)`.
    pub pr_u_untreated: Vec<f64>,
    /// `β(u,v)`.
    pub beta: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EffectsReport {
    pub route: String,
    pub k_u: usize,
    /// `Pr(Z=1|V=v)` used to marginalize over the instrument.
    pub pr_z_given_v: [f64; 2],
    pub per_v: [VEffects; 2],
}

/// Effects averaged over `V` with weights `Pr(V=v)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PooledEffects {
    pub pr_v: f64,
    pub late: f64,
    pub ate: f64,
    pub tt: f64,
    pub tut: f64,
}

fn effects_at(input: &EffectsInput, v: u8, pz: f64) -> Result<VEffects> {
    let (c0, c1) = (CellIndex::new(0, v), CellIndex::new(1, v));
    let k = 2 * input.k_u;
    let pr_s: Vec<f64> = (0..k)
        .map(|s| input.pr_sstar[c0.position()][s] * (1.0 - pz) + input.pr_sstar[c1.position()][s] * pz)
        .collect();
    let mass = |t: usize| (0..input.k_u).map(|u| pr_s[2 * u + t]).sum::<f64>();
    let (m0, m1) = (mass(0), mass(1));
    for (t, m) in [(1u8, m1), (0u8, m0)] {
        if !(m >= TREATMENT_MASS_FLOOR) {
            return Err(Error::DegenerateTreatmentMass { t, v, mass: m });
        }
    }
    let total = m0 + m1;
    let pr_u: Vec<f64> = (0..input.k_u).map(|u| (pr_s[2 * u] + pr_s[2 * u + 1]) / total).collect();
    let pr_u_treated: Vec<f64> = (0..input.k_u).map(|u| pr_s[2 * u + 1] / m1).collect();
    let pr_u_untreated: Vec<f64> = (0..input.k_u).map(|u| pr_s[2 * u] / m0).collect();
    let beta: Vec<f64> = input.beta.iter().map(|b| b[v as usize]).collect();
    let weigh = |w: &[f64]| w.iter().zip(&beta).map(|(w, b)| w * b).sum::<f64>();

    let late = late(
        [input.ey[c0.position()], input.ey[c1.position()]],
        [input.pr_tstar(c0), input.pr_tstar(c1)],
    )?;
    Ok(VEffects {
        v,
        late,
        ate: weigh(&pr_u),
        tt: weigh(&pr_u_treated),
        tut: weigh(&pr_u_untreated),
        pr_treated: m1 / total,
        pr_u,
        pr_u_treated,
        pr_u_untreated,
        beta,
    })
}

/// LATE, ATE, TT and TUT per `v`; `pr_z_given_v[v] = Pr(Z=1|V=v)`.
pub fn ate_tt_tut(input: &EffectsInput, pr_z_given_v: [f64; 2]) -> Result<EffectsReport> {
    if pr_z_given_v.iter().any(|p| !(*p > 0.0 && *p < 1.0)) {
        return Err(Error::InvalidInput(format!("Pr(Z=1|V) must lie in (0, 1), got {pr_z_given_v:?}")));
    }
    if input.beta.len() != input.k_u || input.pr_sstar.iter().any(|p| p.len() != 2 * input.k_u) {
        return Err(Error::InvalidInput("effects input dimensions disagree with k_u".into()));
    }
    Ok(EffectsReport {
        route: input.route.clone(),
        k_u: input.k_u,
        pr_z_given_v,
        per_v: [effects_at(input, 0, pr_z_given_v[0])?, effects_at(input, 1, pr_z_given_v[1])?],
    })
}

/// Averages over `V`; `pr_v = Pr(V=1)`. TT and TUT are weighted by the treated and untreated mass.
pub fn pooled(report: &EffectsReport, pr_v: f64) -> Result<PooledEffects> {
    if !(0.0..=1.0).contains(&pr_v) {
        return Err(Error::InvalidInput(format!("Pr(V=1) must lie in [0, 1], got {pr_v}")));
    }
    let w = [1.0 - pr_v, pr_v];
    let e = &report.per_v;
    let avg = |f: &dyn Fn(&VEffects) -> f64, g: &dyn Fn(&VEffects) -> f64| {
        let num: f64 = (0..2).map(|v| w[v] * g(&e[v]) * f(&e[v])).sum();
        let den: f64 = (0..2).map(|v| w[v] * g(&e[v])).sum();
        num / den
    };
    Ok(PooledEffects {
        pr_v,
        late: avg(&|x| x.late, &|_| 1.0),
        ate: avg(&|x| x.ate, &|_| 1.0),
        tt: avg(&|x| x.tt, &|x| x.pr_treated),
        tut: avg(&|x| x.tut, &|x| 1.0 - x.pr_treated),
    })
}
