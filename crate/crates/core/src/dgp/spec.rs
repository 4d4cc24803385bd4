use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::moments::CellIndex;

/// Version of the DGP JSON schema written by [`DgpSpec::to_json`].
pub const DGP_SCHEMA_VERSION: u32 = 1;

/// Law of the outcome disturbance around its conditional mean.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum NoiseLaw {
    Normal { sd: f64 },
}

impl Default for NoiseLaw {
    fn default() -> Self {
        NoiseLaw::Normal { sd: 1.0 }
    }
}

impl NoiseLaw {
    pub fn sd(&self) -> f64 {
        match *self {
            NoiseLaw::Normal { sd } => sd,
        }
    }
}

/// Exogenous covariate entering the intercept as `α(x, v) = α(v) + coef·x`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CovariateLaw {
    Uniform { low: f64, high: f64, coef: f64 },
}

impl CovariateLaw {
    pub fn mean(&self) -> f64 {
        match *self {
            CovariateLaw::Uniform { low, high, .. } => 0.5 * (low + high),
        }
    }

    pub fn variance(&self) -> f64 {
        match *self {
            CovariateLaw::Uniform { low, high, .. } => (high - low).powi(2) / 12.0,
        }
    }

    pub fn coef(&self) -> f64 {
        match *self {
            CovariateLaw::Uniform { coef, .. } => coef,
        }
    }
}

/// Binary-regressor world.
///
/// `Y = α(v) [+ coef·x] + β(v) T* + ε`, with `T*` drawn from
/// `pr_tstar[cell]`, the report `T` from `misclassification[z][t*]`, and
/// `ε = offset[v][t*] + noise`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DgpSpec2 {
    pub name: String,
    /// `Pr(T*=1|z,v)` in canonical cell order.
    pub pr_tstar: [f64; 4],
    /// `misclassification[z][t*] = Pr(T=1|T*=t*, Z=z)`.
    pub misclassification: [[f64; 2]; 2],
    pub alpha: [f64; 2],
    pub beta: [f64; 2],
    #[serde(default)]
    pub noise: NoiseLaw,
    /// `eps_offsets[v][t*] = E[ε|T*=t*, V=v]`; absent means zero.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eps_offsets: Option<[[f64; 2]; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub covariate: Option<CovariateLaw>,
    /// `Pr(Z=1|V=v)`.
    pub pr_z_given_v: [f64; 2],
    /// `Pr(V=1)`.
    pub pr_v: f64,
}

impl DgpSpec2 {
    pub fn pr_tstar_at(&self, c: CellIndex) -> f64 {
        self.pr_tstar[c.position()]
    }

    pub fn offset(&self, v: u8, tstar: u8) -> f64 {
        self.eps_offsets.map_or(0.0, |o| o[v as usize][tstar as usize])
    }

    /// `Pr(W = w_j)` in canonical order.
    pub fn cell_probabilities(&self) -> [f64; 4] {
        CellIndex::ALL.map(|c| {
            let pv = if c.v == 1 { self.pr_v } else { 1.0 - self.pr_v };
            let pz = self.pr_z_given_v[c.v as usize];
            pv * if c.z == 1 { pz } else { 1.0 - pz }
        })
    }

    pub fn validate(&self) -> Result<()> {
        let probs = self
            .pr_tstar
            .iter()
            .chain(self.misclassification.iter().flatten())
            .chain(self.pr_z_given_v.iter())
            .chain(std::iter::once(&self.pr_v));
        for &p in probs {
            if !(p > 0.0 && p < 1.0) {
                return Err(Error::InvalidSpec(format!("{}: probability {p} not in (0,1)", self.name)));
            }
        }
        let reals = self.alpha.iter().chain(self.beta.iter()).chain(self.eps_offsets.iter().flatten().flatten());
        if reals.clone().any(|x| !x.is_finite()) {
            return Err(Error::InvalidSpec(format!("{}: non-finite coefficient", self.name)));
        }
        if !(self.noise.sd() >= 0.0) || !self.noise.sd().is_finite() {
            return Err(Error::InvalidSpec(format!("{}: noise sd must be >= 0", self.name)));
        }
        if let Some(CovariateLaw::Uniform { low, high, coef }) = self.covariate {
            if !(high > low) || !coef.is_finite() {
                return Err(Error::InvalidSpec(format!("{}: bad covariate law", self.name)));
            }
        }
        Ok(())
    }
}

/// Mixture world with a latent type `U*` taking `k_u` values.
///
/// Latent states `S* = (U*, T*)` are enumerated `s = 2u + t` (type major,
/// treatment minor), `K = 2 k_u`. The report `S = (U, T)` is drawn from the
/// emission column `emission[z][·][s*]`. Outcomes follow
/// `Y = α(u*, v) + β(u*, v) T* + ε` with `ε ~ N(0, sd²)` independent of
/// everything else, so potential outcomes are `Y0 = α(u*,v) + ε`,
/// `Y1 = α(u*,v) + β(u*,v) + ε` and `Y1 - Y0 = β(u*, v)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DgpSpecK {
    pub name: String,
    pub k_u: usize,
    /// `pr_sstar[cell][s] = Pr(S*=s|z,v)`, cells in canonical order.
    pub pr_sstar: [Vec<f64>; 4],
    /// `emission[z][s][s*] = Pr(S=s|S*=s*, Z=z)`; columns sum to one.
    pub emission: [Vec<Vec<f64>>; 2],
    /// `alpha[u][v]`.
    pub alpha: Vec<[f64; 2]>,
    /// `beta[u][v]`.
    pub beta: Vec<[f64; 2]>,
    #[serde(default)]
    pub noise: NoiseLaw,
    pub pr_z_given_v: [f64; 2],
    pub pr_v: f64,
    /// Cut points of an outcome partition satisfying the rank condition.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub partition: Option<Vec<f64>>,
}

impl DgpSpecK {
    pub fn k(&self) -> usize {
        2 * self.k_u
    }

    pub fn state(u: usize, t: u8) -> usize {
        2 * u + t as usize
    }

    /// Mean outcome in latent state `s` given `v`.
    pub fn state_mean(&self, s: usize, v: u8) -> f64 {
        let (u, t) = (s / 2, (s % 2) as f64);
        self.alpha[u][v as usize] + self.beta[u][v as usize] * t
    }

    pub fn cell_probabilities(&self) -> [f64; 4] {
        CellIndex::ALL.map(|c| {
            let pv = if c.v == 1 { self.pr_v } else { 1.0 - self.pr_v };
            let pz = self.pr_z_given_v[c.v as usize];
            pv * if c.z == 1 { pz } else { 1.0 - pz }
        })
    }

    /// `Pr(S*=s|V=v)` after integrating out `Z`.
    pub fn pr_sstar_given_v(&self, v: u8) -> Vec<f64> {
        let pz1 = self.pr_z_given_v[v as usize];
        let p0 = &self.pr_sstar[CellIndex::new(0, v).position()];
        let p1 = &self.pr_sstar[CellIndex::new(1, v).position()];
        p0.iter().zip(p1).map(|(a, b)| (1.0 - pz1) * a + pz1 * b).collect()
    }

    /// `μ0(v) = E[Y0|V=v]`.
    pub fn mu0(&self, v: u8) -> f64 {
        self.pr_sstar_given_v(v)
            .iter()
            .enumerate()
            .map(|(s, p)| p * self.alpha[s / 2][v as usize])
            .sum()
    }

    /// `μ1(v) = E[Y1|V=v]`.
    pub fn mu1(&self, v: u8) -> f64 {
        self.pr_sstar_given_v(v)
            .iter()
            .enumerate()
            .map(|(s, p)| p * (self.alpha[s / 2][v as usize] + self.beta[s / 2][v as usize]))
            .sum()
    }

    /// The stored partition, or midpoints between sorted state means at `v = 0`.
    pub fn partition_cuts(&self) -> Vec<f64> {
        if let Some(p) = &self.partition {
            return p.clone();
        }
        let mut means: Vec<f64> = (0..self.k()).map(|s| self.state_mean(s, 0)).collect();
        means.sort_by(f64::total_cmp);
        means.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect()
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.k();
        let bad = |msg: String| Err(Error::InvalidSpec(format!("{}: {msg}", self.name)));
        if self.k_u == 0 {
            return bad("k_u must be >= 1".into());
        }
        if self.alpha.len() != self.k_u || self.beta.len() != self.k_u {
            return bad("alpha and beta need one row per latent type".into());
        }
        for (j, p) in self.pr_sstar.iter().enumerate() {
            if p.len() != k {
                return bad(format!("pr_sstar[{j}] has {} entries, expected {k}", p.len()));
            }
            if p.iter().any(|&x| !(x > 0.0 && x < 1.0)) || (p.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
                return bad(format!("pr_sstar[{j}] is not a positive distribution"));
            }
        }
        for (z, a) in self.emission.iter().enumerate() {
            if a.len() != k || a.iter().any(|r| r.len() != k) {
                return bad(format!("emission[{z}] must be {k}x{k}"));
            }
            for col in 0..k {
                let s: f64 = a.iter().map(|r| r[col]).sum();
                if a.iter().any(|r| !(r[col] >= 0.0)) || (s - 1.0).abs() > 1e-9 {
                    return bad(format!("emission[{z}] column {col} is not a distribution"));
                }
            }
        }
        for &p in self.pr_z_given_v.iter().chain(std::iter::once(&self.pr_v)) {
            if !(p > 0.0 && p < 1.0) {
                return bad(format!("probability {p} not in (0,1)"));
            }
        }
        if !(self.noise.sd() > 0.0) {
            return bad("mixture noise sd must be positive".into());
        }
        if let Some(cuts) = &self.partition {
            if cuts.len() + 1 != k || cuts.windows(2).any(|w| !(w[0] < w[1])) {
                return bad(format!("partition needs {} increasing cut points", k - 1));
            }
        }
        Ok(())
    }
}

/// Either kind of synthetic world.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DgpSpec {
    Binary(DgpSpec2),
    Mixture(DgpSpecK),
}

impl DgpSpec {
    pub fn name(&self) -> &str {
        match self {
            DgpSpec::Binary(s) => &s.name,
            DgpSpec::Mixture(s) => &s.name,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            DgpSpec::Binary(s) => s.validate(),
            DgpSpec::Mixture(s) => s.validate(),
        }
    }

    /// Parses and validates a versioned JSON document.
    pub fn from_json(text: &str) -> Result<Self> {
        let mut value: serde_json::Value =
            serde_json::from_str(text).map_err(|e| Error::InvalidSpec(e.to_string()))?;
        let obj = value
            .as_object_mut()
            .ok_or_else(|| Error::InvalidSpec("spec must be a JSON object".into()))?;
        match obj.remove("schema_version").and_then(|v| v.as_u64()) {
            Some(v) if v == DGP_SCHEMA_VERSION as u64 => {}
            other => {
                return Err(Error::InvalidSpec(format!(
                    "unsupported schema_version {other:?}; expected {DGP_SCHEMA_VERSION}"
                )))
            }
        }
        let spec: DgpSpec = serde_json::from_value(value).map_err(|e| Error::InvalidSpec(e.to_string()))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn to_json(&self) -> String {
        let mut value = serde_json::to_value(self).expect("spec serializes");
        if let Some(obj) = value.as_object_mut() {
            obj.insert("schema_version".into(), DGP_SCHEMA_VERSION.into());
        }
        serde_json::to_string_pretty(&value).expect("spec serializes")
    }
}
