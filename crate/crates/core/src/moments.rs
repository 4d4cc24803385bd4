//! Sample conditional moments of `R = (Y, T, YT)` given `(X, Z, V)`.
//!
//! Cells are indexed by `(z, v)` in the fixed order
//! `(0,0), (1,0), (0,1), (1,1)`; a [`MomentVector`] stores the triple
//! `(E[Y|cell], E[T|cell], E[YT|cell])` for each cell in that order, 12 values
//! in total.
//!
//! Two estimators are provided:
//!
//! - [`estimate_moments_discrete`]: cell averages over rows with `X = x`
//!   (or all rows when no covariate is used). Rate `sqrt(n)`; covariance
//!   block `j` is `Var[R|x,w_j] * n / n_j`.
//! - [`estimate_moments_kernel`]: Nadaraya–Watson ratios at a query point.
//!   Rate `sqrt(n h^d)`; covariance block `j` is
//!   `Var[R|x,w_j] * ∫K² / (f(x|w_j) Pr(W=w_j))` with kernel plug-ins for the
//!   conditional variance and the density.
//!
//! The plug-in choices inside the kernel covariance (weighted variance with
//! the same kernel, density estimate with the same bandwidth, empirical cell
//! frequency) are this crate's choice; the asymptotic formula fixes only
//! their probability limits.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::CompensatedSum;

/// Minimum number of observations per `(z, v)` cell.
pub const MIN_CELL_SIZE: usize = 2;

/// Total kernel weight per cell below which the ratio estimator is refused.
pub const KERNEL_MASS_FLOOR: f64 = 1e-200;

/// One observed row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub y: f64,
    pub t: u8,
    pub z: u8,
    pub v: u8,
    /// Covariate vector; empty when no covariate is used.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub x: Vec<f64>,
    /// Observed proxy code for the latent type (mixture mode only).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub u: Option<u32>,
}

impl Observation {
    pub fn new(y: f64, t: u8, z: u8, v: u8) -> Self {
        Self { y, t, z, v, x: Vec::new(), u: None }
    }

    pub fn cell(&self) -> CellIndex {
        CellIndex { z: self.z, v: self.v }
    }

    pub(crate) fn validate(&self) -> Result<()> {
        if !self.y.is_finite() {
            return Err(Error::NonFiniteInput(format!("y = {}", self.y)));
        }
        if let Some(x) = self.x.iter().find(|x| !x.is_finite()) {
            return Err(Error::NonFiniteInput(format!("x = {x}")));
        }
        if self.t > 1 || self.z > 1 || self.v > 1 {
            return Err(Error::InvalidInput(format!(
                "t, z, v must be 0 or 1 (got t={}, z={}, v={})",
                self.t, self.z, self.v
            )));
        }
        Ok(())
    }
}

/// A `(z, v)` cell.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct CellIndex {
    pub z: u8,
    pub v: u8,
}

impl CellIndex {
    /// Canonical order `w1=(0,0), w2=(1,0), w3=(0,1), w4=(1,1)`.
    pub const ALL: [CellIndex; 4] = [
        CellIndex { z: 0, v: 0 },
        CellIndex { z: 1, v: 0 },
        CellIndex { z: 0, v: 1 },
        CellIndex { z: 1, v: 1 },
    ];

    pub const fn new(z: u8, v: u8) -> Self {
        Self { z, v }
    }

    /// Position in the canonical order.
    #[inline]
    pub const fn position(self) -> usize {
        self.z as usize + 2 * self.v as usize
    }

    pub const fn from_position(j: usize) -> Self {
        Self::ALL[j]
    }
}

/// Convergence rate attached to a moment estimate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Rate {
    /// `a_n = sqrt(n)`.
    RootN { n: usize },
    /// `a_n = sqrt(n h^dim)`.
    RootNh { n: usize, h: f64, dim: usize },
}

impl Rate {
    pub fn a_n(&self) -> f64 {
        match *self {
            Rate::RootN { n } => (n as f64).sqrt(),
            Rate::RootNh { n, h, dim } => (n as f64 * h.powi(dim as i32)).sqrt(),
        }
    }

    pub fn label(&self) -> &'static str {
        match self {
            Rate::RootN { .. } => "sqrt(n)",
            Rate::RootNh { .. } => "sqrt(n h)",
        }
    }
}

/// The 12 conditional moments in canonical cell order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "MomentVectorRepr", into = "MomentVectorRepr")]
pub struct MomentVector {
    values: [f64; 12],
    pub rate: Rate,
    /// Observations (or effective kernel counts) per cell.
    pub cell_counts: [f64; 4],
}

impl MomentVector {
    /// Builds a vector from the raw 12 values; `rate` defaults to a
    /// population (`n = 0`) label.
    pub fn from_values(values: [f64; 12]) -> Self {
        Self { values, rate: Rate::RootN { n: 0 }, cell_counts: [0.0; 4] }
    }

    pub fn values(&self) -> &[f64; 12] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64; 12] {
        &mut self.values
    }

    pub fn ey(&self, c: CellIndex) -> f64 {
        self.values[3 * c.position()]
    }

    pub fn et(&self, c: CellIndex) -> f64 {
        self.values[3 * c.position() + 1]
    }

    pub fn eyt(&self, c: CellIndex) -> f64 {
        self.values[3 * c.position() + 2]
    }

    pub fn cell(&self, c: CellIndex) -> [f64; 3] {
        let j = 3 * c.position();
        [self.values[j], self.values[j + 1], self.values[j + 2]]
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|x| x.is_finite())
    }

    /// Moments implied by the outcome transformation `Y -> a Y + b`.
    pub fn affine_outcome(&self, a: f64, b: f64) -> Self {
        let mut out = self.clone();
        for c in CellIndex::ALL {
            let j = 3 * c.position();
            let (ey, et, eyt) = (self.values[j], self.values[j + 1], self.values[j + 2]);
            out.values[j] = a * ey + b;
            out.values[j + 2] = a * eyt + b * et;
        }
        out
    }
}

#[derive(Serialize, Deserialize)]
struct CellMomentsRepr {
    z: u8,
    v: u8,
    ey: f64,
    et: f64,
    eyt: f64,
    #[serde(default)]
    count: f64,
}

#[derive(Serialize, Deserialize)]
struct MomentVectorRepr {
    cells: Vec<CellMomentsRepr>,
    rate: Rate,
}

impl From<MomentVector> for MomentVectorRepr {
    fn from(m: MomentVector) -> Self {
        let cells = CellIndex::ALL
            .iter()
            .map(|&c| CellMomentsRepr {
                z: c.z,
                v: c.v,
                ey: m.ey(c),
                et: m.et(c),
                eyt: m.eyt(c),
                count: m.cell_counts[c.position()],
            })
            .collect();
        MomentVectorRepr { cells, rate: m.rate }
    }
}

impl TryFrom<MomentVectorRepr> for MomentVector {
    type Error = String;

    fn try_from(r: MomentVectorRepr) -> std::result::Result<Self, String> {
        if r.cells.len() != 4 {
            return Err(format!("expected 4 cells, found {}", r.cells.len()));
        }
        let mut values = [f64::NAN; 12];
        let mut counts = [0.0; 4];
        let mut seen = [false; 4];
        for cell in r.cells {
            if cell.z > 1 || cell.v > 1 {
                return Err(format!("cell ({}, {}) out of range", cell.z, cell.v));
            }
            let j = CellIndex::new(cell.z, cell.v).position();
            if seen[j] {
                return Err(format!("duplicate cell ({}, {})", cell.z, cell.v));
            }
            seen[j] = true;
            values[3 * j] = cell.ey;
            values[3 * j + 1] = cell.et;
            values[3 * j + 2] = cell.eyt;
            counts[j] = cell.count;
        }
        Ok(MomentVector { values, rate: r.rate, cell_counts: counts })
    }
}

/// Block-diagonal 12×12 asymptotic covariance of `a_n (m̂ - m)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MomentCovariance {
    /// One 3×3 block per cell in canonical order.
    pub blocks: [[[f64; 3]; 3]; 4],
}

impl MomentCovariance {
    pub fn zeros() -> Self {
        Self { blocks: [[[0.0; 3]; 3]; 4] }
    }

    pub fn to_matrix(&self) -> nalgebra::DMatrix<f64> {
        let mut m = nalgebra::DMatrix::zeros(12, 12);
        for (j, b) in self.blocks.iter().enumerate() {
            for r in 0..3 {
                for c in 0..3 {
                    m[(3 * j + r, 3 * j + c)] = b[r][c];
                }
            }
        }
        m
    }

    /// Scales the Y-related entries as induced by `Y -> a Y` (with `b = 0`).
    pub fn scale_outcome(&self, a: f64) -> Self {
        let factor = [a, 1.0, a];
        let mut out = self.clone();
        for b in out.blocks.iter_mut() {
            for r in 0..3 {
                for c in 0..3 {
                    b[r][c] *= factor[r] * factor[c];
                }
            }
        }
        out
    }
}

/// Moments, their covariance and any warnings raised while computing them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MomentEstimate {
    pub moments: MomentVector,
    pub covariance: MomentCovariance,
    #[serde(default)]
    pub warnings: Vec<String>,
}

/// Kernel family.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelFamily {
    #[default]
    Gaussian,
    Epanechnikov,
}

impl KernelFamily {
    #[inline]
    pub fn eval(self, s: f64) -> f64 {
        match self {
            KernelFamily::Gaussian => (-0.5 * s * s).exp() / (2.0 * std::f64::consts::PI).sqrt(),
            KernelFamily::Epanechnikov => {
                if s.abs() <= 1.0 {
                    0.75 * (1.0 - s * s)
                } else {
                    0.0
                }
            }
        }
    }

    /// `∫ K(s)^2 ds` for the univariate kernel.
    pub fn squared_integral(self) -> f64 {
        match self {
            KernelFamily::Gaussian => 1.0 / (2.0 * std::f64::consts::PI.sqrt()),
            KernelFamily::Epanechnikov => 0.6,
        }
    }
}

/// Kernel family and bandwidth. `bandwidth = None` selects the rule of thumb.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct KernelConfig {
    pub family: KernelFamily,
    pub bandwidth: Option<f64>,
}

impl KernelConfig {
    pub fn with_bandwidth(family: KernelFamily, h: f64) -> Self {
        Self { family, bandwidth: Some(h) }
    }
}

#[derive(Clone, Default)]
struct CellAccumulator {
    n: usize,
    w: CompensatedSum,
    w2: CompensatedSum,
    r: [CompensatedSum; 3],
}

fn validate_all(data: &[Observation]) -> Result<()> {
    data.iter().try_for_each(Observation::validate)
}

fn response(o: &Observation) -> [f64; 3] {
    let t = o.t as f64;
    [o.y, t, o.y * t]
}

/// Weighted covariance with the reliability-weight correction, so that equal
/// weights give the usual `n - 1` divisor. Returns `None` when fewer than two
/// effective observations carry weight.
fn weighted_cov<'a>(
    rows: impl Iterator<Item = (&'a Observation, f64)>,
    mean: &[f64; 3],
    sw: f64,
    sw2: f64,
) -> Option<[[f64; 3]; 3]> {
    let mut acc: [[CompensatedSum; 3]; 3] = Default::default();
    for (o, w) in rows {
        let r = response(o);
        let d = [r[0] - mean[0], r[1] - mean[1], r[2] - mean[2]];
        for a in 0..3 {
            for b in a..3 {
                acc[a][b].add(w * d[a] * d[b]);
            }
        }
    }
    let denom = sw - sw2 / sw;
    if !(denom > 0.0) || denom <= 1e-12 * sw {
        return None;
    }
    let mut out = [[0.0; 3]; 3];
    for a in 0..3 {
        for b in a..3 {
            out[a][b] = acc[a][b].value() / denom;
            out[b][a] = out[a][b];
        }
    }
    Some(out)
}

fn is_zero_block(b: &[[f64; 3]; 3]) -> bool {
    b.iter().flatten().all(|&x| x == 0.0)
}

/// Cell averages of `(Y, T, YT)` over rows whose covariate equals `x`
/// (all rows when `x` is `None`).
pub fn estimate_moments_discrete(data: &[Observation], x: Option<&[f64]>) -> Result<MomentEstimate> {
    validate_all(data)?;
    let selected = |o: &&Observation| x.is_none_or(|x| o.x.as_slice() == x);

    let mut cells: [CellAccumulator; 4] = Default::default();
    let mut n = 0usize;
    for o in data.iter().filter(selected) {
        let acc = &mut cells[o.cell().position()];
        acc.n += 1;
        let r = response(o);
        for k in 0..3 {
            acc.r[k].add(r[k]);
        }
        n += 1;
    }
    for (j, acc) in cells.iter().enumerate() {
        if acc.n < MIN_CELL_SIZE {
            let c = CellIndex::from_position(j);
            return Err(Error::EmptyCell { z: c.z, v: c.v, count: acc.n, min: MIN_CELL_SIZE });
        }
    }

    let mut values = [0.0; 12];
    let mut counts = [0.0; 4];
    let mut cov = MomentCovariance::zeros();
    let mut warnings = Vec::new();
    for (j, acc) in cells.iter().enumerate() {
        let nj = acc.n as f64;
        let mean = [acc.r[0].value() / nj, acc.r[1].value() / nj, acc.r[2].value() / nj];
        values[3 * j..3 * j + 3].copy_from_slice(&mean);
        counts[j] = nj;
        let rows = data
            .iter()
            .filter(selected)
            .filter(|o| o.cell().position() == j)
            .map(|o| (o, 1.0));
        let var = weighted_cov(rows, &mean, nj, nj).unwrap_or([[0.0; 3]; 3]);
        let scale = n as f64 / nj;
        for a in 0..3 {
            for b in 0..3 {
                cov.blocks[j][a][b] = var[a][b] * scale;
            }
        }
        if is_zero_block(&cov.blocks[j]) {
            let c = CellIndex::from_position(j);
            warnings.push(format!("zero variance in cell (z={}, v={})", c.z, c.v));
        }
    }

    Ok(MomentEstimate {
        moments: MomentVector { values, rate: Rate::RootN { n }, cell_counts: counts },
        covariance: cov,
        warnings,
    })
}

#[inline]
fn product_kernel(family: KernelFamily, xi: &[f64], x: &[f64], h: f64) -> f64 {
    xi.iter().zip(x).map(|(a, b)| family.eval((a - b) / h)).product()
}

/// Nadaraya–Watson estimates of `E[R|x, w_j]` at the query point `x`.
pub fn estimate_moments_kernel(data: &[Observation], x: &[f64], cfg: &KernelConfig) -> Result<MomentEstimate> {
    validate_all(data)?;
    let dim = x.len();
    if dim == 0 {
        return Err(Error::InvalidInput("kernel estimation needs a covariate query point".into()));
    }
    if let Some(bad) = data.iter().find(|o| o.x.len() != dim) {
        return Err(Error::InvalidInput(format!(
            "observation has {} covariates, query point has {dim}",
            bad.x.len()
        )));
    }
    let h = match cfg.bandwidth {
        Some(h) => h,
        None => bandwidth_rule_of_thumb(data, dim)?,
    };
    if !(h > 0.0) || !h.is_finite() {
        return Err(Error::BadBandwidth(h));
    }

    let weights: Vec<f64> = data.iter().map(|o| product_kernel(cfg.family, &o.x, x, h)).collect();
    let mut cells: [CellAccumulator; 4] = Default::default();
    for (o, &w) in data.iter().zip(&weights) {
        let acc = &mut cells[o.cell().position()];
        acc.n += 1;
        acc.w.add(w);
        acc.w2.add(w * w);
        let r = response(o);
        for k in 0..3 {
            acc.r[k].add(w * r[k]);
        }
    }
    for (j, acc) in cells.iter().enumerate() {
        let c = CellIndex::from_position(j);
        if acc.n < MIN_CELL_SIZE {
            return Err(Error::EmptyCell { z: c.z, v: c.v, count: acc.n, min: MIN_CELL_SIZE });
        }
        let mass = acc.w.value();
        if !(mass >= KERNEL_MASS_FLOOR) {
            return Err(Error::ZeroKernelMass { z: c.z, v: c.v, mass });
        }
    }

    let n = data.len();
    let k2 = cfg.family.squared_integral().powi(dim as i32);
    let hd = h.powi(dim as i32);
    let mut values = [0.0; 12];
    let mut counts = [0.0; 4];
    let mut cov = MomentCovariance::zeros();
    let mut warnings = Vec::new();
    for (j, acc) in cells.iter().enumerate() {
        let sw = acc.w.value();
        let sw2 = acc.w2.value();
        let mean = [acc.r[0].value() / sw, acc.r[1].value() / sw, acc.r[2].value() / sw];
        values[3 * j..3 * j + 3].copy_from_slice(&mean);
        counts[j] = sw * sw / sw2;
        let rows = data
            .iter()
            .zip(&weights)
            .filter(|(o, _)| o.cell().position() == j)
            .map(|(o, &w)| (o, w));
        let var = weighted_cov(rows, &mean, sw, sw2).unwrap_or([[0.0; 3]; 3]);
        // f̂(x|w_j) Pr̂(W=w_j) = sw / (n h^d)
        let scale = k2 * n as f64 * hd / sw;
        for a in 0..3 {
            for b in 0..3 {
                cov.blocks[j][a][b] = var[a][b] * scale;
            }
        }
        if is_zero_block(&cov.blocks[j]) {
            let c = CellIndex::from_position(j);
            warnings.push(format!("zero variance in cell (z={}, v={})", c.z, c.v));
        }
    }

    Ok(MomentEstimate {
        moments: MomentVector { values, rate: Rate::RootNh { n, h, dim }, cell_counts: counts },
        covariance: cov,
        warnings,
    })
}

/// `1.06 * σ̄ * n^(-1/(4+d))` with `σ̄` the geometric mean of the
/// coordinate standard deviations.
pub fn rule_of_thumb(sds: &[f64], n: usize) -> f64 {
    let d = sds.len();
    let log_mean = sds.iter().map(|s| s.ln()).sum::<f64>() / d as f64;
    1.06 * log_mean.exp() * (n as f64).powf(-1.0 / (4.0 + d as f64))
}

/// Rule-of-thumb bandwidth from the covariates stored in `data`.
pub fn bandwidth_rule_of_thumb(data: &[Observation], dim_x: usize) -> Result<f64> {
    let n = data.len();
    if n < 2 {
        return Err(Error::InvalidInput(format!("bandwidth rule needs n >= 2, got {n}")));
    }
    if dim_x == 0 {
        return Err(Error::InvalidInput("bandwidth rule needs dim_x >= 1".into()));
    }
    let mut sds = Vec::with_capacity(dim_x);
    for k in 0..dim_x {
        let col = |o: &Observation| o.x.get(k).copied();
        let mut acc = CompensatedSum::new();
        for o in data {
            acc.add(col(o).ok_or_else(|| Error::InvalidInput(format!("missing covariate {k}")))?);
        }
        let mean = acc.value() / n as f64;
        let ss: CompensatedSum = data.iter().map(|o| (o.x[k] - mean).powi(2)).collect();
        let sd = (ss.value() / (n - 1) as f64).sqrt();
        if !(sd > 1e-12 * (1.0 + mean.abs())) {
            return Err(Error::DegenerateX { coord: k });
        }
        sds.push(sd);
    }
    Ok(rule_of_thumb(&sds, n))
}
