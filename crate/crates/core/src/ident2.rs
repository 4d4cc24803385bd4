//! Closed-form identification of the binary model from the four moment matrices
//! `Q(z,v) = [[1, E[Y|z,v]], [E[T|z,v], E[YT|z,v]]]`.
//!
//! Each `Q(z,v)` factors as `L_T(z) Λ(z,v) L_Y(v)ᵀ`, where the columns of
//! `L_T(z)` are `(1, E[T|T*=t,z])`, the columns of `L_Y(v)` are
//! `(1, E[Y|T*=t,v])` and `Λ(z,v) = diag(Pr(T*=0|z,v), Pr(T*=1|z,v))`.

use nalgebra::Matrix2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::moments::{CellIndex, MomentVector};
use crate::tolerance::Tolerances;

/// Row-major 2×2 matrix.
pub type Mat2 = [[f64; 2]; 2];

pub(crate) fn to_matrix(a: &Mat2) -> Matrix2<f64> {
    Matrix2::new(a[0][0], a[0][1], a[1][0], a[1][1])
}

pub(crate) fn from_matrix(m: &Matrix2<f64>) -> Mat2 {
    [[m[(0, 0)], m[(0, 1)]], [m[(1, 0)], m[(1, 1)]]]
}

fn cond2(m: &Matrix2<f64>) -> f64 {
    if m.iter().any(|x| !x.is_finite()) {
        return f64::INFINITY;
    }
    let sv = m.singular_values();
    let (hi, lo) = (sv.max(), sv.min());
    if lo > 0.0 {
        hi / lo
    } else {
        f64::INFINITY
    }
}

fn inverse(m: &Matrix2<f64>) -> Option<Matrix2<f64>> {
    m.try_inverse().filter(|i| i.iter().all(|x| x.is_finite()))
}

/// The route used to diagonalize the moment matrices.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Route {
    /// Cross-ratio product over all four cells; misclassification may vary with `Z`.
    Prop1,
    /// Ratio within each `v`; misclassification constant in `Z`.
    Prop2,
}

impl Route {
    pub fn as_str(self) -> &'static str {
        match self {
            Route::Prop1 => "prop1",
            Route::Prop2 => "prop2",
        }
    }
}

impl std::str::FromStr for Route {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "prop1" => Ok(Route::Prop1),
            "prop2" => Ok(Route::Prop2),
            other => Err(Error::InvalidInput(format!("unknown route {other:?}"))),
        }
    }
}

/// `Q(z,v)` for the four cells in canonical order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QMatrixSet {
    pub q: [Mat2; 4],
}

impl QMatrixSet {
    pub fn get(&self, c: CellIndex) -> Matrix2<f64> {
        to_matrix(&self.q[c.position()])
    }
}

pub fn build_q(m: &MomentVector) -> QMatrixSet {
    QMatrixSet { q: CellIndex::ALL.map(|c| [[1.0, m.ey(c)], [m.et(c), m.eyt(c)]]) }
}

/// One eigenvalue with its eigenvector scaled to first entry 1.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EigenPair {
    pub value: f64,
    pub vector: [f64; 2],
}

/// Relative size below which an eigenvector's first entry cannot be normalized.
const FIRST_ENTRY_TOL: f64 = 1e-12;

/// Real eigenvalues of a 2×2 matrix in ascending order.
pub fn eigenvalues2x2(m: &Matrix2<f64>, disc_tol: f64) -> Result<[f64; 2]> {
    let (a, b, c, d) = (m[(0, 0)], m[(0, 1)], m[(1, 0)], m[(1, 1)]);
    let disc = (a - d) * (a - d) + 4.0 * b * c;
    if disc < -disc_tol {
        return Err(Error::ComplexEigenvalues { value: disc });
    }
    let root = disc.max(0.0).sqrt();
    Ok([0.5 * (a + d - root), 0.5 * (a + d + root)])
}

/// Eigenpairs of a real 2×2 matrix in ascending eigenvalue order.
///
/// Discriminants in `[-disc_tol, 0)` are treated as zero.
pub fn eig2x2(m: &Matrix2<f64>, disc_tol: f64) -> Result<[EigenPair; 2]> {
    if m.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFiniteInput("matrix passed to eig2x2".into()));
    }
    let (a, b, c, d) = (m[(0, 0)], m[(0, 1)], m[(1, 0)], m[(1, 1)]);
    let values = eigenvalues2x2(m, disc_tol)?;
    let mut out = [EigenPair { value: 0.0, vector: [1.0, 0.0] }; 2];
    for (slot, &lambda) in out.iter_mut().zip(&values) {
        let c1 = [b, lambda - a];
        let c2 = [lambda - d, c];
        let norm = |v: &[f64; 2]| v[0].hypot(v[1]);
        let v = if norm(&c1) >= norm(&c2) { c1 } else { c2 };
        let n = norm(&v);
        let vector = if n == 0.0 {
            [1.0, 0.0]
        } else if v[0].abs() <= FIRST_ENTRY_TOL * n {
            return Err(Error::DegenerateEigenvector { value: v[0] / n });
        } else {
            [1.0, v[1] / v[0]]
        };
        *slot = EigenPair { value: lambda, vector };
    }
    Ok(out)
}

/// Orders eigenpairs so the second entries ascend, `(1, E[T|T*=0]), (1, E[T|T*=1])`.
pub fn label_columns(pairs: [EigenPair; 2], z: u8, tol: &Tolerances) -> Result<([EigenPair; 2], f64)> {
    let mut p = pairs;
    if p[0].vector[1] > p[1].vector[1] {
        p.swap(0, 1);
    }
    let margin = p[1].vector[1] - p[0].vector[1];
    if !(margin >= tol.label) {
        return Err(Error::LabelingAmbiguous { z, gap: margin });
    }
    Ok((p, margin))
}

/// Reorders `pairs` so entry `k` has the eigenvalue nearest `targets[k]`.
fn match_by_eigenvalue(pairs: [EigenPair; 2], targets: [f64; 2]) -> Result<[EigenPair; 2]> {
    let nearest = |t: f64| if (pairs[0].value - t).abs() <= (pairs[1].value - t).abs() { 0 } else { 1 };
    let (i, j) = (nearest(targets[0]), nearest(targets[1]));
    if i == j {
        return Err(Error::EigenvaluesNotDistinct { gap: (pairs[0].value - pairs[1].value).abs() });
    }
    Ok([pairs[i], pairs[j]])
}

fn columns(p: &[EigenPair; 2]) -> Matrix2<f64> {
    Matrix2::new(1.0, 1.0, p[0].vector[1], p[1].vector[1])
}

/// Eigenpairs after confirming the eigenvalues are distinct.
fn distinct_eig(m: &Matrix2<f64>, tol: &Tolerances) -> Result<([EigenPair; 2], f64)> {
    let ev = eigenvalues2x2(m, tol.disc)?;
    let gap = ev[1] - ev[0];
    if !(gap >= tol.eig_gap) {
        return Err(Error::EigenvaluesNotDistinct { gap });
    }
    Ok((eig2x2(m, tol.disc)?, gap))
}

/// Diagonal entries of `L⁻¹ P L`, the eigenvalue attached to each labeled column.
fn attached_eigenvalues(l: &Matrix2<f64>, p: &Matrix2<f64>) -> Option<[f64; 2]> {
    let d = inverse(l)? * p * l;
    Some([d[(0, 0)], d[(1, 1)]])
}

/// Identified factors of the binary model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecompositionSet {
    pub route: Route,
    /// `L_T(z)` for `z = 0, 1`.
    pub l_t: [Mat2; 2],
    /// `L_Y(v)` for `v = 0, 1`.
    pub l_y: [Mat2; 2],
    /// Diagonal of `Λ(z,v)` per cell: `(Pr(T*=0|z,v), Pr(T*=1|z,v))`.
    pub lambda: [[f64; 2]; 4],
    pub alpha: [f64; 2],
    pub beta: [f64; 2],
}

impl DecompositionSet {
    /// `(Pr(T=1|T*=0,z), Pr(T=1|T*=1,z))`.
    pub fn misclassification(&self, z: u8) -> [f64; 2] {
        self.l_t[z as usize][1]
    }

    pub fn pr_tstar(&self, c: CellIndex) -> f64 {
        self.lambda[c.position()][1]
    }

    /// `(E[Y|T*=0,v], E[Y|T*=1,v])`.
    pub fn outcome_means(&self, v: u8) -> [f64; 2] {
        self.l_y[v as usize][1]
    }

    /// Solution vector `φ` in the order used by the moment map.
    pub fn phi(&self) -> [f64; 12] {
        let mut phi = [0.0; 12];
        for v in 0..2u8 {
            phi[2 * v as usize..2 * v as usize + 2].copy_from_slice(&self.outcome_means(v));
        }
        self.fill_common(&mut phi);
        phi
    }

    /// Parameter vector `θ`: `α(0), β(0), α(1), β(1)` then the probability blocks of `φ`.
    pub fn theta(&self) -> [f64; 12] {
        let mut theta = [0.0; 12];
        for v in 0..2 {
            theta[2 * v] = self.alpha[v];
            theta[2 * v + 1] = self.beta[v];
        }
        self.fill_common(&mut theta);
        theta
    }

    fn fill_common(&self, out: &mut [f64; 12]) {
        for c in CellIndex::ALL {
            out[4 + c.position()] = self.pr_tstar(c);
        }
        for z in 0..2u8 {
            out[8 + 2 * z as usize..10 + 2 * z as usize].copy_from_slice(&self.misclassification(z));
        }
    }

    /// `L_T(z) Λ(z,v) L_Y(v)ᵀ`.
    pub fn reconstruct(&self, c: CellIndex) -> Mat2 {
        let lam = self.lambda[c.position()];
        let m = to_matrix(&self.l_t[c.z as usize])
            * Matrix2::new(lam[0], 0.0, 0.0, lam[1])
            * to_matrix(&self.l_y[c.v as usize]).transpose();
        from_matrix(&m)
    }

    /// Largest entrywise gap between `q` and the reconstruction.
    pub fn reconstruction_error(&self, q: &QMatrixSet) -> f64 {
        CellIndex::ALL
            .iter()
            .flat_map(|&c| {
                let r = self.reconstruct(c);
                let qc = q.q[c.position()];
                (0..4).map(move |k| (r[k / 2][k % 2] - qc[k / 2][k % 2]).abs())
            })
            .fold(0.0, f64::max)
    }
}

/// Checks run alongside identification.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub route: Route,
    /// Eigenvalues attached to `T* = 0` and `T* = 1`.
    pub eigenvalues: [f64; 2],
    pub eig_gap: f64,
    pub q_cond: [f64; 4],
    /// `min_z E[T|T*=1,z] - E[T|T*=0,z]`.
    pub label_margin: f64,
    /// `|Pr(T*=1|1,v) - Pr(T*=1|0,v)|` for `v = 0, 1`.
    pub relevance_z: [f64; 2],
    /// `|Pr(T*=1|z,1) - Pr(T*=1|z,0)|` for `z = 0, 1`.
    pub relevance_v: [f64; 2],
    pub reconstruction_error: f64,
    /// Largest off-diagonal entry of the recovered `Λ` before taking the diagonal.
    pub offdiag_residual: f64,
    pub warnings: Vec<String>,
}

/// Solves `E[Y|z,v] = α(v) + β(v) Pr(T*=1|z,v)` over `z = 0, 1`.
pub fn alpha_beta_from_relation(ey: [f64; 2], p: [f64; 2], v: u8, tol: &Tolerances) -> Result<(f64, f64)> {
    let gap = p[1] - p[0];
    if !(gap.abs() >= tol.relevance) {
        return Err(Error::SingularIVMatrix { v, gap: gap.abs() });
    }
    let beta = (ey[1] - ey[0]) / gap;
    Ok((ey[0] - beta * p[0], beta))
}

fn check_q(q: &QMatrixSet, tol: &Tolerances) -> Result<([f64; 4], [Matrix2<f64>; 4])> {
    if q.q.iter().flatten().flatten().any(|x| !x.is_finite()) {
        return Err(Error::NonFiniteInput("moment matrix".into()));
    }
    let mats = CellIndex::ALL.map(|c| q.get(c));
    let conds = mats.map(|m| cond2(&m));
    for c in CellIndex::ALL {
        let k = conds[c.position()];
        if !(k <= tol.max_cond) {
            return Err(Error::SingularQ { z: c.z, v: c.v, cond: k });
        }
    }
    Ok((conds, mats))
}

fn clamp_probability(value: f64, what: String, tol: &Tolerances, warnings: &mut Vec<String>) -> Result<f64> {
    if !(value >= -tol.prob && value <= 1.0 + tol.prob) {
        return Err(Error::InvalidProbability { what, value });
    }
    if !(0.0..=1.0).contains(&value) {
        warnings.push(format!("{what} = {value:e} clamped to [0, 1]"));
        return Ok(value.clamp(0.0, 1.0));
    }
    Ok(value)
}

struct Factors {
    l_t: [Matrix2<f64>; 2],
    l_y: [Matrix2<f64>; 2],
    eigenvalues: [f64; 2],
    eig_gap: f64,
    label_margin: f64,
}

fn finish(route: Route, q: &QMatrixSet, mats: &[Matrix2<f64>; 4], conds: [f64; 4], f: Factors, tol: &Tolerances) -> Result<(DecompositionSet, Diagnostics)> {
    let mut warnings = Vec::new();
    let mut lambda = [[0.0; 2]; 4];
    let mut offdiag: f64 = 0.0;
    for c in CellIndex::ALL {
        let lt_inv = inverse(&f.l_t[c.z as usize]).ok_or(Error::LabelingAmbiguous { z: c.z, gap: 0.0 })?;
        let ly_t_inv = inverse(&f.l_y[c.v as usize].transpose()).ok_or(Error::EigenvaluesNotDistinct { gap: 0.0 })?;
        let lam = lt_inv * mats[c.position()] * ly_t_inv;
        offdiag = offdiag.max(lam[(0, 1)].abs()).max(lam[(1, 0)].abs());
        for t in 0..2 {
            let what = format!("Pr(T*={t}|z={},v={})", c.z, c.v);
            lambda[c.position()][t] = clamp_probability(lam[(t, t)], what, tol, &mut warnings)?;
        }
    }
    for z in 0..2u8 {
        for t in 0..2 {
            let what = format!("Pr(T=1|T*={t},z={z})");
            let value = f.l_t[z as usize][(1, t)];
            clamp_probability(value, what, tol, &mut warnings)?;
        }
    }

    let mut alpha = [0.0; 2];
    let mut beta = [0.0; 2];
    for v in 0..2u8 {
        let (c0, c1) = (CellIndex::new(0, v), CellIndex::new(1, v));
        let ey = [q.q[c0.position()][0][1], q.q[c1.position()][0][1]];
        let p = [lambda[c0.position()][1], lambda[c1.position()][1]];
        let (a, b) = alpha_beta_from_relation(ey, p, v, tol)?;
        alpha[v as usize] = a;
        beta[v as usize] = b;
    }

    let set = DecompositionSet {
        route,
        l_t: f.l_t.map(|m| from_matrix(&m)),
        l_y: f.l_y.map(|m| from_matrix(&m)),
        lambda,
        alpha,
        beta,
    };
    let p = |z, v| set.pr_tstar(CellIndex::new(z, v));
    let diag = Diagnostics {
        route,
        eigenvalues: f.eigenvalues,
        eig_gap: f.eig_gap,
        q_cond: conds,
        label_margin: f.label_margin,
        relevance_z: [0, 1].map(|v| (p(1, v) - p(0, v)).abs()),
        relevance_v: [0, 1].map(|z| (p(z, 1) - p(z, 0)).abs()),
        reconstruction_error: set.reconstruction_error(q),
        offdiag_residual: offdiag,
        warnings,
    };
    Ok((set, diag))
}

fn inv_or_singular(m: &Matrix2<f64>, c: CellIndex) -> Result<Matrix2<f64>> {
    inverse(m).ok_or(Error::SingularQ { z: c.z, v: c.v, cond: f64::INFINITY })
}

/// Identification through the four-cell cross-ratio product.
pub fn identify_prop1(q: &QMatrixSet, tol: &Tolerances) -> Result<(DecompositionSet, Diagnostics)> {
    let (conds, mats) = check_q(q, tol)?;
    let c = CellIndex::new;
    let [q00, q10, q01, q11] = mats;
    let i10 = inv_or_singular(&q10, c(1, 0))?;
    let i01 = inv_or_singular(&q01, c(0, 1))?;
    let i00 = inv_or_singular(&q00, c(0, 0))?;
    let i11 = inv_or_singular(&q11, c(1, 1))?;

    // L_T(0) Λ̃ L_T(0)⁻¹ with Λ̃ = Λ(0,0) Λ(1,0)⁻¹ Λ(1,1) Λ(0,1)⁻¹
    let q_tilde = q00 * i10 * q11 * i01;
    let (pairs, gap) = distinct_eig(&q_tilde, tol)?;
    let (lt0, m0) = label_columns(pairs, 0, tol)?;
    let lambda_tilde = [lt0[0].value, lt0[1].value];

    // L_Y(0) Λ̃ L_Y(0)⁻¹
    let p_y0 = q00.transpose() * i01.transpose() * q11.transpose() * i10.transpose();
    let ly0 = match_by_eigenvalue(eig2x2(&p_y0, tol.disc)?, lambda_tilde)?;

    // L_T(1) Λ̃⁻¹ L_T(1)⁻¹
    let p_t1 = q10 * i00 * q01 * i11;
    let (lt1, m1) = label_columns(eig2x2(&p_t1, tol.disc)?, 1, tol)?;

    // L_Y(1) Λ̃ L_Y(1)⁻¹
    let p_y1 = q11.transpose() * i10.transpose() * q00.transpose() * i01.transpose();
    let ly1 = match_by_eigenvalue(eig2x2(&p_y1, tol.disc)?, lambda_tilde)?;

    let f = Factors {
        l_t: [columns(&lt0), columns(&lt1)],
        l_y: [columns(&ly0), columns(&ly1)],
        eigenvalues: lambda_tilde,
        eig_gap: gap,
        label_margin: m0.min(m1),
    };
    finish(Route::Prop1, q, &mats, conds, f, tol)
}

/// Identification when misclassification does not depend on `Z`.
///
/// `L_T` comes from `Q(0,0) Q(1,0)⁻¹ = L_T Λ(0,0) Λ(1,0)⁻¹ L_T⁻¹` and is shared by
/// both values of `Z`; `L_Y(v)` comes from `Q(0,v)ᵀ (Q(1,v)ᵀ)⁻¹`, matched to the
/// labeled columns of `L_T` through the eigenvalues of `Q(0,v) Q(1,v)⁻¹`.
pub fn identify_prop2(q: &QMatrixSet, tol: &Tolerances) -> Result<(DecompositionSet, Diagnostics)> {
    let (conds, mats) = check_q(q, tol)?;
    let c = CellIndex::new;
    let [q00, q10, q01, q11] = mats;
    let i10 = inv_or_singular(&q10, c(1, 0))?;
    let i11 = inv_or_singular(&q11, c(1, 1))?;

    let p0 = q00 * i10;
    let (pairs, gap0) = distinct_eig(&p0, tol)?;
    let (lt, margin) = label_columns(pairs, 0, tol)?;
    let l_t = columns(&lt);
    let ev0 = [lt[0].value, lt[1].value];

    let ly0 = match_by_eigenvalue(eig2x2(&(q00.transpose() * i10.transpose()), tol.disc)?, ev0)?;

    let p1 = q01 * i11;
    let ev1 = attached_eigenvalues(&l_t, &p1).ok_or(Error::LabelingAmbiguous { z: 0, gap: margin })?;
    let gap1 = (ev1[1] - ev1[0]).abs();
    if !(gap1 >= tol.eig_gap) {
        return Err(Error::EigenvaluesNotDistinct { gap: gap1 });
    }
    let ly1 = match_by_eigenvalue(eig2x2(&(q01.transpose() * i11.transpose()), tol.disc)?, ev1)?;

    let f = Factors {
        l_t: [l_t, l_t],
        l_y: [columns(&ly0), columns(&ly1)],
        eigenvalues: ev0,
        eig_gap: gap0.min(gap1),
        label_margin: margin,
    };
    finish(Route::Prop2, q, &mats, conds, f, tol)
}

/// Dispatches on the route.
pub fn identify(q: &QMatrixSet, route: Route, tol: &Tolerances) -> Result<(DecompositionSet, Diagnostics)> {
    match route {
        Route::Prop1 => identify_prop1(q, tol),
        Route::Prop2 => identify_prop2(q, tol),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn eig_of_diagonal_matrix() {
        let m = Matrix2::new(2.0, 0.0, 0.0, 3.0);
        assert!(matches!(eig2x2(&m, 1e-12), Err(Error::DegenerateEigenvector { .. })));
    }

    #[test]
    fn eig_of_exchange_matrix() {
        let p = eig2x2(&Matrix2::new(0.0, 1.0, 1.0, 0.0), 1e-12).unwrap();
        assert_eq!(p[0].value, -1.0);
        assert_eq!(p[0].vector, [1.0, -1.0]);
        assert_eq!(p[1].value, 1.0);
        assert_eq!(p[1].vector, [1.0, 1.0]);
    }

    #[test]
    fn rotation_has_complex_eigenvalues() {
        let m = Matrix2::new(0.0, -1.0, 1.0, 0.0);
        assert!(matches!(eig2x2(&m, 1e-12), Err(Error::ComplexEigenvalues { .. })));
    }

    #[test]
    fn tiny_negative_discriminant_counts_as_zero() {
        let m = Matrix2::new(1.0, 1e-7, -1e-7, 1.0);
        let p = eig2x2(&m, 1e-12).unwrap();
        assert_eq!(p[0].value, p[1].value);
    }

    #[test]
    fn relation_rejects_irrelevant_instrument() {
        let tol = Tolerances::identification();
        assert!(matches!(
            alpha_beta_from_relation([1.0, 2.0], [0.3, 0.3], 1, &tol),
            Err(Error::SingularIVMatrix { v: 1, .. })
        ));
        assert_eq!(alpha_beta_from_relation([1.0, 1.0], [0.2, 0.6], 0, &tol).unwrap(), (1.0, 0.0));
    }
}
