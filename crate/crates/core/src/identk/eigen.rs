use nalgebra::{DMatrix, Schur};

use crate::error::{Error, Result};
use crate::tolerance::Tolerances;

/// Real eigenvalues of `m` from its real Schur form, sorted ascending.
///
/// A conjugate pair `a ± ib` with `4b² ≤ tol.disc` is read as the repeated
/// real value `a`; larger imaginary parts are an error.
pub(crate) fn real_eigenvalues(m: &DMatrix<f64>, tol: &Tolerances) -> Result<Vec<f64>> {
    if m.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFiniteInput("matrix passed to the eigen solver".into()));
    }
    let schur = Schur::try_new(m.clone(), f64::EPSILON, 10_000)
        .or_else(|| Schur::try_new(m.clone(), 1e-12, 10_000))
        .ok_or_else(|| Error::InvalidInput("Schur iteration did not converge".into()))?;
    let mut values = Vec::with_capacity(m.nrows());
    for c in schur.complex_eigenvalues().iter() {
        if 4.0 * c.im * c.im > tol.disc {
            return Err(Error::ComplexEigenvalues { value: c.im });
        }
        values.push(c.re);
    }
    values.sort_by(f64::total_cmp);
    Ok(values)
}

/// Smallest gap between sorted values.
pub(crate) fn min_gap(sorted: &[f64]) -> f64 {
    sorted.windows(2).map(|w| w[1] - w[0]).fold(f64::INFINITY, f64::min)
}

/// Eigenvector of `m` for `lambda`, scaled to first entry 1.
pub(crate) fn eigenvector(m: &DMatrix<f64>, lambda: f64) -> Result<Vec<f64>> {
    let n = m.nrows();
    let shifted = m - DMatrix::identity(n, n) * lambda;
    let svd = shifted.svd(false, true);
    let v_t = svd.v_t.expect("right singular vectors requested");
    let k = svd.singular_values.imin();
    let row = v_t.row(k);
    let norm = row.norm();
    if !(row[0].abs() > 1e-12 * norm) {
        return Err(Error::DegenerateEigenvector { value: row[0] / norm });
    }
    Ok(row.iter().map(|x| x / row[0]).collect())
}

/// For each target, the index of the nearest value; two targets sharing a value is an error.
pub(crate) fn match_nearest(values: &[f64], targets: &[f64]) -> Result<Vec<usize>> {
    let picks: Vec<usize> = targets
        .iter()
        .map(|t| {
            (0..values.len())
                .min_by(|&a, &b| (values[a] - t).abs().total_cmp(&(values[b] - t).abs()))
                .expect("non-empty spectrum")
        })
        .collect();
    let mut seen = picks.clone();
    seen.sort_unstable();
    if seen.windows(2).any(|w| w[0] == w[1]) {
        let mut sorted = values.to_vec();
        sorted.sort_by(f64::total_cmp);
        return Err(Error::EigenvaluesNotDistinct { gap: min_gap(&sorted) });
    }
    Ok(picks)
}
