use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::moments::{CellIndex, Observation};
use crate::numeric::{condition_number, from_rows, to_rows};
use crate::tolerance::Tolerances;

use super::assign::max_assignment;
use super::eigen::{eigenvector, match_nearest, min_gap, real_eigenvalues};
use super::partition::{quantile_partition, Partition};
use super::tables::JointTables;

/// `L_Y` condition number above which the partition search kicks in.
pub const PARTITION_COND_LIMIT: f64 = 1e6;

/// Name of latent state `s = 2u + t`.
pub fn state_label(s: usize) -> String {
    format!("u{}t{}", s / 2, s % 2)
}

/// The four `K×K` matrices `Q(z,v)`.
///
/// Row 0 is `(1, Pr(Y∈Δ_1), …, Pr(Y∈Δ_{K-1}))`, column 0 is
/// `(1, Pr(S=s_1), …, Pr(S=s_{K-1}))` and the interior holds
/// `Pr(Y∈Δ_j, S=s_i)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QK {
    pub k: usize,
    pub q: [Vec<Vec<f64>>; 4],
}

impl QK {
    pub fn get(&self, c: CellIndex) -> DMatrix<f64> {
        from_rows(&self.q[c.position()])
    }
}

pub fn build_qk(tables: &JointTables) -> Result<QK> {
    let k = tables.k;
    if tables.partition.len() != k {
        return Err(Error::InvalidInput(format!(
            "identifying partition needs {k} intervals, got {}",
            tables.partition.len()
        )));
    }
    tables.check_mass()?;
    let q = CellIndex::ALL.map(|c| {
        let cell = tables.cell(c);
        let (pr_s, pr_d) = (cell.pr_s(), cell.pr_delta());
        (0..k)
            .map(|i| {
                (0..k)
                    .map(|j| match (i, j) {
                        (0, 0) => 1.0,
                        (0, j) => pr_d[j - 1],
                        (i, 0) => pr_s[i - 1],
                        (i, j) => cell.joint[i - 1][j - 1],
                    })
                    .collect()
            })
            .collect()
    });
    Ok(QK { k, q })
}

/// `K×(M+1)` matrix for an arbitrary partition with `M` intervals: column 0 as in
/// [`build_qk`], columns `1..=M` cover every interval.
pub fn build_q_delta(tables: &JointTables, c: CellIndex) -> DMatrix<f64> {
    let cell = tables.cell(c);
    let (pr_s, pr_d) = (cell.pr_s(), cell.pr_delta());
    let m = tables.partition.len();
    DMatrix::from_fn(tables.k, m + 1, |i, j| match (i, j) {
        (0, 0) => 1.0,
        (0, j) => pr_d[j - 1],
        (i, 0) => pr_s[i - 1],
        (i, j) => cell.joint[i - 1][j - 1],
    })
}

/// `α(u,v)`, `β(u,v)` and the latent outcome means behind them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlphaBeta {
    /// `alpha[u][v]`.
    pub alpha: Vec<[f64; 2]>,
    /// `beta[u][v]`.
    pub beta: Vec<[f64; 2]>,
    /// `E[Y|S*=s, v]` as `[v][s]`, averaged over the two instrument values.
    pub outcome_means: [Vec<f64>; 2],
    /// Largest gap between the `Z = 0` and `Z = 1` versions of `outcome_means`.
    pub cross_check: f64,
}

/// Identified factors of the mixture model, states ordered `s = 2u + t`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureDecomposition {
    pub k_u: usize,
    pub k: usize,
    pub states: Vec<String>,
    pub partition: Partition,
    /// `L_T(z)`: row 0 ones, row `i` is `Pr(S=s_i|S*=·, z)`.
    pub l_t: [Vec<Vec<f64>>; 2],
    /// `L_Y(v)`: row 0 ones, row `i` is `Pr(Y∈Δ_i|S*=·, v)`.
    pub l_y: [Vec<Vec<f64>>; 2],
    /// Diagonal of `Λ(z,v)` per cell: `Pr(S*=s|z,v)`.
    pub lambda: [Vec<f64>; 4],
    /// Full emission `A_z[s][s*] = Pr(S=s|S*=s*, z)`.
    pub emission: [Vec<Vec<f64>>; 2],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha_beta: Option<AlphaBeta>,
}

impl MixtureDecomposition {
    pub fn pr_sstar(&self, c: CellIndex) -> &[f64] {
        &self.lambda[c.position()]
    }

    /// `Pr(T*=1|U*=u, z, v)`.
    pub fn pr_tstar_given_u(&self, u: usize, c: CellIndex) -> f64 {
        let p = self.pr_sstar(c);
        p[2 * u + 1] / (p[2 * u] + p[2 * u + 1])
    }

    /// `L_T(z) Λ(z,v) L_Y(v)ᵀ`.
    pub fn reconstruct(&self, c: CellIndex) -> DMatrix<f64> {
        let lam = DMatrix::from_diagonal(&DVector::from_vec(self.lambda[c.position()].clone()));
        from_rows(&self.l_t[c.z as usize]) * lam * from_rows(&self.l_y[c.v as usize]).transpose()
    }

    pub fn reconstruction_error(&self, q: &QK) -> f64 {
        CellIndex::ALL
            .iter()
            .map(|&c| (self.reconstruct(c) - q.get(c)).abs().max())
            .fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureDiagnostics {
    /// Cross-ratio eigenvalues by labeled state.
    pub eigenvalues: Vec<f64>,
    pub eig_gap: f64,
    pub q_cond: [f64; 4],
    /// `min_s A_z[s][s] - max_{s'≠s} A_z[s'][s]` per `z`.
    pub dominance_margin: [f64; 2],
    pub l_y_cond: [f64; 2],
    /// `max_s |μ_s λ̃_s - 1|`, where `μ_s` is the eigenvalue of the `Z = 1` product
    /// attached to the column labeled `s` by dominance.
    pub label_consistency: f64,
    pub reconstruction_error: f64,
    pub offdiag_residual: f64,
    pub warnings: Vec<String>,
}

fn inverse(m: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    m.clone().try_inverse().filter(|i| i.iter().all(|x| x.is_finite()))
}

/// Full emission column from an `L_T` column `(1, a_1, …, a_{K-1})`.
fn emission_column(col: &[f64]) -> Vec<f64> {
    let mut a: Vec<f64> = col[1..].to_vec();
    a.push(1.0 - a.iter().sum::<f64>());
    a
}

/// Assigns each state `s` the column whose emission puts the most mass on report `s`.
///
/// `cols` are `L_T` columns; returns `σ` with state `s` ↦ column `σ[s]` and the
/// strict-dominance margin of the assignment.
pub fn label_by_dominance(cols: &[Vec<f64>], z: u8) -> Result<(Vec<usize>, f64)> {
    let k = cols.len();
    let a: Vec<Vec<f64>> = cols.iter().map(|c| emission_column(c)).collect();
    // score[s][j] = A[s][j] for candidate column j
    let score: Vec<Vec<f64>> = (0..k).map(|s| (0..k).map(|j| a[j][s]).collect()).collect();
    let sigma = max_assignment(&score);
    let mut margin = f64::INFINITY;
    for (s, &j) in sigma.iter().enumerate() {
        let rival = (0..k).filter(|&r| r != s).map(|r| a[j][r]).fold(f64::NEG_INFINITY, f64::max);
        margin = margin.min(a[j][s] - rival);
    }
    if !(margin > 0.0) {
        return Err(Error::NoDominantLabeling { z, margin });
    }
    Ok((sigma, margin))
}

/// Eigenvectors of `p` at `values`, as columns.
fn eigencolumns(p: &DMatrix<f64>, values: &[f64]) -> Result<Vec<Vec<f64>>> {
    values.iter().map(|&l| eigenvector(p, l)).collect()
}

fn columns_to_matrix(cols: &[Vec<f64>]) -> DMatrix<f64> {
    let k = cols.len();
    DMatrix::from_fn(k, k, |i, j| cols[j][i])
}

/// Eigenvectors of `p` paired with the labeled eigenvalues `targets`.
fn matched_columns(p: &DMatrix<f64>, targets: &[f64], tol: &Tolerances) -> Result<Vec<Vec<f64>>> {
    let values = real_eigenvalues(p, tol)?;
    let picks = match_nearest(&values, targets)?;
    picks.iter().map(|&i| eigenvector(p, values[i])).collect()
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

/// Diagonalization of the mixture moment matrices.
pub fn identify_mixture(q: &QK, partition: &Partition, tol: &Tolerances) -> Result<(MixtureDecomposition, MixtureDiagnostics)> {
    let k = q.k;
    if k < 2 || !k.is_multiple_of(2) {
        return Err(Error::InvalidInput(format!("K = {k} must be a positive even number")));
    }
    let mats = CellIndex::ALL.map(|c| q.get(c));
    if mats.iter().any(|m| m.iter().any(|x| !x.is_finite())) {
        return Err(Error::NonFiniteInput("mixture moment matrix".into()));
    }
    let conds = mats.clone().map(|m| condition_number(&m));
    for c in CellIndex::ALL {
        if !(conds[c.position()] <= tol.max_cond) {
            return Err(Error::SingularQ { z: c.z, v: c.v, cond: conds[c.position()] });
        }
    }
    let [q00, q10, q01, q11] = mats.clone();
    let inv = |m: &DMatrix<f64>, c: CellIndex| inverse(m).ok_or(Error::SingularQ { z: c.z, v: c.v, cond: f64::INFINITY });
    let i00 = inv(&q00, CellIndex::new(0, 0))?;
    let i10 = inv(&q10, CellIndex::new(1, 0))?;
    let i01 = inv(&q01, CellIndex::new(0, 1))?;
    let i11 = inv(&q11, CellIndex::new(1, 1))?;

    // L_T(0) Λ̃ L_T(0)⁻¹
    let q_tilde = &q00 * &i10 * &q11 * &i01;
    let values = real_eigenvalues(&q_tilde, tol)?;
    let gap = min_gap(&values);
    if !(gap >= tol.eig_gap) {
        return Err(Error::EigenvaluesNotDistinct { gap });
    }
    let cols0 = eigencolumns(&q_tilde, &values)?;
    let (sigma0, dom0) = label_by_dominance(&cols0, 0)?;
    let lt0: Vec<Vec<f64>> = sigma0.iter().map(|&j| cols0[j].clone()).collect();
    let lambda_tilde: Vec<f64> = sigma0.iter().map(|&j| values[j]).collect();

    // L_T(1) Λ̃⁻¹ L_T(1)⁻¹
    let p_t1 = &q10 * &i00 * &q01 * &i11;
    let values1 = real_eigenvalues(&p_t1, tol)?;
    let cols1 = eigencolumns(&p_t1, &values1)?;
    let (sigma1, dom1) = label_by_dominance(&cols1, 1)?;
    let lt1: Vec<Vec<f64>> = sigma1.iter().map(|&j| cols1[j].clone()).collect();
    let label_consistency = sigma1
        .iter()
        .zip(&lambda_tilde)
        .map(|(&j, l)| (values1[j] * l - 1.0).abs())
        .fold(0.0, f64::max);

    // L_Y(0) Λ̃ L_Y(0)⁻¹ and L_Y(1) Λ̃ L_Y(1)⁻¹
    let p_y0 = q00.transpose() * i01.transpose() * q11.transpose() * i10.transpose();
    let p_y1 = q11.transpose() * i10.transpose() * q00.transpose() * i01.transpose();
    let ly0 = matched_columns(&p_y0, &lambda_tilde, tol)?;
    let ly1 = matched_columns(&p_y1, &lambda_tilde, tol)?;

    let l_t = [columns_to_matrix(&lt0), columns_to_matrix(&lt1)];
    let l_y = [columns_to_matrix(&ly0), columns_to_matrix(&ly1)];

    let mut warnings = Vec::new();
    let mut offdiag: f64 = 0.0;
    let mut lambda: [Vec<f64>; 4] = Default::default();
    for c in CellIndex::ALL {
        let lt_inv = inverse(&l_t[c.z as usize]).ok_or(Error::NoDominantLabeling { z: c.z, margin: 0.0 })?;
        let ly_t_inv = inverse(&l_y[c.v as usize].transpose()).ok_or(Error::InvalidInput(format!(
            "L_Y({}) is singular; choose another partition",
            c.v
        )))?;
        let lam = lt_inv * &mats[c.position()] * ly_t_inv;
        for i in 0..k {
            for j in (0..k).filter(|&j| j != i) {
                offdiag = offdiag.max(lam[(i, j)].abs());
            }
        }
        lambda[c.position()] = (0..k)
            .map(|s| {
                let what = format!("Pr(S*={}|z={},v={})", state_label(s), c.z, c.v);
                clamp_probability(lam[(s, s)], what, tol, &mut warnings)
            })
            .collect::<Result<_>>()?;
    }
    let emission = [&lt0, &lt1].map(|cols| {
        let full: Vec<Vec<f64>> = cols.iter().map(|c| emission_column(c)).collect();
        (0..k).map(|s| (0..k).map(|j| full[j][s]).collect()).collect::<Vec<Vec<f64>>>()
    });

    let mix = MixtureDecomposition {
        k_u: k / 2,
        k,
        states: (0..k).map(state_label).collect(),
        partition: partition.clone(),
        l_t: [to_rows(&l_t[0]), to_rows(&l_t[1])],
        l_y: [to_rows(&l_y[0]), to_rows(&l_y[1])],
        lambda,
        emission,
        alpha_beta: None,
    };
    let diag = MixtureDiagnostics {
        eigenvalues: lambda_tilde,
        eig_gap: gap,
        q_cond: conds,
        dominance_margin: [dom0, dom1],
        l_y_cond: [condition_number(&l_y[0]), condition_number(&l_y[1])],
        label_consistency,
        reconstruction_error: mix.reconstruction_error(q),
        offdiag_residual: offdiag,
        warnings,
    };
    Ok((mix, diag))
}

/// `α(u,v)`, `β(u,v)` from `E[Y|U*=u, v, z] = α(u,v) + β(u,v) Pr(T*=1|u,z,v)`.
///
/// `E[Y|S*=s, v, z]` is recovered from the `Y`-weighted report tables through the
/// same inversion that yields `Λ`: `L_T(z)⁻¹ (E[Y], E[Y·1{S=s_i}])ᵢ = Λ(z,v) E[Y|S*, v]`.
pub fn identify_alpha_beta_hetero(mix: &MixtureDecomposition, tables: &JointTables, tol: &Tolerances) -> Result<AlphaBeta> {
    let k = mix.k;
    if tables.k != k {
        return Err(Error::InvalidInput(format!("tables have K = {}, decomposition has K = {k}", tables.k)));
    }
    // means[z][v][s] = E[Y|S*=s, v, z]
    let mut means = [[vec![0.0; k], vec![0.0; k]], [vec![0.0; k], vec![0.0; k]]];
    for c in CellIndex::ALL {
        let cell = tables.cell(c);
        let ys = cell.y_by_s();
        let y = DVector::from_fn(k, |i, _| if i == 0 { cell.ey() } else { ys[i - 1] });
        let lt = from_rows(&mix.l_t[c.z as usize]);
        let w = lt.lu().solve(&y).ok_or(Error::NoDominantLabeling { z: c.z, margin: 0.0 })?;
        let lam = mix.pr_sstar(c);
        means[c.z as usize][c.v as usize] = (0..k).map(|s| w[s] / lam[s]).collect();
    }
    let cross_check = (0..2)
        .flat_map(|v| (0..k).map(move |s| (v, s)))
        .map(|(v, s)| (means[0][v][s] - means[1][v][s]).abs())
        .fold(0.0, f64::max);

    let mut alpha = vec![[0.0; 2]; mix.k_u];
    let mut beta = vec![[0.0; 2]; mix.k_u];
    for u in 0..mix.k_u {
        for v in 0..2u8 {
            let mut ey = [0.0; 2];
            let mut p = [0.0; 2];
            for z in 0..2u8 {
                let c = CellIndex::new(z, v);
                p[z as usize] = mix.pr_tstar_given_u(u, c);
                let m = &means[z as usize][v as usize];
                ey[z as usize] = (1.0 - p[z as usize]) * m[2 * u] + p[z as usize] * m[2 * u + 1];
            }
            let gap = p[1] - p[0];
            if !(gap.abs() >= tol.relevance) {
                return Err(Error::IrrelevantInstrumentAtU { u, v, gap: gap.abs() });
            }
            let b = (ey[1] - ey[0]) / gap;
            alpha[u][v as usize] = ey[0] - b * p[0];
            beta[u][v as usize] = b;
        }
    }
    let avg = |v: usize| (0..k).map(|s| 0.5 * (means[0][v][s] + means[1][v][s])).collect();
    Ok(AlphaBeta { alpha, beta, outcome_means: [avg(0), avg(1)], cross_check })
}

/// `Pr(Y∈Δ_j | S*=s, v)` for any partition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutcomeDistribution {
    pub partition: Partition,
    /// `dist[v][j][s]`.
    pub dist: [Vec<Vec<f64>>; 2],
    /// Largest gap between the `Z = 0` and `Z = 1` reconstructions.
    pub cross_check: f64,
}

/// Solves `Λ(z,v) L_{Y,Δ}(v)ᵀ = L_T(z)⁻¹ Q_Δ(z,v)` for each `z` and compares the two.
pub fn conditional_outcome_dist(mix: &MixtureDecomposition, tables: &JointTables, tol: &Tolerances) -> Result<OutcomeDistribution> {
    let k = mix.k;
    if tables.k != k {
        return Err(Error::InvalidInput(format!("tables have K = {}, decomposition has K = {k}", tables.k)));
    }
    let m = tables.partition.len();
    let mut by_z: [[DMatrix<f64>; 2]; 2] = Default::default();
    for c in CellIndex::ALL {
        let lt = from_rows(&mix.l_t[c.z as usize]);
        let sol = lt
            .lu()
            .solve(&build_q_delta(tables, c))
            .ok_or(Error::NoDominantLabeling { z: c.z, margin: 0.0 })?;
        let lam = mix.pr_sstar(c);
        by_z[c.z as usize][c.v as usize] = DMatrix::from_fn(m, k, |j, s| sol[(s, j + 1)] / lam[s]);
    }
    let cross_check = (0..2).map(|v| (&by_z[0][v] - &by_z[1][v]).abs().max()).fold(0.0, f64::max);
    if !(cross_check <= tol.cross) {
        return Err(Error::CrossCheckFailed { deviation: cross_check });
    }
    let dist = [0, 1].map(|v| to_rows(&((&by_z[0][v] + &by_z[1][v]) * 0.5)));
    Ok(OutcomeDistribution { partition: tables.partition.clone(), dist, cross_check })
}

/// Full pipeline on population or sample tables: factors plus `α`, `β`.
pub fn identify_mixture_tables(tables: &JointTables, tol: &Tolerances) -> Result<(MixtureDecomposition, MixtureDiagnostics)> {
    let q = build_qk(tables)?;
    let (mut mix, diag) = identify_mixture(&q, &tables.partition, tol)?;
    mix.alpha_beta = Some(identify_alpha_beta_hetero(&mix, tables, tol)?);
    Ok((mix, diag))
}

/// Result of [`fit_mixture`], including the partitions that were tried.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureFit {
    pub decomposition: MixtureDecomposition,
    pub diagnostics: MixtureDiagnostics,
    pub tables: JointTables,
    /// `(quantile offset, max_v cond(L_Y))` for each candidate tried, `None` on failure.
    pub partition_search: Vec<(f64, Option<f64>)>,
}

/// Quantile offsets tried when the default partition gives an ill-conditioned `L_Y`.
pub const PARTITION_OFFSETS: [f64; 9] = [0.0, -0.1, 0.1, -0.2, 0.2, -0.3, 0.3, -0.4, 0.4];

/// Identifies the mixture model from data.
///
/// With no partition given, starts from the quantile partition and, if
/// `max_v cond(L_Y(v))` exceeds [`PARTITION_COND_LIMIT`], searches the
/// quantile offsets in [`PARTITION_OFFSETS`] for the best-conditioned one.
pub fn fit_mixture(data: &[Observation], k_u: usize, partition: Option<Partition>, tol: &Tolerances) -> Result<MixtureFit> {
    if k_u == 0 {
        return Err(Error::InvalidInput("K_u must be at least 1".into()));
    }
    let k = 2 * k_u;
    let attempt = |part: &Partition| -> Result<(MixtureDecomposition, MixtureDiagnostics, JointTables)> {
        let tables = JointTables::from_data(data, k_u, part)?;
        let (mix, diag) = identify_mixture_tables(&tables, tol)?;
        Ok((mix, diag, tables))
    };
    if let Some(part) = partition {
        let (decomposition, diagnostics, tables) = attempt(&part)?;
        let cond = diagnostics.l_y_cond[0].max(diagnostics.l_y_cond[1]);
        return Ok(MixtureFit { decomposition, diagnostics, tables, partition_search: vec![(0.0, Some(cond))] });
    }
    let ys: Vec<f64> = data.iter().map(|o| o.y).collect();
    let mut search = Vec::new();
    let mut best: Option<(f64, (MixtureDecomposition, MixtureDiagnostics, JointTables))> = None;
    let mut first_err = None;
    for &offset in &PARTITION_OFFSETS {
        let outcome = quantile_partition(&ys, k, offset).and_then(|p| attempt(&p));
        match outcome {
            Ok(fit) => {
                let cond = fit.1.l_y_cond[0].max(fit.1.l_y_cond[1]);
                search.push((offset, Some(cond)));
                if best.as_ref().is_none_or(|(b, _)| cond < *b) {
                    best = Some((cond, fit));
                }
                if offset == 0.0 && cond <= PARTITION_COND_LIMIT {
                    break;
                }
            }
            Err(e) => {
                search.push((offset, None));
                first_err.get_or_insert(e);
            }
        }
    }
    match best {
        Some((_, (decomposition, diagnostics, tables))) => {
            Ok(MixtureFit { decomposition, diagnostics, tables, partition_search: search })
        }
        None => Err(first_err.expect("at least one partition was tried")),
    }
}
