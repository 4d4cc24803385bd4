//! Minimum-distance estimation of the binary model.
//!
//! The 12 moments are matched by the 12 unknowns
//! `φ = (E[Y|T*=t,v], Pr(T*=1|z,v), E[T|T*=t,z])` and the outcome
//! coefficients follow from `θ = g(φ, m)`.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ident2::{alpha_beta_from_relation, build_q, identify, Diagnostics, Route};
use crate::moments::{CellIndex, MomentCovariance, MomentVector, Rate};
use crate::numeric::{condition_number, to_rows};
use crate::tolerance::Tolerances;

/// Largest accepted condition number of `F` at the optimum.
pub const MAX_F_COND: f64 = 1e10;
pub const MAX_ITERATIONS: usize = 500;
/// Number of random starts tried when the plug-in start is unavailable.
pub const RANDOM_STARTS: usize = 20;
pub const FALLBACK_SEED: u64 = 0;
const PROB_FLOOR: f64 = 1e-6;

pub const PHI_LABELS: [&str; 12] = [
    "E[Y|T*=0,v=0]",
    "E[Y|T*=1,v=0]",
    "E[Y|T*=0,v=1]",
    "E[Y|T*=1,v=1]",
    "Pr(T*=1|z=0,v=0)",
    "Pr(T*=1|z=1,v=0)",
    "Pr(T*=1|z=0,v=1)",
    "Pr(T*=1|z=1,v=1)",
    "E[T|T*=0,z=0]",
    "E[T|T*=1,z=0]",
    "E[T|T*=0,z=1]",
    "E[T|T*=1,z=1]",
];

pub const THETA_LABELS: [&str; 12] = [
    "alpha(v=0)",
    "beta(v=0)",
    "alpha(v=1)",
    "beta(v=1)",
    "Pr(T*=1|z=0,v=0)",
    "Pr(T*=1|z=1,v=0)",
    "Pr(T*=1|z=0,v=1)",
    "Pr(T*=1|z=1,v=1)",
    "E[T|T*=0,z=0]",
    "E[T|T*=1,z=0]",
    "E[T|T*=0,z=1]",
    "E[T|T*=1,z=1]",
];

/// The 12 unknowns of the moment system, ordered as [`PHI_LABELS`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SystemSolution(pub [f64; 12]);

/// Model parameters, ordered as [`THETA_LABELS`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ModelParams(pub [f64; 12]);

const fn mu_idx(v: u8, t: usize) -> usize {
    2 * v as usize + t
}

const fn p_idx(c: CellIndex) -> usize {
    4 + c.position()
}

const fn tau_idx(z: u8, t: usize) -> usize {
    8 + 2 * z as usize + t
}

impl SystemSolution {
    /// `E[Y|T*=t,v]`.
    pub fn mu(&self, v: u8, t: usize) -> f64 {
        self.0[mu_idx(v, t)]
    }

    /// `Pr(T*=1|z,v)`.
    pub fn pr_tstar(&self, c: CellIndex) -> f64 {
        self.0[p_idx(c)]
    }

    /// `E[T|T*=t,z]`.
    pub fn tau(&self, z: u8, t: usize) -> f64 {
        self.0[tau_idx(z, t)]
    }

    /// Same solution with the latent labels exchanged.
    pub fn swap_labels(&self) -> Self {
        let mut out = self.clone();
        for v in 0..2u8 {
            out.0.swap(mu_idx(v, 0), mu_idx(v, 1));
        }
        for c in CellIndex::ALL {
            out.0[p_idx(c)] = 1.0 - self.pr_tstar(c);
        }
        for z in 0..2u8 {
            out.0.swap(tau_idx(z, 0), tau_idx(z, 1));
        }
        out
    }

    fn canonical(self) -> Self {
        if self.tau(0, 1) < self.tau(0, 0) {
            self.swap_labels()
        } else {
            self
        }
    }
}

impl std::ops::Index<usize> for SystemSolution {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

impl std::ops::Index<usize> for ModelParams {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

/// Moments implied by `φ`.
pub fn f_map(phi: &SystemSolution) -> MomentVector {
    let mut m = [0.0; 12];
    for c in CellIndex::ALL {
        let p = phi.pr_tstar(c);
        let (mu0, mu1) = (phi.mu(c.v, 0), phi.mu(c.v, 1));
        let (tau0, tau1) = (phi.tau(c.z, 0), phi.tau(c.z, 1));
        let j = 3 * c.position();
        m[j] = mu0 * (1.0 - p) + mu1 * p;
        m[j + 1] = tau0 * (1.0 - p) + tau1 * p;
        m[j + 2] = mu0 * tau0 * (1.0 - p) + mu1 * tau1 * p;
    }
    MomentVector::from_values(m)
}

/// `∂f/∂φ`, rows in moment order and columns in `φ` order.
pub fn jacobian_f(phi: &SystemSolution) -> DMatrix<f64> {
    let mut f = DMatrix::zeros(12, 12);
    for c in CellIndex::ALL {
        let p = phi.pr_tstar(c);
        let (mu0, mu1) = (phi.mu(c.v, 0), phi.mu(c.v, 1));
        let (tau0, tau1) = (phi.tau(c.z, 0), phi.tau(c.z, 1));
        let (m0, m1, pc) = (mu_idx(c.v, 0), mu_idx(c.v, 1), p_idx(c));
        let (t0, t1) = (tau_idx(c.z, 0), tau_idx(c.z, 1));
        let j = 3 * c.position();

        f[(j, m0)] = 1.0 - p;
        f[(j, m1)] = p;
        f[(j, pc)] = mu1 - mu0;

        f[(j + 1, t0)] = 1.0 - p;
        f[(j + 1, t1)] = p;
        f[(j + 1, pc)] = tau1 - tau0;

        f[(j + 2, m0)] = tau0 * (1.0 - p);
        f[(j + 2, m1)] = tau1 * p;
        f[(j + 2, t0)] = mu0 * (1.0 - p);
        f[(j + 2, t1)] = mu1 * p;
        f[(j + 2, pc)] = mu1 * tau1 - mu0 * tau0;
    }
    f
}

fn relation_inputs(phi: &SystemSolution, m: &MomentVector, v: u8) -> ([f64; 2], [f64; 2]) {
    let (c0, c1) = (CellIndex::new(0, v), CellIndex::new(1, v));
    ([m.ey(c0), m.ey(c1)], [phi.pr_tstar(c0), phi.pr_tstar(c1)])
}

/// `θ = g(φ, m)`: solves the outcome relation for `α(v), β(v)` using `E[Y|z,v]` from `m`.
pub fn g_map(phi: &SystemSolution, m: &MomentVector, tol: &Tolerances) -> Result<ModelParams> {
    let mut theta = phi.0;
    for v in 0..2u8 {
        let (ey, p) = relation_inputs(phi, m, v);
        let (a, b) = alpha_beta_from_relation(ey, p, v, tol)?;
        theta[2 * v as usize] = a;
        theta[2 * v as usize + 1] = b;
    }
    Ok(ModelParams(theta))
}

/// `(∂g/∂φ, ∂g/∂m)`.
pub fn jacobian_g(phi: &SystemSolution, m: &MomentVector, tol: &Tolerances) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let mut g_phi = DMatrix::identity(12, 12);
    let mut g_m = DMatrix::zeros(12, 12);
    for v in 0..2u8 {
        let (ey, p) = relation_inputs(phi, m, v);
        let (_, beta) = alpha_beta_from_relation(ey, p, v, tol)?;
        let d = p[1] - p[0];
        let n = ey[1] - ey[0];
        let (ra, rb) = (2 * v as usize, 2 * v as usize + 1);
        let (p0, p1) = (p_idx(CellIndex::new(0, v)), p_idx(CellIndex::new(1, v)));
        let (e0, e1) = (3 * CellIndex::new(0, v).position(), 3 * CellIndex::new(1, v).position());

        for r in [ra, rb] {
            g_phi[(r, r)] = 0.0;
        }
        g_phi[(rb, p1)] = -n / (d * d);
        g_phi[(rb, p0)] = n / (d * d);
        g_m[(rb, e1)] = 1.0 / d;
        g_m[(rb, e0)] = -1.0 / d;

        g_phi[(ra, p0)] = -beta - p[0] * n / (d * d);
        g_phi[(ra, p1)] = p[0] * n / (d * d);
        g_m[(ra, e0)] = 1.0 + p[0] / d;
        g_m[(ra, e1)] = -p[0] / d;
    }
    Ok((g_phi, g_m))
}

/// Where the optimizer starts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Start {
    /// Closed-form plug-in, with random starts if it fails.
    PlugIn,
    /// Best of [`RANDOM_STARTS`] seeded random starts.
    Random { seed: u64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitOptions {
    /// Weight the distance by `Ω⁻¹` instead of the identity.
    pub weighted: bool,
    /// Route used for the plug-in start.
    pub route: Route,
    pub start: Start,
    pub max_iterations: usize,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self { weighted: false, route: Route::Prop1, start: Start::PlugIn, max_iterations: MAX_ITERATIONS }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Initialization {
    PlugIn,
    Random,
}

/// Output of [`fit_minimum_distance`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateReport {
    pub theta: ModelParams,
    pub phi: SystemSolution,
    /// Asymptotic covariance of `a_n (θ̂ - θ)`.
    pub cov_theta: Vec<Vec<f64>>,
    /// Asymptotic covariance of `a_n (φ̂ - φ)`.
    pub cov_phi: Vec<Vec<f64>>,
    pub se_theta: [f64; 12],
    pub se_phi: [f64; 12],
    pub rate: Rate,
    pub a_n: f64,
    pub objective: f64,
    pub iterations: usize,
    pub initialization: Initialization,
    pub weighted: bool,
    pub f_cond: f64,
    /// Closed-form diagnostics; absent when the closed form failed.
    pub diagnostics: Option<Diagnostics>,
    pub warnings: Vec<String>,
}

fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

fn logistic(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn to_psi(phi: &SystemSolution) -> [f64; 12] {
    let mut psi = phi.0;
    for x in psi[4..].iter_mut() {
        *x = logit(x.clamp(PROB_FLOOR, 1.0 - PROB_FLOOR));
    }
    psi
}

fn from_psi(psi: &[f64; 12]) -> SystemSolution {
    let mut phi = *psi;
    for x in phi[4..].iter_mut() {
        *x = logistic(*x);
    }
    SystemSolution(phi)
}

struct Problem<'a> {
    target: &'a [f64; 12],
    whiten: DMatrix<f64>,
}

impl Problem<'_> {
    fn residual(&self, psi: &[f64; 12]) -> DMatrix<f64> {
        let fitted = f_map(&from_psi(psi));
        let r = DMatrix::from_fn(12, 1, |i, _| fitted.values()[i] - self.target[i]);
        &self.whiten * r
    }

    fn jacobian(&self, psi: &[f64; 12]) -> DMatrix<f64> {
        let phi = from_psi(psi);
        let mut f = jacobian_f(&phi);
        for j in 4..12 {
            let p = phi.0[j];
            f.column_mut(j).scale_mut(p * (1.0 - p));
        }
        &self.whiten * f
    }
}

struct Solution {
    psi: [f64; 12],
    objective: f64,
    iterations: usize,
}

fn levenberg_marquardt(problem: &Problem, start: [f64; 12], max_iterations: usize) -> Result<Solution> {
    let mut psi = start;
    let mut r = problem.residual(&psi);
    let mut s = r.norm_squared();
    if !s.is_finite() {
        return Err(Error::NonFiniteInput("objective at the starting point".into()));
    }
    let mut lambda = 1e-3;
    for iteration in 1..=max_iterations {
        if s == 0.0 {
            return Ok(Solution { psi, objective: s, iterations: iteration - 1 });
        }
        let j = problem.jacobian(&psi);
        let jtj = j.transpose() * &j;
        let grad = j.transpose() * &r;
        loop {
            let mut a = jtj.clone();
            for k in 0..12 {
                a[(k, k)] += lambda * jtj[(k, k)].max(1e-12);
            }
            let step = a.cholesky().map(|ch| ch.solve(&(-&grad)));
            let Some(step) = step.filter(|d| d.iter().all(|x| x.is_finite())) else {
                lambda *= 10.0;
                if lambda > 1e16 {
                    return Ok(Solution { psi, objective: s, iterations: iteration });
                }
                continue;
            };
            let mut trial = psi;
            for k in 0..12 {
                trial[k] += step[k];
            }
            let r_trial = problem.residual(&trial);
            let s_trial = r_trial.norm_squared();
            if s_trial.is_finite() && s_trial < s {
                let decrease = s - s_trial;
                psi = trial;
                r = r_trial;
                s = s_trial;
                lambda = (lambda / 10.0).max(1e-15);
                if step.amax() < 1e-12 || decrease < 1e-16 {
                    return Ok(Solution { psi, objective: s, iterations: iteration });
                }
                break;
            }
            lambda *= 10.0;
            if lambda > 1e16 {
                return Ok(Solution { psi, objective: s, iterations: iteration });
            }
        }
    }
    Err(Error::NoConvergence { iterations: max_iterations })
}

fn random_starts(m: &MomentVector, seed: u64) -> Vec<SystemSolution> {
    let ey: Vec<f64> = CellIndex::ALL.iter().map(|&c| m.ey(c)).collect();
    let lo = ey.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = ey.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let spread = hi - lo + 1.0;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..RANDOM_STARTS)
        .map(|_| {
            let mut phi = [0.0; 12];
            for x in phi[..4].iter_mut() {
                *x = lo - spread + 3.0 * spread * rng.random::<f64>();
            }
            for x in phi[4..].iter_mut() {
                *x = 0.05 + 0.9 * rng.random::<f64>();
            }
            SystemSolution(phi)
        })
        .collect()
}

fn best_of_random(problem: &Problem, m: &MomentVector, seed: u64, max_iterations: usize) -> Option<Solution> {
    random_starts(m, seed)
        .iter()
        .filter_map(|start| levenberg_marquardt(problem, to_psi(start), max_iterations).ok())
        .min_by(|a, b| a.objective.total_cmp(&b.objective))
}

fn whitening(omega: &DMatrix<f64>, weighted: bool) -> Result<DMatrix<f64>> {
    if !weighted {
        return Ok(DMatrix::identity(12, 12));
    }
    let chol = omega
        .clone()
        .cholesky()
        .ok_or_else(|| Error::InvalidInput("weighted fit needs a positive definite moment covariance".into()))?;
    chol.l()
        .try_inverse()
        .ok_or_else(|| Error::InvalidInput("moment covariance factor is not invertible".into()))
}

fn symmetrize(m: DMatrix<f64>) -> DMatrix<f64> {
    (&m + m.transpose()) * 0.5
}

fn standard_errors(cov: &DMatrix<f64>, a_n: f64) -> [f64; 12] {
    std::array::from_fn(|k| if a_n > 0.0 { cov[(k, k)].max(0.0).sqrt() / a_n } else { f64::NAN })
}

/// Fits `φ̂ = argmin ‖m̂ - f(φ)‖²` and derives `θ̂` with delta-method covariances.
pub fn fit_minimum_distance(m: &MomentVector, omega: &MomentCovariance, tol: &Tolerances, opts: &FitOptions) -> Result<EstimateReport> {
    if !m.is_finite() {
        return Err(Error::NonFiniteInput("moment vector".into()));
    }
    let omega_m = omega.to_matrix();
    if omega_m.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFiniteInput("moment covariance".into()));
    }
    let problem = Problem { target: m.values(), whiten: whitening(&omega_m, opts.weighted)? };
    let mut warnings = Vec::new();

    let closed_form = identify(&build_q(m), opts.route, tol);
    let (solution, initialization) = match (&closed_form, opts.start) {
        (Ok((set, _)), Start::PlugIn) => {
            let start = to_psi(&SystemSolution(set.phi()));
            (levenberg_marquardt(&problem, start, opts.max_iterations)?, Initialization::PlugIn)
        }
        (Err(e), Start::PlugIn) => {
            warnings.push(format!("closed-form start failed ({e}); using random starts"));
            let best = best_of_random(&problem, m, FALLBACK_SEED, opts.max_iterations)
                .ok_or_else(|| Error::InitializationFailed(format!("{e}; no random start converged")))?;
            (best, Initialization::Random)
        }
        (_, Start::Random { seed }) => {
            let best = best_of_random(&problem, m, seed, opts.max_iterations)
                .ok_or_else(|| Error::InitializationFailed("no random start converged".into()))?;
            (best, Initialization::Random)
        }
    };
    let diagnostics = closed_form.ok().map(|(_, d)| d);

    let phi = from_psi(&solution.psi).canonical();
    let f = jacobian_f(&phi);
    let f_cond = condition_number(&f);
    if !(f_cond <= MAX_F_COND) {
        return Err(Error::SingularF { cond: f_cond });
    }
    let f_inv = f.clone().try_inverse().ok_or(Error::SingularF { cond: f64::INFINITY })?;
    let theta = g_map(&phi, m, tol)?;
    let (g_phi, g_m) = jacobian_g(&phi, m, tol)?;

    let cov_phi = symmetrize(&f_inv * &omega_m * f_inv.transpose());
    let b = g_phi * &f_inv + g_m;
    let cov_theta = symmetrize(&b * &omega_m * b.transpose());
    let a_n = m.rate.a_n();

    Ok(EstimateReport {
        theta,
        se_theta: standard_errors(&cov_theta, a_n),
        se_phi: standard_errors(&cov_phi, a_n),
        phi,
        cov_theta: to_rows(&cov_theta),
        cov_phi: to_rows(&cov_phi),
        rate: m.rate,
        a_n,
        objective: solution.objective,
        iterations: solution.iterations,
        initialization,
        weighted: opts.weighted,
        f_cond,
        diagnostics,
        warnings,
    })
}
