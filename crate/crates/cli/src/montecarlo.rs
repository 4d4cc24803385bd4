//! Repeated simulate-and-estimate runs.
//!
//! Replication `r` draws from RNG stream `r` of the configured seed, so the
//! summary is identical for any worker count.

use std::collections::BTreeMap;

use misclass_core::dgp::{oracle_theta, simulate_stream, DgpSpec, DgpSpec2};
use misclass_core::mde::{fit_minimum_distance, FitOptions, THETA_LABELS};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::commands::{read_spec, sample_moments, Output};
use crate::config::{Mode, RunConfig};
use crate::error::{CliError, CliResult};

/// Two-sided 95% normal quantile.
pub const Z_95: f64 = 1.959_963_984_540_054;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamSummary {
    pub label: String,
    pub truth: f64,
    pub mean: f64,
    pub bias: f64,
    pub rmse: f64,
    /// Empirical standard deviation; absent with fewer than two successes.
    pub sd: Option<f64>,
    pub mean_se: f64,
    /// `sd / mean_se`.
    pub se_ratio: Option<f64>,
    pub coverage: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonteCarloSummary {
    pub spec: String,
    pub n: usize,
    pub reps: usize,
    pub seed: u64,
    pub successes: usize,
    /// Failure counts by error name.
    pub failures: BTreeMap<String, usize>,
    pub nominal_coverage: f64,
    pub parameters: Vec<ParamSummary>,
    /// The lone estimate when only one replication succeeded.
    pub single_estimate: Option<[f64; 12]>,
}

/// `(θ̂, se(θ̂))` of one replication.
pub type Replication = Result<([f64; 12], [f64; 12]), String>;

fn replicate(spec: &DgpSpec, cfg: &RunConfig, r: u64) -> Replication {
    let sample = simulate_stream(spec, cfg.n, cfg.seed, r);
    let est = sample_moments(&sample.observations, cfg).map_err(|e| e.name().to_owned())?;
    let opts = FitOptions {
        weighted: cfg.weighted,
        route: if cfg.mode == Mode::Prop2 { misclass_core::ident2::Route::Prop2 } else { misclass_core::ident2::Route::Prop1 },
        ..FitOptions::default()
    };
    let report = fit_minimum_distance(&est.moments, &est.covariance, &cfg.tolerances, &opts).map_err(|e| e.name().to_owned())?;
    Ok((report.theta.0, report.se_theta))
}

/// Aggregates replications in index order.
pub fn summarize(spec: &DgpSpec2, cfg: &RunConfig, results: &[Replication]) -> MonteCarloSummary {
    let truth = oracle_theta(spec, cfg.at.first().copied());
    let ok: Vec<&([f64; 12], [f64; 12])> = results.iter().filter_map(|r| r.as_ref().ok()).collect();
    let mut failures = BTreeMap::new();
    for name in results.iter().filter_map(|r| r.as_ref().err()) {
        *failures.entry(name.clone()).or_insert(0) += 1;
    }
    let m = ok.len() as f64;
    let parameters = if ok.is_empty() {
        Vec::new()
    } else {
        (0..12)
            .map(|k| {
                let est: Vec<f64> = ok.iter().map(|(t, _)| t[k]).collect();
                let se: Vec<f64> = ok.iter().map(|(_, s)| s[k]).collect();
                let mean = est.iter().sum::<f64>() / m;
                let mse = est.iter().map(|e| (e - truth[k]).powi(2)).sum::<f64>() / m;
                let mean_se = se.iter().sum::<f64>() / m;
                let sd = (ok.len() > 1).then(|| (est.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / (m - 1.0)).sqrt());
                let covered = est.iter().zip(&se).filter(|(e, s)| (*e - truth[k]).abs() <= Z_95 * *s).count();
                ParamSummary {
                    label: THETA_LABELS[k].to_owned(),
                    truth: truth[k],
                    mean,
                    bias: mean - truth[k],
                    rmse: mse.sqrt(),
                    sd,
                    mean_se,
                    se_ratio: sd.map(|s| s / mean_se),
                    coverage: (ok.len() > 1).then(|| covered as f64 / m),
                }
            })
            .collect()
    };
    MonteCarloSummary {
        spec: spec.name.clone(),
        n: cfg.n,
        reps: cfg.reps,
        seed: cfg.seed,
        successes: ok.len(),
        failures,
        nominal_coverage: 0.95,
        parameters,
        single_estimate: (ok.len() == 1).then(|| ok[0].0),
    }
}

/// Runs all replications, on `cfg.threads` workers when set.
pub fn run_replications(spec: &DgpSpec, cfg: &RunConfig) -> CliResult<Vec<Replication>> {
    let run = || (0..cfg.reps as u64).into_par_iter().map(|r| replicate(spec, cfg, r)).collect::<Vec<_>>();
    match cfg.threads {
        Some(t) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(t)
                .build()
                .map_err(|e| CliError::Schema(format!("cannot start {t} worker threads: {e}")))?;
            Ok(pool.install(run))
        }
        None => Ok(run()),
    }
}

pub fn cmd_montecarlo(cfg: &RunConfig) -> CliResult<Output> {
    let spec = read_spec(cfg.input.as_deref().expect("resolved config has an input"))?;
    let DgpSpec::Binary(binary) = &spec else {
        return Err(CliError::Schema("montecarlo needs a binary DGP spec".into()));
    };
    if cfg.mode == Mode::Mixture {
        return Err(CliError::Schema("montecarlo runs the binary estimator; use --mode prop1 or prop2".into()));
    }
    let results = run_replications(&spec, cfg)?;
    let summary = summarize(binary, cfg, &results);
    Ok(Output::Json(serde_json::to_value(&summary).expect("summary serializes")))
}
