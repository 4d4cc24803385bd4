use std::path::Path;

use misclass_core::dgp::{oracle_cell_variance, oracle_mixture_moments, oracle_moments, oracle_tables, simulate, DgpSpec};
use misclass_core::effects::{ate_tt_tut, pooled, EffectsInput};
use misclass_core::ident2::{build_q, identify, Route};
use misclass_core::identk::{fit_mixture, identify_mixture_tables, JointTables, Partition};
use misclass_core::mde::{fit_minimum_distance, FitOptions, PHI_LABELS, THETA_LABELS};
use misclass_core::moments::{
    estimate_moments_discrete, estimate_moments_kernel, CellIndex, KernelConfig, MomentCovariance, MomentEstimate, Observation,
};
use serde_json::{json, Value};

use crate::config::{Mode, RunConfig, XHandling};
use crate::data::{instrument_shares, is_json, read_csv, read_population, write_csv, PopulationInput, POPULATION_SCHEMA_VERSION};
use crate::error::{CliError, CliResult};

/// What a command produces.
#[derive(Debug, Clone, PartialEq)]
pub enum Output {
    Json(Value),
    Csv(Vec<u8>),
}

fn to_json<T: serde::Serialize>(value: &T) -> Value {
    serde_json::to_value(value).expect("report types serialize")
}

fn input_path(cfg: &RunConfig) -> &Path {
    cfg.input.as_deref().expect("resolved config has an input")
}

fn route(mode: Mode) -> Route {
    match mode {
        Mode::Prop2 => Route::Prop2,
        _ => Route::Prop1,
    }
}

/// Where the identified quantities come from.
enum Source {
    Sample(Vec<Observation>),
    Population(PopulationInput),
}

fn load(cfg: &RunConfig) -> CliResult<Source> {
    let path = input_path(cfg);
    if is_json(path) {
        Ok(Source::Population(read_population(path)?))
    } else {
        Ok(Source::Sample(read_csv(path, &cfg.x)?))
    }
}

pub fn sample_moments(data: &[Observation], cfg: &RunConfig) -> CliResult<MomentEstimate> {
    let est = match &cfg.x {
        XHandling::None => estimate_moments_discrete(data, None)?,
        XHandling::Discrete(_) => estimate_moments_discrete(data, Some(&cfg.at))?,
        XHandling::Kernel(_) => {
            let kc = KernelConfig { family: cfg.kernel, bandwidth: cfg.bandwidth };
            estimate_moments_kernel(data, &cfg.at, &kc)?
        }
    };
    Ok(est)
}

fn population_moments(pop: &PopulationInput) -> CliResult<MomentEstimate> {
    let moments = pop
        .moments
        .clone()
        .ok_or_else(|| CliError::Schema(format!("population input {:?} has no moments", pop.source)))?;
    Ok(MomentEstimate {
        moments,
        covariance: pop.covariance.clone().unwrap_or_else(MomentCovariance::zeros),
        warnings: Vec::new(),
    })
}

fn moments_of(source: &Source, cfg: &RunConfig) -> CliResult<MomentEstimate> {
    match source {
        Source::Sample(data) => sample_moments(data, cfg),
        Source::Population(pop) => population_moments(pop),
    }
}

fn k_u_of(data: &[Observation], cfg: &RunConfig) -> CliResult<usize> {
    if let Some(k) = cfg.k_u {
        return Ok(k);
    }
    let max_u = data
        .iter()
        .map(|o| o.u.ok_or_else(|| CliError::Schema("mixture mode needs a u column".into())))
        .try_fold(0u32, |m, u| u.map(|u| m.max(u)))?;
    Ok(max_u as usize + 1)
}

fn partition_of(cfg: &RunConfig) -> CliResult<Option<Partition>> {
    Ok(cfg.partition.clone().map(Partition::new).transpose()?)
}

fn population_tables(pop: &PopulationInput) -> CliResult<&JointTables> {
    pop.tables
        .as_ref()
        .ok_or_else(|| CliError::Schema(format!("population input {:?} has no joint tables", pop.source)))
}

fn identify_binary(est: &MomentEstimate, cfg: &RunConfig) -> CliResult<Value> {
    let (set, diag) = identify(&build_q(&est.moments), route(cfg.mode), &cfg.tolerances)?;
    Ok(json!({
        "route": route(cfg.mode),
        "phi": set.phi(),
        "phi_labels": PHI_LABELS,
        "theta": set.theta(),
        "theta_labels": THETA_LABELS,
        "decomposition": set,
        "diagnostics": diag,
        "moments": est.moments,
        "warnings": est.warnings,
    }))
}

fn identify_mixture_source(source: &Source, cfg: &RunConfig) -> CliResult<Value> {
    match source {
        Source::Sample(data) => {
            let fit = fit_mixture(data, k_u_of(data, cfg)?, partition_of(cfg)?, &cfg.tolerances)?;
            Ok(json!({
                "route": "mixture",
                "decomposition": fit.decomposition,
                "diagnostics": fit.diagnostics,
                "partition_search": fit.partition_search,
            }))
        }
        Source::Population(pop) => {
            let (mix, diag) = identify_mixture_tables(population_tables(pop)?, &cfg.tolerances)?;
            Ok(json!({ "route": "mixture", "decomposition": mix, "diagnostics": diag }))
        }
    }
}

pub fn cmd_identify(cfg: &RunConfig) -> CliResult<Output> {
    let source = load(cfg)?;
    let result = match cfg.mode {
        Mode::Mixture => identify_mixture_source(&source, cfg)?,
        Mode::Prop1 | Mode::Prop2 => identify_binary(&moments_of(&source, cfg)?, cfg)?,
    };
    Ok(Output::Json(result))
}

pub fn cmd_estimate(cfg: &RunConfig) -> CliResult<Output> {
    let source = load(cfg)?;
    if cfg.mode == Mode::Mixture {
        return Ok(Output::Json(identify_mixture_source(&source, cfg)?));
    }
    let est = moments_of(&source, cfg)?;
    let opts = FitOptions { weighted: cfg.weighted, route: route(cfg.mode), ..FitOptions::default() };
    let report = fit_minimum_distance(&est.moments, &est.covariance, &cfg.tolerances, &opts)?;
    Ok(Output::Json(json!({
        "estimate": report,
        "phi_labels": PHI_LABELS,
        "theta_labels": THETA_LABELS,
        "moments": est.moments,
        "moment_covariance": est.covariance,
        "rate_label": est.moments.rate.label(),
        "warnings": est.warnings,
    })))
}

pub fn cmd_effects(cfg: &RunConfig) -> CliResult<Output> {
    let source = load(cfg)?;
    let input = match (&source, cfg.mode) {
        (Source::Sample(data), Mode::Mixture) => {
            let fit = fit_mixture(data, k_u_of(data, cfg)?, partition_of(cfg)?, &cfg.tolerances)?;
            EffectsInput::from_mixture(&fit.decomposition, &fit.tables)?
        }
        (Source::Population(pop), Mode::Mixture) => {
            let tables = population_tables(pop)?;
            let (mix, _) = identify_mixture_tables(tables, &cfg.tolerances)?;
            EffectsInput::from_mixture(&mix, tables)?
        }
        (_, Mode::Prop1 | Mode::Prop2) => {
            let est = moments_of(&source, cfg)?;
            let (set, _) = identify(&build_q(&est.moments), route(cfg.mode), &cfg.tolerances)?;
            EffectsInput::from_binary(&set, &est.moments)
        }
    };
    let (pr_z, pr_v) = match &source {
        Source::Sample(data) => {
            let (z, v) = instrument_shares(data);
            (z, Some(v))
        }
        Source::Population(pop) => {
            let z = pop
                .pr_z_given_v
                .ok_or_else(|| CliError::Schema("population input lacks pr_z_given_v".into()))?;
            (z, pop.pr_v)
        }
    };
    let report = ate_tt_tut(&input, pr_z)?;
    let pooled_effects = if cfg.pooled {
        let pr_v = pr_v.ok_or_else(|| CliError::Schema("population input lacks pr_v".into()))?;
        Some(pooled(&report, pr_v)?)
    } else {
        None
    };
    Ok(Output::Json(json!({ "effects": report, "pooled": pooled_effects })))
}

pub fn read_spec(path: &Path) -> CliResult<DgpSpec> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    Ok(DgpSpec::from_json(&text)?)
}

/// Oracle moments, their sampling covariance and (mixture) joint tables.
pub fn population_of(spec: &DgpSpec, cfg: &RunConfig) -> CliResult<PopulationInput> {
    let x = cfg.at.first().copied();
    let pop = match spec {
        DgpSpec::Binary(s) => {
            let covariance = if x.is_none() {
                let var = oracle_cell_variance(s, None);
                let pr = s.cell_probabilities();
                let mut cov = MomentCovariance { blocks: var };
                for c in CellIndex::ALL {
                    for row in cov.blocks[c.position()].iter_mut() {
                        for v in row.iter_mut() {
                            *v /= pr[c.position()];
                        }
                    }
                }
                Some(cov)
            } else {
                None
            };
            PopulationInput {
                schema_version: POPULATION_SCHEMA_VERSION,
                source: s.name.clone(),
                moments: Some(oracle_moments(s, x)),
                covariance,
                tables: None,
                pr_z_given_v: Some(s.pr_z_given_v),
                pr_v: Some(s.pr_v),
            }
        }
        DgpSpec::Mixture(s) => {
            let partition = match partition_of(cfg)? {
                Some(p) => p,
                None => Partition::new(s.partition_cuts())?,
            };
            PopulationInput {
                schema_version: POPULATION_SCHEMA_VERSION,
                source: s.name.clone(),
                moments: Some(oracle_mixture_moments(s)),
                covariance: None,
                tables: Some(oracle_tables(s, &partition)),
                pr_z_given_v: Some(s.pr_z_given_v),
                pr_v: Some(s.pr_v),
            }
        }
    };
    Ok(pop)
}

pub fn cmd_simulate(cfg: &RunConfig) -> CliResult<Output> {
    let spec = read_spec(input_path(cfg))?;
    if cfg.oracle_moments {
        return Ok(Output::Json(to_json(&population_of(&spec, cfg)?)));
    }
    let sample = simulate(&spec, cfg.n, cfg.seed);
    let mut buf = Vec::new();
    write_csv(&sample, cfg.latent_dump, &mut buf)?;
    Ok(Output::Csv(buf))
}
