//! CSV samples and JSON population inputs.
//!
//! Sample CSV: header row; `y, t, z, v` required; `x_*` and `u` optional;
//! `latent_*` and any other columns are ignored.

use std::io::Write;
use std::path::Path;

use misclass_core::dgp::Sample;
use misclass_core::identk::JointTables;
use misclass_core::moments::{MomentCovariance, MomentVector, Observation};
use serde::{Deserialize, Serialize};

use crate::config::XHandling;
use crate::error::{CliError, CliResult};

pub const POPULATION_SCHEMA_VERSION: u32 = 1;

fn column(headers: &csv::StringRecord, name: &str) -> Option<usize> {
    headers.iter().position(|h| h.trim() == name)
}

fn parse_binary(field: &str, name: &str, line: u64) -> CliResult<u8> {
    match field.trim() {
        "0" => Ok(0),
        "1" => Ok(1),
        other => Err(CliError::Schema(format!("line {line}: column {name} must be 0 or 1, got {other:?}"))),
    }
}

fn parse_real(field: &str, name: &str, line: u64) -> CliResult<f64> {
    field
        .trim()
        .parse()
        .map_err(|_| CliError::Schema(format!("line {line}: column {name} is not a number: {field:?}")))
}

/// Reads a sample, keeping the covariate columns named by `x` in that order.
pub fn read_csv(path: &Path, x: &XHandling) -> CliResult<Vec<Observation>> {
    let file = std::fs::File::open(path).map_err(|e| CliError::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(file);
    let headers = reader
        .headers()
        .map_err(|e| CliError::Schema(format!("{}: {e}", path.display())))?
        .clone();
    let find = |name: &str| column(&headers, name).ok_or_else(|| CliError::Schema(format!("{}: missing column {name}", path.display())));
    let (iy, it, iz, iv) = (find("y")?, find("t")?, find("z")?, find("v")?);
    let ix = x.columns().iter().map(|c| find(c)).collect::<CliResult<Vec<_>>>()?;
    let iu = column(&headers, "u");

    let mut data = Vec::new();
    for (row, record) in reader.records().enumerate() {
        let line = row as u64 + 2;
        let record = record.map_err(|e| CliError::Schema(format!("{}: {e}", path.display())))?;
        let get = |i: usize| record.get(i).unwrap_or("");
        let mut o = Observation::new(
            parse_real(get(iy), "y", line)?,
            parse_binary(get(it), "t", line)?,
            parse_binary(get(iz), "z", line)?,
            parse_binary(get(iv), "v", line)?,
        );
        o.x = ix
            .iter()
            .zip(x.columns())
            .map(|(&i, name)| parse_real(get(i), name, line))
            .collect::<CliResult<_>>()?;
        if let Some(i) = iu {
            let u = get(i).trim();
            o.u = Some(u.parse().map_err(|_| CliError::Schema(format!("line {line}: column u must be a non-negative integer, got {u:?}")))?);
        }
        data.push(o);
    }
    if data.is_empty() {
        return Err(CliError::Schema(format!("{}: no data rows", path.display())));
    }
    Ok(data)
}

/// Serializes a simulated sample; `u` is written when present, `latent_*` on request.
pub fn write_csv<W: Write>(sample: &Sample, latent: bool, out: W) -> CliResult<()> {
    let dim = sample.observations.first().map_or(0, |o| o.x.len());
    let has_u = sample.observations.first().is_some_and(|o| o.u.is_some());
    let mut header: Vec<String> = ["y", "t", "z", "v"].map(String::from).to_vec();
    header.extend((1..=dim).map(|k| format!("x_{k}")));
    if has_u {
        header.push("u".into());
    }
    if latent {
        header.extend(["latent_tstar", "latent_ustar", "latent_y0", "latent_y1"].map(String::from));
    }
    let schema = |e: csv::Error| CliError::Schema(format!("writing CSV: {e}"));
    let mut w = csv::Writer::from_writer(out);
    w.write_record(&header).map_err(schema)?;
    for (o, l) in sample.observations.iter().zip(&sample.latent) {
        let mut rec = vec![o.y.to_string(), o.t.to_string(), o.z.to_string(), o.v.to_string()];
        rec.extend(o.x.iter().map(f64::to_string));
        if let Some(u) = o.u {
            rec.push(u.to_string());
        }
        if latent {
            rec.extend([l.tstar.to_string(), l.ustar.to_string(), l.y0.to_string(), l.y1.to_string()]);
        }
        w.write_record(&rec).map_err(schema)?;
    }
    w.flush().map_err(|e| CliError::Schema(format!("writing CSV: {e}")))
}

/// Population quantities of a DGP, as written by `simulate --oracle-moments`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PopulationInput {
    pub schema_version: u32,
    pub source: String,
    #[serde(default)]
    pub moments: Option<MomentVector>,
    /// Covariance of `sqrt(n) (m̂ - m)` for a sample of size `n`.
    #[serde(default)]
    pub covariance: Option<MomentCovariance>,
    #[serde(default)]
    pub tables: Option<JointTables>,
    /// `Pr(Z=1|V=v)`.
    #[serde(default)]
    pub pr_z_given_v: Option<[f64; 2]>,
    /// `Pr(V=1)`.
    #[serde(default)]
    pub pr_v: Option<f64>,
}

/// Reads population quantities, bare or inside a `simulate --oracle-moments` report.
pub fn read_population(path: &Path) -> CliResult<PopulationInput> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    let schema = |e: serde_json::Error| CliError::Schema(format!("{}: {e}", path.display()));
    let mut value: serde_json::Value = serde_json::from_str(&text).map_err(schema)?;
    if let Some(result) = value.get_mut("result") {
        value = result.take();
    }
    let pop: PopulationInput = serde_json::from_value(value).map_err(schema)?;
    if pop.schema_version != POPULATION_SCHEMA_VERSION {
        return Err(CliError::Schema(format!(
            "{}: schema_version {} is not supported (expected {POPULATION_SCHEMA_VERSION})",
            path.display(),
            pop.schema_version
        )));
    }
    Ok(pop)
}

/// Empirical `Pr(Z=1|V=v)` and `Pr(V=1)`.
pub fn instrument_shares(data: &[Observation]) -> ([f64; 2], f64) {
    let mut n = [0usize; 2];
    let mut z1 = [0usize; 2];
    for o in data {
        n[o.v as usize] += 1;
        z1[o.v as usize] += o.z as usize;
    }
    let share = |v: usize| if n[v] > 0 { z1[v] as f64 / n[v] as f64 } else { f64::NAN };
    ([share(0), share(1)], n[1] as f64 / data.len() as f64)
}

pub fn is_json(path: &Path) -> bool {
    path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json"))
}
