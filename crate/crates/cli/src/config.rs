//! Command-line flags, TOML config files and the resolved [`RunConfig`].
//!
//! Precedence: flags, then the config file, then defaults.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::{Args, Parser, Subcommand, ValueEnum};
use misclass_core::moments::KernelFamily;
use misclass_core::Tolerances;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

pub const DEFAULT_SEED: u64 = 1;
pub const DEFAULT_N: usize = 1000;
pub const DEFAULT_REPS: usize = 100;

#[derive(Debug, Parser)]
#[command(name = "misclass", version, about = "Identification and estimation with a misclassified binary regressor")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CommandKind {
    Identify,
    Estimate,
    Simulate,
    Montecarlo,
    Effects,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Closed-form identification from data or population moments.
    Identify(Flags),
    /// Minimum-distance estimation with delta-method standard errors.
    Estimate(Flags),
    /// Draw a sample (CSV) or population moments (JSON) from a DGP spec.
    Simulate(Flags),
    /// Repeated simulate-and-estimate runs with coverage summaries.
    Montecarlo(Flags),
    /// LATE, ATE, TT and TUT.
    Effects(Flags),
}

impl Command {
    pub fn split(self) -> (CommandKind, Flags) {
        match self {
            Command::Identify(f) => (CommandKind::Identify, f),
            Command::Estimate(f) => (CommandKind::Estimate, f),
            Command::Simulate(f) => (CommandKind::Simulate, f),
            Command::Montecarlo(f) => (CommandKind::Montecarlo, f),
            Command::Effects(f) => (CommandKind::Effects, f),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    #[default]
    Prop1,
    Prop2,
    Mixture,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelArg {
    Gaussian,
    Epanechnikov,
}

impl From<KernelArg> for KernelFamily {
    fn from(k: KernelArg) -> Self {
        match k {
            KernelArg::Gaussian => KernelFamily::Gaussian,
            KernelArg::Epanechnikov => KernelFamily::Epanechnikov,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TolPreset {
    Identification,
    Estimation,
}

/// How covariates enter: ignored, matched exactly, or smoothed with a kernel.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum XHandling {
    #[default]
    None,
    Discrete(Vec<String>),
    Kernel(Vec<String>),
}

impl XHandling {
    pub fn columns(&self) -> &[String] {
        match self {
            XHandling::None => &[],
            XHandling::Discrete(c) | XHandling::Kernel(c) => c,
        }
    }
}

impl FromStr for XHandling {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        if s == "none" {
            return Ok(XHandling::None);
        }
        let (kind, cols) = s.split_once(':').ok_or_else(|| format!("expected none, discrete:<cols> or kernel:<cols>, got {s:?}"))?;
        let cols: Vec<String> = cols.split(',').map(|c| c.trim().to_owned()).filter(|c| !c.is_empty()).collect();
        if cols.is_empty() {
            return Err(format!("no covariate columns in {s:?}"));
        }
        match kind {
            "discrete" => Ok(XHandling::Discrete(cols)),
            "kernel" => Ok(XHandling::Kernel(cols)),
            other => Err(format!("unknown covariate handling {other:?}")),
        }
    }
}

impl fmt::Display for XHandling {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            XHandling::None => write!(f, "none"),
            XHandling::Discrete(c) => write!(f, "discrete:{}", c.join(",")),
            XHandling::Kernel(c) => write!(f, "kernel:{}", c.join(",")),
        }
    }
}

impl TryFrom<String> for XHandling {
    type Error = String;
    fn try_from(s: String) -> Result<Self, String> {
        s.parse()
    }
}

impl From<XHandling> for String {
    fn from(x: XHandling) -> String {
        x.to_string()
    }
}

/// Individual tolerance overrides.
#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TolOverrides {
    #[arg(long = "tol-max-cond")]
    pub max_cond: Option<f64>,
    #[arg(long = "tol-eig-gap")]
    pub eig_gap: Option<f64>,
    #[arg(long = "tol-label")]
    pub label: Option<f64>,
    #[arg(long = "tol-prob")]
    pub prob: Option<f64>,
    #[arg(long = "tol-disc")]
    pub disc: Option<f64>,
    #[arg(long = "tol-cross")]
    pub cross: Option<f64>,
    #[arg(long = "tol-relevance")]
    pub relevance: Option<f64>,
}

impl TolOverrides {
    fn apply(&self, t: &mut Tolerances) {
        let pairs = [
            (self.max_cond, &mut t.max_cond),
            (self.eig_gap, &mut t.eig_gap),
            (self.label, &mut t.label),
            (self.prob, &mut t.prob),
            (self.disc, &mut t.disc),
            (self.cross, &mut t.cross),
            (self.relevance, &mut t.relevance),
        ];
        for (value, slot) in pairs {
            if let Some(v) = value {
                *slot = v;
            }
        }
    }
}

/// Flags shared by every subcommand.
#[derive(Debug, Clone, Default, Args)]
pub struct Flags {
    /// TOML file with defaults for any of the flags below.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Data CSV, population JSON, or DGP spec JSON (simulate, montecarlo).
    #[arg(long, short)]
    pub input: Option<PathBuf>,
    /// Report destination; stdout when absent.
    #[arg(long, short)]
    pub output: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub mode: Option<Mode>,
    /// none | discrete:<cols> | kernel:<cols>
    #[arg(long)]
    pub x: Option<XHandling>,
    /// Covariate query point, comma separated.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub at: Option<Vec<f64>>,
    #[arg(long)]
    pub bandwidth: Option<f64>,
    #[arg(long, value_enum)]
    pub kernel: Option<KernelArg>,
    /// Number of latent types in mixture mode.
    #[arg(long)]
    pub ku: Option<usize>,
    /// Outcome partition cut points, comma separated.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub partition: Option<Vec<f64>>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub reps: Option<usize>,
    /// Sample size for simulate and montecarlo.
    #[arg(long)]
    pub n: Option<usize>,
    /// Worker threads for montecarlo; results do not depend on it.
    #[arg(long)]
    pub threads: Option<usize>,
    #[arg(long, value_enum)]
    pub tol_preset: Option<TolPreset>,
    #[command(flatten)]
    pub tol: TolOverrides,
    /// Add V-pooled effects.
    #[arg(long)]
    pub pooled: bool,
    /// Weight the minimum-distance objective by the inverse moment covariance.
    #[arg(long)]
    pub weighted: bool,
    /// Add latent_* columns to simulated CSV.
    #[arg(long)]
    pub latent_dump: bool,
    /// Write population moments (JSON) instead of a sample.
    #[arg(long)]
    pub oracle_moments: bool,
}

/// Contents of a `--config` file.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub input: Option<PathBuf>,
    pub output: Option<PathBuf>,
    pub mode: Option<Mode>,
    pub x: Option<XHandling>,
    pub at: Option<Vec<f64>>,
    pub bandwidth: Option<f64>,
    pub kernel: Option<KernelArg>,
    pub ku: Option<usize>,
    pub partition: Option<Vec<f64>>,
    pub seed: Option<u64>,
    pub reps: Option<usize>,
    pub n: Option<usize>,
    pub threads: Option<usize>,
    pub tol_preset: Option<TolPreset>,
    #[serde(default)]
    pub tol: TolOverrides,
    #[serde(default)]
    pub pooled: bool,
    #[serde(default)]
    pub weighted: bool,
    #[serde(default)]
    pub latent_dump: bool,
    #[serde(default)]
    pub oracle_moments: bool,
}

impl FileConfig {
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        toml::from_str(&text).map_err(|e| CliError::Schema(format!("{}: {e}", path.display())))
    }
}

/// Fully resolved settings; echoed in every report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub command: CommandKind,
    pub input: Option<PathBuf>,
    pub output: Option<PathBuf>,
    pub mode: Mode,
    pub x: XHandling,
    pub at: Vec<f64>,
    pub kernel: KernelFamily,
    pub bandwidth: Option<f64>,
    pub tolerances: Tolerances,
    pub k_u: Option<usize>,
    pub partition: Option<Vec<f64>>,
    pub seed: u64,
    pub reps: usize,
    pub n: usize,
    /// Left out of reports: output never depends on it.
    #[serde(skip)]
    pub threads: Option<usize>,
    pub pooled: bool,
    pub weighted: bool,
    pub latent_dump: bool,
    pub oracle_moments: bool,
}

fn is_json(path: Option<&Path>) -> bool {
    path.and_then(Path::extension).is_some_and(|e| e.eq_ignore_ascii_case("json"))
}

impl RunConfig {
    /// Merges flags over the optional config file over defaults.
    pub fn resolve(command: CommandKind, flags: Flags) -> CliResult<Self> {
        let file = match &flags.config {
            Some(p) => FileConfig::load(p)?,
            None => FileConfig::default(),
        };
        let input = flags.input.or(file.input);
        let preset = flags.tol_preset.or(file.tol_preset).unwrap_or_else(|| {
            let population = matches!(command, CommandKind::Identify | CommandKind::Effects) && is_json(input.as_deref());
            if population {
                TolPreset::Identification
            } else {
                TolPreset::Estimation
            }
        });
        let mut tolerances = match preset {
            TolPreset::Identification => Tolerances::identification(),
            TolPreset::Estimation => Tolerances::estimation(),
        };
        file.tol.apply(&mut tolerances);
        flags.tol.apply(&mut tolerances);

        let cfg = RunConfig {
            command,
            input,
            output: flags.output.or(file.output),
            mode: flags.mode.or(file.mode).unwrap_or_default(),
            x: flags.x.or(file.x).unwrap_or_default(),
            at: flags.at.or(file.at).unwrap_or_default(),
            kernel: flags.kernel.or(file.kernel).map(Into::into).unwrap_or_default(),
            bandwidth: flags.bandwidth.or(file.bandwidth),
            tolerances,
            k_u: flags.ku.or(file.ku),
            partition: flags.partition.or(file.partition),
            seed: flags.seed.or(file.seed).unwrap_or(DEFAULT_SEED),
            reps: flags.reps.or(file.reps).unwrap_or(DEFAULT_REPS),
            n: flags.n.or(file.n).unwrap_or(DEFAULT_N),
            threads: flags.threads.or(file.threads),
            pooled: flags.pooled || file.pooled,
            weighted: flags.weighted || file.weighted,
            latent_dump: flags.latent_dump || file.latent_dump,
            oracle_moments: flags.oracle_moments || file.oracle_moments,
        };
        cfg.check()?;
        Ok(cfg)
    }

    fn check(&self) -> CliResult<()> {
        let bad = |msg: &str| Err(CliError::Schema(msg.into()));
        if self.input.is_none() {
            return bad("--input is required");
        }
        match &self.x {
            XHandling::Kernel(cols) | XHandling::Discrete(cols) if self.at.len() != cols.len() => {
                return bad("--at needs one value per covariate column");
            }
            _ => {}
        }
        if self.mode == Mode::Mixture && !matches!(self.x, XHandling::None) {
            return bad("mixture mode does not take covariates");
        }
        if self.k_u == Some(0) {
            return bad("--ku must be at least 1");
        }
        if let Some(b) = self.bandwidth {
            if !(b > 0.0 && b.is_finite()) {
                return bad("--bandwidth must be positive");
            }
        }
        if self.threads == Some(0) {
            return bad("--threads must be at least 1");
        }
        if matches!(self.command, CommandKind::Simulate | CommandKind::Montecarlo) && self.n == 0 && !self.oracle_moments {
            return bad("--n must be positive");
        }
        if self.command == CommandKind::Montecarlo && self.reps == 0 {
            return bad("--reps must be positive");
        }
        Ok(())
    }
}
