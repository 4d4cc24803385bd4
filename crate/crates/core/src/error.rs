use thiserror::Error;

/// Errors raised anywhere in the identification and estimation pipeline.
///
/// Every variant has a stable name (see [`Error::name`]) that is written
/// into JSON reports, so callers can match on failures without parsing the
/// human-readable message.
#[derive(Debug, Clone, Error, PartialEq)]
pub enum Error {
    #[error("cell (z={z}, v={v}) has {count} observations; at least {min} required")]
    EmptyCell { z: u8, v: u8, count: usize, min: usize },

    #[error("non-finite value in input: {0}")]
    NonFiniteInput(String),

    #[error("total kernel weight in cell (z={z}, v={v}) is {mass:e}, below the floor")]
    ZeroKernelMass { z: u8, v: u8, mass: f64 },

    #[error("bandwidth must be positive and finite, got {0}")]
    BadBandwidth(f64),

    #[error("covariate coordinate {coord} is constant")]
    DegenerateX { coord: usize },

    #[error("eigenvalues are not distinct (gap {gap:e})")]
    EigenvaluesNotDistinct { gap: f64 },

    #[error("matrix has complex eigenvalues (discriminant or imaginary part {value:e})")]
    ComplexEigenvalues { value: f64 },

    #[error("eigenvector first entry {value:e} too small to normalize")]
    DegenerateEigenvector { value: f64 },

    #[error("moment matrix for cell (z={z}, v={v}) is singular (condition number {cond:e})")]
    SingularQ { z: u8, v: u8, cond: f64 },

    #[error("eigenvector labels are ambiguous at z={z} (second-row gap {gap:e})")]
    LabelingAmbiguous { z: u8, gap: f64 },

    #[error("recovered probability {value} for {what} lies outside [0, 1]")]
    InvalidProbability { what: String, value: f64 },

    #[error("instrument is irrelevant at v={v}: Pr(T*=1|Z,V) difference {gap:e}")]
    SingularIVMatrix { v: u8, gap: f64 },

    #[error("sample has {distinct} distinct values; {needed} needed")]
    TooFewDistinctValues { distinct: usize, needed: usize },

    #[error("partition cell {cell} receives no mass in cell (z={z}, v={v})")]
    PartitionMismatch { z: u8, v: u8, cell: usize },

    #[error("no labeling makes the emission matrix at z={z} strictly dominant (best margin {margin:e})")]
    NoDominantLabeling { z: u8, margin: f64 },

    #[error("instrument is irrelevant at u={u}, v={v} (gap {gap:e})")]
    IrrelevantInstrumentAtU { u: usize, v: u8, gap: f64 },

    #[error("Z=0 and Z=1 reconstructions disagree by {deviation:e}")]
    CrossCheckFailed { deviation: f64 },

    #[error("minimum-distance initialization failed: {0}")]
    InitializationFailed(String),

    #[error("optimizer did not converge in {iterations} iterations")]
    NoConvergence { iterations: usize },

    #[error("Jacobian of the moment map is singular (condition number {cond:e})")]
    SingularF { cond: f64 },

    #[error("Wald denominator is zero ({value:e})")]
    ZeroDenominator { value: f64 },

    #[error("Pr(T*={t}|V={v}) = {mass:e} is too small to condition on")]
    DegenerateTreatmentMass { t: u8, v: u8, mass: f64 },

    #[error("invalid DGP spec: {0}")]
    InvalidSpec(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),
}

impl Error {
    /// Stable identifier used in reports.
    pub fn name(&self) -> &'static str {
        match self {
            Error::EmptyCell { .. } => "EmptyCell",
            Error::NonFiniteInput(_) => "NonFiniteInput",
            Error::ZeroKernelMass { .. } => "ZeroKernelMass",
            Error::BadBandwidth(_) => "BadBandwidth",
            Error::DegenerateX { .. } => "DegenerateX",
            Error::EigenvaluesNotDistinct { .. } => "EigenvaluesNotDistinct",
            Error::ComplexEigenvalues { .. } => "ComplexEigenvalues",
            Error::DegenerateEigenvector { .. } => "DegenerateEigenvector",
            Error::SingularQ { .. } => "SingularQ",
            Error::LabelingAmbiguous { .. } => "LabelingAmbiguous",
            Error::InvalidProbability { .. } => "InvalidProbability",
            Error::SingularIVMatrix { .. } => "SingularIVMatrix",
            Error::TooFewDistinctValues { .. } => "TooFewDistinctValues",
            Error::PartitionMismatch { .. } => "PartitionMismatch",
            Error::NoDominantLabeling { .. } => "NoDominantLabeling",
            Error::IrrelevantInstrumentAtU { .. } => "IrrelevantInstrumentAtU",
            Error::CrossCheckFailed { .. } => "CrossCheckFailed",
            Error::InitializationFailed(_) => "InitializationFailed",
            Error::NoConvergence { .. } => "NoConvergence",
            Error::SingularF { .. } => "SingularF",
            Error::ZeroDenominator { .. } => "ZeroDenominator",
            Error::DegenerateTreatmentMass { .. } => "DegenerateTreatmentMass",
            Error::InvalidSpec(_) => "InvalidSpec",
            Error::InvalidInput(_) => "InvalidInput",
        }
    }

    /// True for malformed inputs (bad values, bad specs, bad configuration),
    /// false for mathematical or identification failures.
    pub fn is_input_error(&self) -> bool {
        matches!(
            self,
            Error::NonFiniteInput(_)
                | Error::BadBandwidth(_)
                | Error::InvalidSpec(_)
                | Error::InvalidInput(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
