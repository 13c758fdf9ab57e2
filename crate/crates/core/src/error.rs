use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed row at line {line}: {reason}")]
    MalformedRow { line: usize, reason: String },

    #[error("missing cell: unit {unit}, year {year}, variable {variable}")]
    MissingCell {
        unit: String,
        year: i32,
        variable: String,
    },

    #[error("unknown variable `{0}`")]
    UnknownVariable(String),

    #[error("variable `{0}` already exists with different values")]
    VariableExists(String),

    #[error("division by zero at unit {unit}, year {year}")]
    DivisionByZero { unit: String, year: i32 },

    #[error("education shares sum to {0}, expected 1")]
    SharesDoNotSumToOne(f64),

    #[error("unit filter selected no units")]
    EmptySelection,

    #[error("invalid metadata: {0}")]
    InvalidMetadata(String),

    #[error("indicator `{0}` has max == min over the sample")]
    DegenerateIndicator(String),

    #[error("indicator `{0}` is missing from the panel")]
    MissingIndicator(String),

    #[error("indicator `{0}` sums to zero over all rows")]
    AllZeroIndicator(String),

    #[error("every indicator has zero divergence (entropy 1)")]
    AllIndicatorsUninformative,

    #[error("indicator system `{0}` carries no published weights")]
    NoPublishedWeights(String),

    #[error("linear program is infeasible")]
    Infeasible,

    #[error("linear program is unbounded")]
    Unbounded,

    #[error("simplex iteration limit ({0}) reached")]
    IterationLimit(usize),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("non-positive data: {0}")]
    NonPositiveData(String),

    #[error("units {0} and {1} share a centroid")]
    CoincidentCentroids(String, String),

    #[error("vector is constant")]
    ConstantVector,

    #[error("singular design; collinear columns: {}", .columns.join(", "))]
    SingularDesign { columns: Vec<String> },

    #[error("all variation absorbed by fixed effects for: {}", .0.join(", "))]
    AllVariationAbsorbed(Vec<String>),

    #[error("GMM weighting matrix is singular")]
    SingularWeighting,

    #[error("model is underidentified: {instruments} instruments for {endogenous} endogenous regressors")]
    Underidentified {
        instruments: usize,
        endogenous: usize,
    },

    #[error("non-positive input: {0}")]
    NonPositiveInput(String),

    #[error("spatial coefficient {rho} sits at the search boundary")]
    RhoAtBoundary { rho: f64 },

    #[error("I - rho W is near singular at rho = {rho}")]
    NearSingularTransform { rho: f64 },

    #[error("invalid specification: {0}")]
    SpecInvalid(String),

    #[error("stage `{0}` has not been run")]
    StageNotRun(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("stage `{stage}` failed: {source}")]
    StageFailed {
        stage: String,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// Variant name, for machine-readable error reports.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Io { .. } => "Io",
            Error::MalformedRow { .. } => "MalformedRow",
            Error::MissingCell { .. } => "MissingCell",
            Error::UnknownVariable { .. } => "UnknownVariable",
            Error::VariableExists { .. } => "VariableExists",
            Error::DivisionByZero { .. } => "DivisionByZero",
            Error::SharesDoNotSumToOne { .. } => "SharesDoNotSumToOne",
            Error::EmptySelection => "EmptySelection",
            Error::InvalidMetadata { .. } => "InvalidMetadata",
            Error::DegenerateIndicator { .. } => "DegenerateIndicator",
            Error::MissingIndicator { .. } => "MissingIndicator",
            Error::AllZeroIndicator { .. } => "AllZeroIndicator",
            Error::AllIndicatorsUninformative => "AllIndicatorsUninformative",
            Error::NoPublishedWeights { .. } => "NoPublishedWeights",
            Error::Infeasible => "Infeasible",
            Error::Unbounded => "Unbounded",
            Error::IterationLimit { .. } => "IterationLimit",
            Error::DimensionMismatch { .. } => "DimensionMismatch",
            Error::NonPositiveData { .. } => "NonPositiveData",
            Error::CoincidentCentroids { .. } => "CoincidentCentroids",
            Error::ConstantVector => "ConstantVector",
            Error::SingularDesign { .. } => "SingularDesign",
            Error::AllVariationAbsorbed { .. } => "AllVariationAbsorbed",
            Error::SingularWeighting => "SingularWeighting",
            Error::Underidentified { .. } => "Underidentified",
            Error::NonPositiveInput { .. } => "NonPositiveInput",
            Error::RhoAtBoundary { .. } => "RhoAtBoundary",
            Error::NearSingularTransform { .. } => "NearSingularTransform",
            Error::SpecInvalid { .. } => "SpecInvalid",
            Error::StageNotRun { .. } => "StageNotRun",
            Error::Config { .. } => "Config",
            Error::StageFailed { .. } => "StageFailed",
            Error::Json { .. } => "Json",
            Error::Csv { .. } => "Csv",
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
