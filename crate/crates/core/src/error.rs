use thiserror::Error;

/// Errors raised by data ingestion, model fitting and estimation.
#[derive(Debug, Error)]
pub enum Error {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("missing column `{0}`")]
    MissingColumn(String),

    #[error("row {row}: column `{column}` must be 0 or 1, got `{value}`")]
    NonBinaryValue {
        row: usize,
        column: String,
        value: String,
    },

    #[error("row {row}: infection time must be positive, got {value}")]
    NonPositiveTime { row: usize, value: f64 },

    #[error("row {row}: strain label present although delta = 0")]
    StrainPresentWhenDeltaZero { row: usize },

    #[error("row {row}: strain label missing although delta = 1")]
    StrainAbsentWhenDeltaOne { row: usize },

    #[error("row {row}: column `{column}` is not a finite number: `{value}`")]
    NonFinite {
        row: usize,
        column: String,
        value: String,
    },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("empty dataset")]
    EmptyDataset,

    #[error("one vaccination arm is empty among the rows used for fitting")]
    DegenerateArm,

    #[error("strain missingness indicator is constant")]
    DegenerateMissingness,

    #[error("strain label is constant among observed strains")]
    DegenerateStrain,

    #[error("conditional variances are both zero")]
    DegenerateVariance,

    #[error("matrix is singular (condition number {condition:e})")]
    SingularMatrix { condition: f64 },

    #[error("all observation weights are zero")]
    AllWeightsZero,

    #[error("pseudo-outcome {value} at row {row} lies outside [0, 1]")]
    InvalidPseudoOutcome { row: usize, value: f64 },

    #[error("invalid probability {0}")]
    InvalidProbability(f64),

    #[error("optimizer failed to converge after {iterations} iterations")]
    NonConvergence { iterations: usize },

    #[error("TMLE did not solve the score equation within {iterations} iterations")]
    NotConverged { iterations: usize },

    #[error("model is ill-defined: {0}")]
    IllDefined(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid config: {0}")]
    Config(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Process exit status for the command-line front end: 2 for invalid
    /// input or configuration, 3 for an unsolved score equation, 4 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::NotConverged { .. } => 3,
            Error::Io(_)
            | Error::Csv(_)
            | Error::Json(_)
            | Error::MissingColumn(_)
            | Error::NonBinaryValue { .. }
            | Error::NonPositiveTime { .. }
            | Error::StrainPresentWhenDeltaZero { .. }
            | Error::StrainAbsentWhenDeltaOne { .. }
            | Error::NonFinite { .. }
            | Error::DimensionMismatch { .. }
            | Error::EmptyDataset
            | Error::DegenerateArm
            | Error::DegenerateMissingness
            | Error::DegenerateStrain
            | Error::InvalidArgument(_)
            | Error::Config(_) => 2,
            _ => 4,
        }
    }
}
