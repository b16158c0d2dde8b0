use thiserror::Error;

use crate::model::ValidationReport;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dataset failed validation:\n{0}")]
    Validation(ValidationReport),
    #[error(
        "no subjects occupy state {state} and remain under observation at landmark time {time}"
    )]
    NoSubjectsAtLandmark { time: f64, state: usize },
    #[error("nobody is under observation at time 0+; occupation probabilities are undefined")]
    NoInitialRiskSet,
    #[error("no grid point lies in the domain where all required risk sets are non-empty")]
    EmptySupport,
    #[error("time {0} lies outside the valid domain of the influence set")]
    OutOfDomain(f64),
    #[error("estimate {0} lies outside the domain of the transform")]
    TransformDomain(f64),
    #[error("confidence band domain is empty after restriction")]
    EmptyDomain,
    #[error("cluster {0} does not contribute members to both arms")]
    ArmMissingInCluster(String),
    #[error("the two samples share no time point with positive weight")]
    EmptyComparisonDomain,
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("replicate {index} failed: {source}")]
    Replicate {
        index: usize,
        #[source]
        source: Box<Error>,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
