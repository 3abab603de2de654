use std::path::PathBuf;

use thiserror::Error;

/// Errors produced while loading data, fitting nuisance models or solving
/// estimating equations.
#[derive(Debug, Error)]
pub enum Error {
    #[error("{file}: row {row}: {message}")]
    Data {
        file: String,
        row: usize,
        message: String,
    },

    #[error("invalid cohort: {0}")]
    InvalidCohort(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("no events of interest ({0}) in cohort")]
    NoEvents(&'static str),

    #[error("Cox fit did not converge after {iterations} iterations (max |score| = {score_norm:e})")]
    CoxNonConvergence { iterations: usize, score_norm: f64 },

    #[error("Cox fit diverged: |coefficient| reached {magnitude:.3} at iteration {iteration} (likely separation)")]
    CoxDivergence { iteration: usize, magnitude: f64 },

    #[error("singular information matrix in {0}")]
    Singular(&'static str),

    #[error("empty risk set at event time {0}")]
    EmptyRiskSet(f64),

    #[error("positivity violation for subject {id}: hazard increment {increment} >= 1 at time {time}")]
    Positivity { id: String, time: f64, increment: f64 },

    #[error("no observed failures in cohort")]
    NoFailures,

    #[error("estimating equation is identically zero: {0}")]
    NonIdentifiable(String),

    #[error("rank-deficient design in {0}")]
    RankDeficient(&'static str),

    #[error("no root found (best max|G| = {best_residual:e} after {iterations} iterations from {starts} starts)")]
    NoRoot {
        best_residual: f64,
        iterations: usize,
        starts: usize,
    },

    #[error("IRLS did not converge in {0} iterations")]
    IrlsDivergence(usize),

    #[error("{failed} of {groups} jackknife replicates failed (limit 5%)")]
    JackknifeFailures { failed: usize, groups: usize },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for problems with the input data or configuration as opposed to
    /// numerical failure of an estimator.
    pub fn is_data_error(&self) -> bool {
        matches!(
            self,
            Error::Data { .. }
                | Error::InvalidCohort(_)
                | Error::Config(_)
                | Error::Csv(_)
                | Error::Json(_)
                | Error::Io { .. }
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
