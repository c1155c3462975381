use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// A parameter is outside the domain where the quantity is defined.
    #[error("invalid {param} = {value}: {reason}")]
    Domain {
        param: &'static str,
        value: f64,
        reason: &'static str,
    },

    #[error("empty region: {0}")]
    EmptyRegion(String),

    /// No closed form is known for the constant and no estimate was supplied.
    #[error("needs an estimated constant: {0}")]
    NeedsEstimatedConstant(String),

    #[error("budget exceeded: {what} needs {requested}, limit is {limit}")]
    Budget {
        what: &'static str,
        requested: u64,
        limit: u64,
    },

    #[error("exact synthesis failed: {0}")]
    Synthesis(String),

    #[error(
        "level u = {u} is too rare: predicted acceptance {predicted:.3e} < 10/{replicates}; \
         lower u or raise replicates to at least {needed}"
    )]
    TooRare {
        u: f64,
        predicted: f64,
        replicates: u64,
        needed: u64,
    },

    #[error("grid too coarse at u = {u}: step/A(u) = {ratio:.4} exceeds {limit}")]
    GridTooCoarse { u: f64, ratio: f64, limit: f64 },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

/// Returns a [`Error::Domain`] unless `ok` holds.
pub(crate) fn ensure(ok: bool, param: &'static str, value: f64, reason: &'static str) -> Result<()> {
    if ok {
        Ok(())
    } else {
        Err(Error::Domain {
            param,
            value,
            reason,
        })
    }
}
