use std::path::PathBuf;

use thiserror::Error;

use crate::params::ParamError;
use crate::sim::SimError;
use crate::solver::SolverError;
use crate::value::ValueError;

/// Any failure of the pipeline, tagged with the stage it came from.
#[derive(Debug, Error)]
pub enum Error {
    #[error("market-params: {0}")]
    Params(#[from] ParamError),
    #[error("free-boundary-solver: {0}")]
    Solver(#[from] SolverError),
    #[error("value-function: {0}")]
    Value(#[from] ValueError),
    #[error("path-simulator: {0}")]
    Sim(#[from] SimError),
    #[error("config: {0}")]
    Config(String),
    #[error("io: {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
