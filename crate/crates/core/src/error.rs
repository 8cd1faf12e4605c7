use thiserror::Error;

use crate::engine::Sector;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("unsupported dissipation sector: alpha = {0} (supported range is 0 < alpha < 1)")]
    UnsupportedSector(f64),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("eigensolver failed in sector {sector:?} (dimension {dim})")]
    Eigensolver { sector: Sector, dim: usize },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("nonphysical density matrix: |<sigma>| = {0} exceeds 1")]
    Nonphysical(f64),

    #[error(
        "run not converged after {n_m} iterations; pass an explicit override to read observables"
    )]
    NotConverged { n_m: usize },

    #[error("no interior maximum found: {0}")]
    NoInteriorMaximum(String),

    #[error("oracle limited to at most {max} sites, got {got}")]
    OracleTooLarge { max: usize, got: usize },

    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),

    #[error("serialization error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Process exit status used by the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Io(_) => 3,
            _ => 1,
        }
    }
}
