//! Error type shared by every module of the crate.

use thiserror::Error;

#[derive(Error, Debug)]
pub enum RpsError {
    /// Invalid user-facing parameter (mesh divisions, layer counts, config fields).
    #[error("configuration error: {0}")]
    Config(String),

    /// A coefficient field evaluated to a non-positive value.
    #[error("coefficient error: {0}")]
    Coefficient(String),

    #[error("index error: {what} index {index} out of range (len {len})")]
    Index {
        what: &'static str,
        index: usize,
        len: usize,
    },

    /// Mismatched meshes, operators or vector lengths.
    #[error("structural error: {0}")]
    Structure(String),

    /// Localized support contains no free fine nodes; the subproblem is
    /// fully determined by its constraints and almost certainly a
    /// configuration bug. Widening the support silently would hide it.
    #[error("degenerate support for coarse node {node}: no free fine nodes inside the subdomain")]
    DegenerateSupport { node: usize },

    #[error("solver error in {what}: residual {residual:.3e} after {iterations} iterations")]
    Solver {
        what: &'static str,
        residual: f64,
        iterations: usize,
    },

    #[error("conditioning error in {what}: estimated condition number {cond:.3e}")]
    Conditioning { what: &'static str, cond: f64 },

    #[error("measurement coverage error: {missing} coarse nodes have no measurement")]
    MeasurementCoverage { missing: usize },

    #[error("rate fit error: {0}")]
    Fit(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, RpsError>;
