use thiserror::Error;

use crate::elliptic::SolveReport;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("field mismatch: {0}")]
    FieldMismatch(String),

    #[error("non-finite value at node {node}")]
    NonFinite { node: usize },

    #[error("point {point:?} lies outside the domain")]
    OutsideDomain { point: Vec<f64> },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("linear solver did not converge: residual {:.3e} after {} iterations (tol {:.1e})", .report.final_residual, .report.iterations, .report.tolerance)]
    LinearSolve { report: SolveReport },

    #[error("coefficient {coefficient} violates ellipticity: value {value:.6e} < {bound:.6e} at p={p:?}, s={s}, x={x:?}")]
    Ellipticity {
        coefficient: String,
        value: f64,
        bound: f64,
        p: Vec<f64>,
        s: f64,
        x: Vec<f64>,
    },

    #[error("temperature inversion failed to bracket s={target} after {doublings} doublings")]
    BracketExpansion { target: f64, doublings: usize },

    #[error("fixed-point iteration did not converge after {iterations} outer iterations (last change {last_change:.3e})")]
    PicardNotConverged {
        iterations: usize,
        last_change: f64,
        history: Vec<f64>,
    },

    #[error("constant-boundary closed form requires a source-free model")]
    SourcesPresent,

    #[error("expression error at offset {offset}: {message}")]
    Expression { offset: usize, message: String },

    #[error("identifiability failure: Jacobian rank {rank} < {params}; null direction {null_direction:?}")]
    Identifiability {
        rank: usize,
        params: usize,
        null_direction: Vec<f64>,
    },

    #[error("monotone interpolation check failed: slope {slope:.3e} below {bound:.3e}")]
    Monotonicity { slope: f64, bound: f64 },

    #[error("io: {0}")]
    Io(#[from] std::io::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("parse: {0}")]
    Parse(String),
}
