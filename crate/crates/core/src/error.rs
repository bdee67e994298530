use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("dimension mismatch for {what}: expected {expected}, got {got}")]
    Dimension {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("inadmissible input at step {step}: {detail}")]
    Admissibility { step: usize, detail: String },

    #[error("parameter error ({condition}): {detail}")]
    Parameter {
        condition: &'static str,
        detail: String,
    },

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("query {point:?} outside grid bounds in dimension {dim}")]
    OutOfRange { dim: usize, point: Vec<f64> },

    #[error("no admissible input at node {node} (state {state:?}, tau {tau})")]
    EmptyInputs {
        node: usize,
        state: Vec<f64>,
        tau: u64,
    },

    #[error("value iteration did not converge in {iterations} iterations (last residual {residual:e})")]
    NonConvergence { iterations: usize, residual: f64 },

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn param(condition: &'static str, detail: impl Into<String>) -> Self {
        Error::Parameter {
            condition,
            detail: detail.into(),
        }
    }
}
