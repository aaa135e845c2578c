use thiserror::Error;

/// Errors raised by model construction, integration and analysis.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum GridError {
    #[error("invalid topology: {0}")]
    Topology(String),

    #[error("invariant `{name}` violated: {detail}")]
    Invariant { name: &'static str, detail: String },

    #[error("dimension mismatch for {what}: expected {expected}, got {got}")]
    Dimension {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("voltage guard tripped at node {node}: V = {voltage} V (threshold {threshold} V)")]
    VoltageGuard {
        node: usize,
        voltage: f64,
        threshold: f64,
    },

    #[error("non-finite state at t = {time} s ({detail})")]
    NonFinite { time: f64, detail: String },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("Newton iteration did not converge after {iterations} iterations (residual {residual:.3e})")]
    NoConvergence { iterations: usize, residual: f64 },

    #[error("singular Jacobian at iteration {iteration}")]
    SingularJacobian { iteration: usize },

    #[error("empty evaluation window [{start}, {end}]")]
    EmptyWindow { start: f64, end: f64 },

    #[error("scenario error: {0}")]
    Scenario(String),
}

pub type Result<T, E = GridError> = std::result::Result<T, E>;

pub(crate) fn check_len(what: &'static str, expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(GridError::Dimension {
            what,
            expected,
            got,
        })
    }
}

pub(crate) fn check_positive(name: &'static str, values: &[f64]) -> Result<()> {
    match values.iter().position(|v| !(*v > 0.0) || !v.is_finite()) {
        None => Ok(()),
        Some(idx) => Err(GridError::Invariant {
            name,
            detail: format!("entry {idx} = {} must be strictly positive", values[idx]),
        }),
    }
}
