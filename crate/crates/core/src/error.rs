use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// An argument lies outside the domain of the operation (time outside the
    /// horizon, infeasible initial state, malformed grid, ...).
    #[error("domain error: {0}")]
    Domain(String),

    /// Growth, Lipschitz or prox-regularity data needed by the operation were
    /// not supplied.
    #[error("missing data: {0}")]
    DataMissing(String),

    /// A user function returned a non-finite value.
    #[error("evaluation error: {0}")]
    Evaluation(String),

    #[error("point at distance >= {bound:.6e} exceeds the prox-regularity radius {radius:.6e}")]
    ReachExceeded { bound: f64, radius: f64 },

    #[error("projection did not converge after {iterations} iterations (residual {residual:.3e})")]
    ProjectionFailure { iterations: usize, residual: f64 },

    #[error(
        "step too coarse at k={k}, t={t}: drift {drift:.3e} + variation {variation:.3e} \
         reaches half the prox radius {radius:.3e}; use a smaller step"
    )]
    StepTooCoarse {
        k: usize,
        t: f64,
        drift: f64,
        variation: f64,
        radius: f64,
    },

    #[error("step {k} (t = {t}) failed: {source}")]
    Step {
        k: usize,
        t: f64,
        #[source]
        source: Box<Error>,
    },

    #[error("multiplier recovery failed at node {k}: {reason}")]
    Recovery { k: usize, reason: String },

    #[error("invalid circuit: {0}")]
    InvalidCircuit(String),

    #[error("degenerate input: {0}")]
    Degenerate(String),

    /// Configuration text could not be parsed (syntax, unknown keys,
    /// malformed expressions).
    #[error("parse error: {0}")]
    Parse(String),
}

impl Error {
    /// Whether this error came from input validation rather than from running
    /// the solver.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::Domain(_) | Error::DataMissing(_) | Error::InvalidCircuit(_)
        )
    }

    pub fn is_parse(&self) -> bool {
        matches!(self, Error::Parse(_))
    }
}

pub(crate) fn check_finite(value: f64, what: &str) -> Result<f64> {
    if value.is_finite() {
        Ok(value)
    } else {
        Err(Error::Evaluation(format!("{what} is not finite ({value})")))
    }
}
