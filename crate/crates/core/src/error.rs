use thiserror::Error;

/// Failures raised by the operator layer, the regularized path and the flow.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum DsmError {
    #[error("usage error: {0}")]
    Usage(String),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("{what} produced a non-finite value in component {component}")]
    NonFinite {
        what: &'static str,
        component: usize,
    },

    #[error(
        "shifted operator is singular at |a| = {modulus:e} (condition estimate {condition:e}){}; increase r(0)",
        at_time(*.t)
    )]
    ResolventSingular {
        modulus: f64,
        condition: f64,
        t: Option<f64>,
    },

    #[error("Newton iteration stalled with residual {residual:e} after {iterations} iterations")]
    NoConvergence { residual: f64, iterations: usize },

    #[error("the norm is not differentiable at the origin")]
    NondifferentiablePoint,

    #[error("every sampled difference is below {threshold:e}")]
    DegenerateSample { threshold: f64 },

    #[error("non-finite value at t = {t}")]
    NonFiniteAt { t: f64 },
}

fn at_time(t: Option<f64>) -> String {
    t.map(|t| format!(" at t = {t}")).unwrap_or_default()
}

impl DsmError {
    pub(crate) fn usage(msg: impl Into<String>) -> Self {
        DsmError::Usage(msg.into())
    }

    /// Attach the flow time to a resolvent failure.
    pub fn at(self, time: f64) -> Self {
        match self {
            DsmError::ResolventSingular {
                modulus, condition, ..
            } => DsmError::ResolventSingular {
                modulus,
                condition,
                t: Some(time),
            },
            other => other,
        }
    }
}

pub type Result<T> = std::result::Result<T, DsmError>;
