use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("point {point:?} is outside the chart domain of flow `{flow}`")]
    Domain { flow: String, point: Vec<f64> },

    #[error("path left the chart domain at step {index}")]
    Truncation { index: usize },

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("geodesic solver did not converge (residual {residual:.3e})")]
    Geodesic { residual: f64 },

    #[error("coupling failed at step {step}: {source}")]
    Coupling {
        step: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("expression error: {0}")]
    Expr(String),

    #[error("flow definition error: {0}")]
    Definition(String),
}

impl Error {
    pub(crate) fn arg(msg: impl Into<String>) -> Self {
        Error::Argument(msg.into())
    }

    pub(crate) fn numeric(msg: impl Into<String>) -> Self {
        Error::Numeric(msg.into())
    }
}
