use thiserror::Error;

pub type Result<T> = std::result::Result<T, SkfError>;

#[derive(Debug, Error)]
pub enum SkfError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("infeasible dimensions: {0}")]
    InfeasibleDimension(String),

    #[error("matrix is not positive semidefinite: smallest eigenvalue {min_eigenvalue:e} (scale {scale:e})")]
    NotPsd { min_eigenvalue: f64, scale: f64 },

    #[error("invalid separation vector s: {0}")]
    InvalidSeparation(String),

    #[error("rank deficiency: {0}")]
    RankDeficient(String),

    #[error("solver did not converge at lambda = {lambda:e}: worst KKT residual {residual:e}")]
    Convergence { lambda: f64, residual: f64 },

    #[error("too many failed replicates: {failed} of {total}")]
    TooManyFailures { failed: usize, total: usize },

    #[error("config error: {0}")]
    Config(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error in {path}: {message}")]
    Parse { path: String, message: String },
}

impl SkfError {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        SkfError::InvalidArgument(msg.into())
    }

    pub(crate) fn infeasible(msg: impl Into<String>) -> Self {
        SkfError::InfeasibleDimension(msg.into())
    }
}
