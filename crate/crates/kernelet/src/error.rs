use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("descriptor file {path}: {msg}")]
    DescriptorFile { path: String, msg: String },

    #[error("infeasible: {0}")]
    Infeasible(String),

    #[error("state space too large ({states} states, cap {cap}); use block granularity")]
    StateSpaceTooLarge { states: usize, cap: usize },

    #[error("steady state did not converge after {iters} iterations (residual {residual:.3e})")]
    NoConvergence { iters: usize, residual: f64 },

    #[error("parse error at line {line}, col {col}: {msg}")]
    Parse { line: usize, col: usize, msg: String },

    #[error("interpreter trap: {0}")]
    Trap(String),

    #[error("unknown policy: {0}")]
    UnknownPolicy(String),

    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
