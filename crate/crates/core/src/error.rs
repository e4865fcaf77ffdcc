use thiserror::Error;

/// Errors produced by the theory, simulation and sweep layers.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("QuadratureDiverged: moment {moment} changed by {delta:e} when refining the rule")]
    QuadratureDiverged { moment: &'static str, delta: f64 },

    #[error("InvalidQuadrature: {0}")]
    InvalidQuadrature(String),

    #[error("InvalidSpec: {0}")]
    InvalidSpec(String),

    #[error("NonPositiveInput: b[{index}] = {value} must be > 0")]
    NonPositiveInput { index: usize, value: f64 },

    #[error(
        "NoConvergence: residual {residual:e} after {iterations} iterations at lambda = {lambda:e}"
    )]
    NoConvergence {
        residual: f64,
        iterations: usize,
        lambda: f64,
    },

    #[error("DegenerateB: b[{0}] = 0")]
    DegenerateB(usize),

    #[error("SingularMatrix: auxiliary matrix H is numerically singular")]
    SingularMatrix,

    #[error("WrongK: closed-form path needs K = 2, got K = {0}")]
    WrongK(usize),

    #[error("DegenerateS: |S| = {0:e} is below 1e-300")]
    DegenerateS(f64),

    #[error("DegenerateMoments: {0}")]
    DegenerateMoments(String),

    #[error("ShapeMismatch: {0}")]
    ShapeMismatch(String),

    #[error("SolveFailure: {0}")]
    SolveFailure(String),

    #[error("SolveFailure: replication {index}: {source}")]
    Replication {
        index: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("EmptyGrid: sweep grid has no points")]
    EmptyGrid,

    #[error("InvalidGrid: {0}")]
    InvalidGrid(String),

    /// Rejected configuration; `path` is a JSON pointer such as `/model/psi/0`.
    #[error("ConfigError at {path}: {message}")]
    Config { path: String, message: String },

    #[error("IoError: {0}")]
    Io(String),
}

impl Error {
    /// Short class name, used as the first token of diagnostics.
    pub fn class(&self) -> &'static str {
        match self {
            Error::QuadratureDiverged { .. } => "QuadratureDiverged",
            Error::InvalidQuadrature(_) => "InvalidQuadrature",
            Error::InvalidSpec(_) => "InvalidSpec",
            Error::NonPositiveInput { .. } => "NonPositiveInput",
            Error::NoConvergence { .. } => "NoConvergence",
            Error::DegenerateB(_) => "DegenerateB",
            Error::SingularMatrix => "SingularMatrix",
            Error::WrongK(_) => "WrongK",
            Error::DegenerateS(_) => "DegenerateS",
            Error::DegenerateMoments(_) => "DegenerateMoments",
            Error::ShapeMismatch(_) => "ShapeMismatch",
            Error::SolveFailure(_) | Error::Replication { .. } => "SolveFailure",
            Error::EmptyGrid => "EmptyGrid",
            Error::InvalidGrid(_) => "InvalidGrid",
            Error::Config { .. } => "ConfigError",
            Error::Io(_) => "IoError",
        }
    }
}

impl Error {
    pub fn config(path: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            path: path.into(),
            message: message.into(),
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
