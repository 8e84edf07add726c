use thiserror::Error;

/// Errors raised by the solvers, estimators and experiment harness.
///
/// Variants are grouped so the CLI can map them onto exit codes: structural
/// and configuration problems, numerical breakdowns, and solver instability.
#[derive(Debug, Error)]
pub enum Error {
    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error(
        "time step {dt:.6e} exceeds the stability limit {max_dt:.6e}; use at least {min_steps} time cells"
    )]
    Cfl {
        dt: f64,
        max_dt: f64,
        min_steps: usize,
    },

    #[error("solver produced a non-finite value at step {step} ({solver})")]
    Unstable { solver: &'static str, step: usize },

    #[error("design matrix is rank deficient (condition estimate {condition:.3e}); use the Bayesian posterior instead")]
    RankDeficient { condition: f64 },

    #[error("factorization failed after jitter escalation (condition estimate {condition:.3e})")]
    Factorization { condition: f64 },

    #[error("sampler accepted no proposals in {steps} steps; reduce proposal_scale")]
    NoAcceptance { steps: usize },

    #[error("{context}: {source}")]
    Context {
        context: String,
        #[source]
        source: Box<Error>,
    },

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("serialization error: {0}")]
    Serde(String),
}

impl Error {
    /// Attach a description of what was being attempted.
    pub fn context(self, context: impl Into<String>) -> Self {
        Error::Context {
            context: context.into(),
            source: Box::new(self),
        }
    }

    /// The innermost error, with every context layer removed.
    pub fn root(&self) -> &Error {
        match self {
            Error::Context { source, .. } => source.root(),
            e => e,
        }
    }

    /// Process exit code for the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self.root() {
            Error::RankDeficient { .. } | Error::Factorization { .. } | Error::NoAcceptance { .. } => 3,
            Error::Unstable { .. } => 4,
            _ => 2,
        }
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Serde(e.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Serde(e.to_string())
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
