use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("assembly failed: non-finite contribution in cell {cell}")]
    Assembly { cell: usize },

    #[error("singular matrix: zero pivot at row {pivot}")]
    Singular { pivot: usize },

    #[error("degenerate state: {0}")]
    Degenerate(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("mode error: {0}")]
    Mode(String),

    #[error("newton solver failed after {iterations} iterations: {reason}")]
    NewtonFailure {
        reason: String,
        iterations: usize,
        history: Vec<f64>,
    },

    #[error("ODE stepper diverged at dof {dof} (dt = {dt:e} s): {reason}")]
    StepperDivergence { dof: usize, dt: f64, reason: String },

    #[error("step {step} at t = {time:.6} s failed: {source}")]
    StepFailure {
        step: usize,
        time: f64,
        #[source]
        source: Box<Error>,
    },

    #[error("restore failed: {0}")]
    Restore(String),

    #[error("wave not detected: {0}")]
    NotDetected(String),

    #[error("verification failed: {0}")]
    Verification(String),

    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Strips step wrappers to reach the underlying cause.
    pub fn root(&self) -> &Error {
        match self {
            Error::StepFailure { source, .. } => source.root(),
            other => other,
        }
    }

    /// True for errors raised by a time integrator failing to converge.
    pub fn is_solver_failure(&self) -> bool {
        matches!(
            self.root(),
            Error::NewtonFailure { .. }
                | Error::StepperDivergence { .. }
                | Error::Singular { .. }
                | Error::Assembly { .. }
                | Error::Degenerate(_)
        )
    }
}
