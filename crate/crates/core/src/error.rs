use thiserror::Error;

/// Errors produced anywhere in the simulator.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid cut layer {cut} for a model with {layers} layers")]
    InvalidCut { cut: usize, layers: usize },

    #[error("invalid device {device}: {reason}")]
    InvalidDevice { device: usize, reason: String },

    #[error("invalid tenant {tenant}: {reason}")]
    InvalidTenant { tenant: usize, reason: String },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("deadline {deadline}s admits no full synchronization cycle of {cycle_time}s")]
    InfeasibleDeadline { deadline: f64, cycle_time: f64 },

    #[error("shape mismatch: expected {expected}, got {got}")]
    Shape { expected: String, got: String },

    #[error("numerical divergence: {0}")]
    NumericalDivergence(String),

    #[error("cannot assemble submodels: {0}")]
    Assembly(String),

    #[error("device {device} participated with level q = {q}; aggregation weight a/q is undefined")]
    DivisionGuard { device: usize, q: f64 },

    #[error("invalid workload: {0}")]
    InvalidWorkload(String),

    #[error("need at least {needed} warm-up rounds for device {device}, have {have}")]
    InsufficientData {
        device: usize,
        needed: usize,
        have: usize,
    },

    #[error("tenant {tenant}: price floors sum to {floors} which exceeds budget {budget}")]
    BudgetInfeasible {
        tenant: usize,
        floors: f64,
        budget: f64,
    },

    #[error("price dynamics did not settle within {iterations} iterations")]
    NonConvergence { iterations: usize },

    #[error("invalid scenario: {0}")]
    InvalidScenario(String),

    #[error("config error at `{path}`: {message}")]
    Config { path: String, message: String },

    #[error("channel error: {0}")]
    Channel(String),

    #[error("io error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
