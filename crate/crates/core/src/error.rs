use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("degree {degree} exceeds ambient dimension {dim}")]
    DegreeOverflow { degree: usize, dim: usize },

    #[error("invalid degree: {0}")]
    InvalidDegree(String),

    #[error("expected {expected} vectors, got {found}")]
    WrongVectorCount { expected: usize, found: usize },

    #[error("non-finite coordinate in {0:?}")]
    NonFinite(Vec<f64>),

    #[error("point {point:?} lies outside the domain")]
    OutsideDomain { point: Vec<f64> },

    #[error("trajectory left the domain at {location:?} (flow time {time})")]
    DomainExit { location: Vec<f64>, time: f64 },

    #[error("integration step failed at flow time {time}")]
    StepFailure { time: f64 },

    #[error("form has a dt component ({0:e}) but a spatial form is required")]
    NotSpatial(f64),

    #[error("operation requires a form on extended phase space")]
    NotExtended,

    #[error("parse error at column {column}: {message}")]
    Parse { message: String, column: usize },

    #[error("chain is not a cycle: probe {probe} integrates to {value:e} over the boundary")]
    NotACycle { probe: String, value: f64 },

    #[error("not a solution form: residual |i_xi d sigma| = {residual:e}")]
    NotASolution { residual: f64 },

    #[error("form not Lie-invariant: |L_v form| = {residual:e}")]
    NotLieInvariant { residual: f64 },

    #[error("vector field does not lie in the kernel: |i_W form| = {residual:e}")]
    NotInKernel { residual: f64 },

    #[error("rank changed from {expected} to {found} near {point:?}")]
    RankInstability { expected: usize, found: usize, point: Vec<f64> },

    #[error("kernel at {point:?} has dimension {found}, expected {expected}")]
    KernelDimension { expected: usize, found: usize, point: Vec<f64> },

    #[error("form vanishes at {point:?}")]
    DegenerateForm { point: Vec<f64> },

    #[error("unknown scenario {name:?}; available: {}", available.join(", "))]
    UnknownScenario { name: String, available: Vec<String> },

    #[error("unknown check {name:?}; did you mean: {}", suggestions.join(", "))]
    UnknownCheck { name: String, suggestions: Vec<String> },

    #[error("scenario {scenario} failed its self-check: {detail}")]
    SelfCheck { scenario: String, detail: String },

    #[error("config error: {0}")]
    Config(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("io error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}
