use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("syntax error at offset {offset}: {message}")]
    Syntax { offset: usize, message: String },

    #[error("unknown variable `{name}` at offset {offset}")]
    UnknownVariable { name: String, offset: usize },

    #[error("invalid exponent at offset {offset}: {message}")]
    BadExponent { offset: usize, message: String },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("index {index} out of range for length {len}")]
    IndexOutOfRange { index: usize, len: usize },

    #[error("invalid problem: {0}")]
    InvalidProblem(String),

    #[error("dispersion relation does not depend on k0")]
    ConstantInK0,

    #[error("singular slice: d(Delta)/dk0 vanishes at {at}")]
    SingularSlice { at: String },

    #[error("singular point on the locus (grad Delta = 0) at {at}; consider adding eps*k0 to Delta")]
    SingularPoint { at: String },

    #[error("degenerate critical point (det H = 0); rerun with a jittered velocity")]
    Degenerate,

    #[error("step size underflow at s = {s}")]
    StepUnderflow { s: f64 },

    #[error("projection onto the locus failed at s = {s} (|Delta| = {residual:e})")]
    ProjectionFailure { s: f64, residual: f64 },

    #[error("dual thimble rejected: {failed} of {total} flow lines failed")]
    BundleRejected { failed: usize, total: usize },

    #[error("section rejected: {0}")]
    SectionRejected(String),

    #[error("origin lies on the section (distance {distance:e}); refine s or seeds")]
    OriginOnBoundary { distance: f64 },

    #[error("degree computation unsupported for d = {0}")]
    UnsupportedDimension(usize),

    #[error("quadrature domain too small: integrand does not decay at the boundary; try L = {suggested_l}")]
    DomainTooSmall { suggested_l: f64 },

    #[error("time must be positive, got {0}")]
    NonPositiveTime(f64),

    #[error("k0 polynomial has vanishing leading coefficient at this k (degree reduced from {from} to {to})")]
    DegreeReduced { from: usize, to: usize },

    #[error("maximum-growth velocity is not real (|Im v| = {imag:e}); check the sign convention")]
    ComplexVelocity { imag: f64 },

    #[error("numerical failure: {0}")]
    Numerical(String),
}
