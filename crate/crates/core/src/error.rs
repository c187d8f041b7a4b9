use thiserror::Error;

/// Errors raised across the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("exact transport cap exceeded ({n} x {m} atoms)")]
    TransportCapExceeded { n: usize, m: usize },

    #[error("index {index} out of range for {len} atoms")]
    IndexOutOfRange { index: usize, len: usize },

    #[error("invalid measure: {0}")]
    InvalidMeasure(String),

    #[error("invalid argument `{name}`: {reason}")]
    InvalidArgument { name: &'static str, reason: String },

    #[error("atom weight {weight:e} below floor {floor:e}")]
    WeightFloor { weight: f64, floor: f64 },

    #[error("Newton iteration did not converge after {iterations} steps (gradient norm {residual:e}, last iterate {last:?})")]
    NewtonDivergence {
        iterations: usize,
        residual: f64,
        last: Vec<f64>,
    },

    #[error("C0 = {given} is below the admissible threshold; minimal admissible C0 is {minimal}")]
    ConstantTooSmall { given: f64, minimal: f64 },

    #[error("convexity floor violated: eigenvalue {eigenvalue:e} < {floor:e}")]
    ConvexityFloor { eigenvalue: f64, floor: f64 },

    #[error("degenerate tridiagonal system at row {row}")]
    SingularSystem { row: usize },

    #[error("non-finite value in {stage} at time step {step}")]
    NonFinite { stage: &'static str, step: usize },

    #[error("negative mass {value:e} at time step {step}, cell {cell}")]
    NegativeMass { step: usize, cell: usize, value: f64 },

    #[error("grid [{x_min}, {x_max}] does not cover required domain [{need_min}, {need_max}]")]
    GridTooSmall {
        x_min: f64,
        x_max: f64,
        need_min: f64,
        need_max: f64,
    },

    #[error("fixed point did not converge in {iterations} iterations (last residual {last:e})")]
    NotConverged {
        iterations: usize,
        last: f64,
        residual_history: Vec<f64>,
    },

    #[error("Riccati blow-up at t = {time}")]
    RiccatiBlowUp { time: f64 },

    #[error("particle {particle} escaped the grid at t = {time} (x = {position})")]
    ParticleEscaped {
        particle: usize,
        time: f64,
        position: f64,
    },

    #[error("unknown model `{0}`")]
    UnknownModel(String),

    #[error("missing or invalid parameter `{0}`")]
    Parameter(String),
}

pub type Result<T> = std::result::Result<T, Error>;
