use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("degenerate interval [{start}, {end}]")]
    DegenerateInterval { start: f64, end: f64 },

    #[error("grid needs at least {min} steps, got {got}")]
    TooFewSteps { min: usize, got: usize },

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("{what} = {value} is not a multiple of the grid step {step}")]
    NotOnGrid { what: String, value: f64, step: f64 },

    #[error("invalid equation: {0}")]
    InvalidEquation(String),

    #[error("invalid system: {0}")]
    InvalidSystem(String),

    #[error("invalid initial state: {0}")]
    InvalidState(String),

    #[error("neutral equation needs the derivative of the initial function")]
    MissingDerivative,

    #[error("neutral state violates y = x0(0): y = {y}, x0(0) = {x0_at_zero}")]
    CompatibilityViolation { y: f64, x0_at_zero: f64 },

    #[error("requested time {requested} exceeds the available horizon {available}")]
    HorizonExceeded { requested: f64, available: f64 },

    #[error("epsilon = {epsilon} outside (0, {max})")]
    EpsilonOutOfRange { epsilon: f64, max: f64 },

    #[error("moment constraint {index} violated: residual {residual:e} > {tolerance:e}")]
    MomentViolation {
        index: usize,
        residual: f64,
        tolerance: f64,
    },

    #[error("operation requires the one-delay equation x'(t) = a1 x(t-1) + u(t)")]
    NotSimplest,

    #[error("control tail must vanish at the horizon, got u(T) = {value}")]
    EndpointViolation { value: f64 },

    #[error("equation is not retarded")]
    NotRetarded,

    #[error("system is not in companion form")]
    NotCompanion,

    #[error("pair (A, b) is not controllable (rank {rank} < {dim})")]
    Uncontrollable { rank: usize, dim: usize },

    #[error("characteristic polynomial has clustered roots (gap {gap:e})")]
    MultipleRootUnsupported { gap: f64 },

    #[error("moment system for the multipliers is singular")]
    DegenerateMomentSystem,

    #[error("singular linear system: {0}")]
    SingularSystem(String),

    #[error("constraint does not depend on the free constant")]
    DegenerateConstant,

    #[error("|D(z)| = {residual:e} is not small enough for a characteristic zero")]
    NotAZero { residual: f64 },

    #[error("zero on the search contour after {nudges} nudges")]
    BoundaryZero { nudges: usize },

    #[error("Newton iteration did not converge near {re} + {im}i")]
    NewtonFailed { re: f64, im: f64 },

    #[error("witness function violates q(0) = q(eps) = 0 (|q| = {value:e})")]
    WitnessEndpoint { value: f64 },

    #[error("hyperbolic argument {product} exceeds the supported range")]
    Overflow { product: f64 },

    #[error("config: {0}")]
    Config(String),
}

impl Error {
    /// Errors caused by the problem description rather than by a solver.
    pub fn is_input_error(&self) -> bool {
        matches!(
            self,
            Error::Config(_)
                | Error::NotOnGrid { .. }
                | Error::InvalidEquation(_)
                | Error::InvalidSystem(_)
                | Error::InvalidState(_)
                | Error::MissingDerivative
                | Error::CompatibilityViolation { .. }
                | Error::EpsilonOutOfRange { .. }
                | Error::Uncontrollable { .. }
                | Error::DegenerateInterval { .. }
                | Error::TooFewSteps { .. }
        )
    }
}
