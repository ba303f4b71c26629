use thiserror::Error;

/// Everything that can go wrong while building, solving or verifying.
#[derive(Debug, Error)]
pub enum Error {
    #[error("unknown vector-field system `{0}` (expected euclidean(n), heisenberg1 or grushin)")]
    UnknownSystem(String),

    #[error("unknown domain shape `{0}` (expected box, euclidean_ball or gauge_ball)")]
    UnknownShape(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("invalid exponents: {0} (requires 1 < q ≤ p)")]
    InvalidExponents(String),

    #[error("field lives on grid {found:#x}, expected grid {expected:#x}")]
    GridMismatch { expected: u64, found: u64 },

    #[error("grid too coarse: {interior} interior nodes, at least {needed} required")]
    DomainTooCoarse { interior: usize, needed: usize },

    #[error("domain has no interior nodes")]
    EmptyInterior,

    #[error("non-finite value encountered in {0}")]
    NonFinite(&'static str),

    #[error("bracket depth {depth} not available: {reason}")]
    BracketDepth { depth: usize, reason: String },

    #[error(
        "incompatible data: <nu,1> - int f dx = {residual:.3e} exceeds tolerance {tolerance:.3e}; \
         the compatibility condition is necessary for existence"
    )]
    IncompatibleData { residual: f64, tolerance: f64 },

    #[error("solver did not converge: {iterations} iterations, gradient norm {grad_norm:.3e} > {tolerance:.3e}")]
    NotConverged { iterations: usize, grad_norm: f64, tolerance: f64 },

    #[error("energy gradient undefined: p = {p} < 2 requires reg_delta > 0")]
    NonDifferentiable { p: f64 },

    #[error("nodes {0} and {1} are not connected in the metric graph")]
    Disconnected(usize, usize),

    #[error("metric graph is degenerate: {0}")]
    DegenerateGraph(String),

    #[error("radius {r} outside the admissible range (0, {max}]")]
    RadiusOutOfRange { r: f64, max: f64 },

    #[error("empty ball at node {node} radius {r}")]
    EmptyBall { node: usize, r: f64 },

    #[error("insufficient resolution: {0}")]
    Unresolved(String),

    #[error("zero distance between distinct boundary nodes {0} and {1}")]
    ZeroDistance(usize, usize),

    #[error("zero denominator in {0}")]
    ZeroDenominator(&'static str),

    #[error("field has zero horizontal gradient")]
    ZeroGradient,

    #[error("boundary point {0} lies outside every element")]
    OutsideHull(usize),

    #[error("unknown check `{0}`")]
    UnknownCheck(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("expression error in `{expr}`: {message}")]
    Expression { expr: String, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Process exit status used by the command-line front end and the C ABI.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::UnknownSystem(_)
            | Error::UnknownShape(_)
            | Error::InvalidParameter(_)
            | Error::InvalidExponents(_)
            | Error::DomainTooCoarse { .. }
            | Error::RadiusOutOfRange { .. }
            | Error::UnknownCheck(_)
            | Error::Config(_)
            | Error::Expression { .. } => 2,
            Error::IncompatibleData { .. } => 3,
            Error::NotConverged { .. } => 4,
            _ => 1,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
