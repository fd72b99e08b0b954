use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid lattice: {0}")]
    InvalidLattice(String),

    #[error("unsupported group kind: {0}")]
    UnsupportedKind(String),

    #[error("ball of radius {radius} exceeds the lattice (largest admissible radius {limit})")]
    BallExceedsDomain { radius: f64, limit: f64 },

    #[error("insufficient samples: {0}")]
    InsufficientSamples(String),

    #[error("kernel sup-norm curve is not monotone near t = {t}")]
    NonMonotoneCurve { t: f64 },

    #[error("time step {dt} violates the positivity bound {limit}")]
    CflViolation { dt: f64, limit: f64 },

    #[error("scheme {scheme} is not available on this model: {reason}")]
    SchemeUnsupported { scheme: String, reason: String },

    #[error("t = {t} is under-resolved by the lattice (need sqrt(t) >= {min_sqrt_t})")]
    TooSmallForGrid { t: f64, min_sqrt_t: f64 },

    #[error("operation not supported on this model: {0}")]
    UnsupportedModel(String),

    #[error("fields live on different lattices")]
    ShapeMismatch,

    #[error("kernel bound fit failed: {0}")]
    FitFailure(String),

    #[error("no fitted volume profile available for the tail bound")]
    ProfileUnfitted,

    #[error("data must be nonnegative (minimum {min})")]
    NegativeData { min: f64 },

    #[error("invalid nonlinearity: {0}")]
    InvalidNonlinearity(String),

    #[error("barrier bracket vanished at t = {t}; certificate inputs are inconsistent")]
    BarrierBlowup { t: f64 },

    #[error("Picard iteration did not converge after {iterations} iterations (gap {gap:e})")]
    NoConvergence { iterations: usize, gap: f64 },

    #[error("Picard iterates lost monotonicity at iteration {iteration}, t = {t} (drop {drop:e})")]
    NonmonotoneIterates { iteration: usize, t: f64, drop: f64 },

    #[error("sandwich bound violated at t = {t}, lattice index {index} (excess {excess:e})")]
    SandwichViolated { t: f64, index: usize, excess: f64 },

    #[error("decay envelope violated at t = {t}, lattice index {index} (ratio {ratio})")]
    EnvelopeViolated { t: f64, index: usize, ratio: f64 },

    #[error("tau = {0} is not a snapshot time of the solution")]
    TauNotSnapshot(f64),

    #[error("p = {p} is not the critical exponent for D = {dimension}")]
    NotCriticalExponent { p: f64, dimension: u32 },

    #[error("blow-up time fit is degenerate: {0}")]
    FitDegenerate(String),

    #[error("gamma must be positive, got {0}")]
    GammaNonpositive(f64),

    #[error("invalid integration controls: {0}")]
    InvalidControls(String),

    #[error("parse error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },

    #[error("config validation failed: {0}")]
    Validation(String),

    #[error("unknown report format '{0}' (expected csv or json)")]
    UnknownFormat(String),

    #[error("nothing to report")]
    EmptyReport,

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True for failures that mean a numerical invariant broke, as opposed to
    /// bad input or an expected negative outcome.
    pub fn is_invariant_violation(&self) -> bool {
        matches!(
            self,
            Error::NonmonotoneIterates { .. } | Error::SandwichViolated { .. }
        )
    }
}
