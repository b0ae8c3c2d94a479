use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("non-finite value at path {path}, step {step}; coefficients blow up on the sampled domain")]
    NonFinite { path: usize, step: usize },

    #[error("negative intensity {value} at x = {x}")]
    NegativeIntensity { x: f64, value: f64 },

    #[error("reversed drift is singular at the reversal endpoint (t = {t} >= T = {horizon})")]
    ReversalEndpoint { t: f64, horizon: f64 },

    #[error("degenerate diffusion: {0}")]
    DegenerateDiffusion(String),

    #[error("empty sample: {0}")]
    EmptySample(String),

    #[error("insufficient sample: {0}")]
    InsufficientSample(String),

    #[error("hypothesis violated: {0}")]
    HypothesisViolation(String),

    #[error("spatial derivative unreliable: bump halving moved the estimate by {difference:e}, above 3 SE = {tolerance:e}")]
    UnreliableDerivative { difference: f64, tolerance: f64 },

    #[error("degenerate systemic-risk denominator: |P_pre - epsilon| = {gap:e} below floor {floor:e}")]
    DegenerateDenominator { gap: f64, floor: f64 },

    #[error("root not bracketed after {doublings} interval doublings")]
    NotBracketed { doublings: usize },

    #[error("PDE solution lost positivity at t = {t}, x = {x} (value {value:e}); refine the grid")]
    PositivityLost { t: f64, x: f64, value: f64 },

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("format error: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
