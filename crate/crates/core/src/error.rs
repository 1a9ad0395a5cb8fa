use thiserror::Error;

/// Every failure mode surfaced by the library.
///
/// Variant names double as the machine-readable `kind` emitted by the CLI.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("torsion is not admissible: divergence L2 norm {divergence_l2:e} exceeds {limit:e}")]
    InadmissibleTorsion { divergence_l2: f64, limit: f64 },

    #[error("right-hand side has non-zero mean {mean:e}")]
    NonZeroMean { mean: f64 },

    #[error("{what} did not converge after {iterations} iterations (residual {residual:e})")]
    NoConvergence {
        what: &'static str,
        iterations: usize,
        residual: f64,
    },

    #[error("divergence at t = {t}: max |2f/n| = {max_exponent:e}")]
    Divergence { t: f64, max_exponent: f64 },

    #[error("time step {dt:e} fell below the minimum at t = {t}")]
    StepTooSmall { t: f64, dt: f64 },

    #[error("operation requires a balanced background (zero torsion)")]
    NotBalanced,

    #[error("direction is not tangent: weighted mean {weighted_mean:e}")]
    NotTangent { weighted_mean: f64 },

    #[error("lower bound violated at {} snapshot(s), first at t = {}", .violations.len(), .violations[0].0)]
    LowerBoundViolation { violations: Vec<(f64, f64)> },

    #[error("critical point is not unstable: 2*lambda/n = {threshold} <= lambda_1 = {lambda_1}")]
    NotUnstable { threshold: f64, lambda_1: f64 },

    #[error("bump radius {r} does not fit: need 0 < 2r < {limit}")]
    BumpDoesNotFit { r: f64, limit: f64 },

    #[error("annulus width {r} spans {cells:.2} cells along axis {axis}, need at least 4")]
    ResolutionTooCoarse { r: f64, axis: usize, cells: f64 },

    #[error("precondition failed: {0}")]
    Precondition(String),

    #[error("C0 certificate failed at t = {t}: {reason}")]
    CertificateFailed { t: f64, reason: String },

    #[error("no snapshot satisfied |dissipation| <= {tol:e}")]
    EmptyReport { tol: f64 },

    #[error("config error: {0}")]
    Config(String),

    #[error("formula error at byte {pos}: {msg}")]
    Formula { pos: usize, msg: String },

    #[error("snapshot format error: {0}")]
    Snapshot(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// Stable identifier for machine-readable error reports.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::InvalidGrid(_) => "InvalidGrid",
            Error::GridMismatch(_) => "GridMismatch",
            Error::NonFinite(_) => "NonFinite",
            Error::InadmissibleTorsion { .. } => "InadmissibleTorsion",
            Error::NonZeroMean { .. } => "NonZeroMean",
            Error::NoConvergence { .. } => "NoConvergence",
            Error::Divergence { .. } => "Divergence",
            Error::StepTooSmall { .. } => "StepTooSmall",
            Error::NotBalanced => "NotBalanced",
            Error::NotTangent { .. } => "NotTangent",
            Error::LowerBoundViolation { .. } => "LowerBoundViolation",
            Error::NotUnstable { .. } => "NotUnstable",
            Error::BumpDoesNotFit { .. } => "BumpDoesNotFit",
            Error::ResolutionTooCoarse { .. } => "ResolutionTooCoarse",
            Error::Precondition(_) => "Precondition",
            Error::CertificateFailed { .. } => "CertificateFailed",
            Error::EmptyReport { .. } => "EmptyReport",
            Error::Config(_) => "ConfigError",
            Error::Formula { .. } => "FormulaError",
            Error::Snapshot(_) => "SnapshotError",
            Error::Io(_) => "IoError",
            Error::Json(_) => "JsonError",
            Error::Csv(_) => "CsvError",
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
