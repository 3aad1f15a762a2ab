use thiserror::Error;

pub type Result<T> = std::result::Result<T, TfdwError>;

/// Every failure mode of the solver suite.
///
/// Variants carry enough payload to be serialized into the CLI error report.
#[derive(Debug, Error)]
pub enum TfdwError {
    #[error("structural error: {0}")]
    Structural(String),

    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("mean violation: zero-mode coefficient {coefficient:e} exceeds tolerance {tolerance:e}")]
    MeanViolation { coefficient: f64, tolerance: f64 },

    #[error("solvability condition violated: source mean {mean:e} exceeds tolerance {tolerance:e}")]
    Solvability { mean: f64, tolerance: f64 },

    #[error("degenerate state: {0}")]
    Degenerate(String),

    #[error("descent failed after {iterations} iterations: {reason}")]
    DescentFailure {
        iterations: usize,
        reason: String,
        energy_trace: Vec<f64>,
    },

    #[error("positivity lost: min nu = {min_nu:e} below floor {floor:e}")]
    PositivityLoss { min_nu: f64, floor: f64 },

    #[error("linear solver failed after {iterations} iterations (residual {residual:e})")]
    LinearSolver {
        iterations: usize,
        residual: f64,
        gap_estimate: Option<f64>,
    },

    #[error("eigensolver did not converge after {iterations} iterations")]
    EigenNonConvergence {
        iterations: usize,
        residual_history: Vec<f64>,
    },

    #[error("Newton iteration failed: {0}")]
    NewtonFailure(String),

    #[error("continuation stopped at h = {last_good_h}: {reason}")]
    ContinuationStop { last_good_h: f64, reason: String },

    #[error("value {value} outside tabulated range [{min}, {max}]")]
    Range { value: f64, min: f64, max: f64 },

    #[error("constraint infeasible: {0}")]
    Infeasible(String),

    #[error("stability lost: gap {gap:e} below threshold {threshold:e}")]
    Stability { gap: f64, threshold: f64 },

    #[error("iteration diverged at step {step}: increment ratios {ratios:?}")]
    Divergence { step: usize, ratios: Vec<f64> },

    #[error("field file format error: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl TfdwError {
    /// Short machine-readable tag for error reports.
    pub fn kind(&self) -> &'static str {
        match self {
            TfdwError::Structural(_) => "structural",
            TfdwError::Invalid(_) => "invalid",
            TfdwError::MeanViolation { .. } => "mean_violation",
            TfdwError::Solvability { .. } => "solvability",
            TfdwError::Degenerate(_) => "degenerate_state",
            TfdwError::DescentFailure { .. } => "descent_failure",
            TfdwError::PositivityLoss { .. } => "positivity_loss",
            TfdwError::LinearSolver { .. } => "linear_solver",
            TfdwError::EigenNonConvergence { .. } => "eigen_nonconvergence",
            TfdwError::NewtonFailure(_) => "newton_failure",
            TfdwError::ContinuationStop { .. } => "continuation_stop",
            TfdwError::Range { .. } => "range",
            TfdwError::Infeasible(_) => "infeasible",
            TfdwError::Stability { .. } => "stability",
            TfdwError::Divergence { .. } => "divergence",
            TfdwError::Format(_) => "format",
            TfdwError::Io(_) => "io",
            TfdwError::Json(_) => "json",
        }
    }
}
