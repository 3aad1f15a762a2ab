use serde_json::{json, Value};
use thiserror::Error;
use tfdw_core::TfdwError;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Solver(#[from] TfdwError),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Solver(_) => 3,
        }
    }

    /// Machine-readable report written to stderr on failure.
    pub fn report(&self) -> Value {
        match self {
            CliError::Config(msg) => json!({"kind": "config", "message": msg, "exit_code": 2}),
            CliError::Solver(e) => json!({
                "kind": e.kind(),
                "message": e.to_string(),
                "exit_code": 3,
                "payload": payload(e),
            }),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Solver(TfdwError::Io(e))
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Solver(TfdwError::Json(e))
    }
}

fn payload(e: &TfdwError) -> Value {
    match e {
        TfdwError::MeanViolation { coefficient, tolerance } => json!({"coefficient": coefficient, "tolerance": tolerance}),
        TfdwError::Solvability { mean, tolerance } => json!({"mean": mean, "tolerance": tolerance}),
        TfdwError::DescentFailure { iterations, energy_trace, .. } => {
            json!({"iterations": iterations, "energy_trace": energy_trace})
        }
        TfdwError::PositivityLoss { min_nu, floor } => json!({"min_nu": min_nu, "floor": floor}),
        TfdwError::LinearSolver {
            iterations,
            residual,
            gap_estimate,
        } => json!({"iterations": iterations, "residual": residual, "gap_estimate": gap_estimate}),
        TfdwError::EigenNonConvergence {
            iterations,
            residual_history,
        } => json!({"iterations": iterations, "residual_history": residual_history}),
        TfdwError::ContinuationStop { last_good_h, reason } => json!({"last_good_h": last_good_h, "reason": reason}),
        TfdwError::Range { value, min, max } => json!({"value": value, "min": min, "max": max}),
        TfdwError::Stability { gap, threshold } => json!({"gap": gap, "threshold": threshold}),
        TfdwError::Divergence { step, ratios } => json!({"step": step, "ratios": ratios}),
        _ => Value::Null,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes_and_payload() {
        let c = CliError::Config("bad".into());
        assert_eq!(c.exit_code(), 2);
        assert_eq!(c.report()["kind"], "config");
        let s = CliError::Solver(TfdwError::ContinuationStop {
            last_good_h: 0.25,
            reason: "gap closed".into(),
        });
        assert_eq!(s.exit_code(), 3);
        let r = s.report();
        assert_eq!(r["kind"], "continuation_stop");
        assert_eq!(r["payload"]["last_good_h"], 0.25);
    }
}
