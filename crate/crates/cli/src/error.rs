use std::fmt::Display;

use gridline::EstimationError;
use serde_json::{json, Value};

/// Process exit codes.
pub mod exit {
    pub const OK: i32 = 0;
    pub const CONFIG: i32 = 2;
    pub const LOAD_FLOW: i32 = 3;
    pub const NO_CONVERGENCE: i32 = 4;
    pub const SINGULAR: i32 = 5;
    pub const CHECK_FAILED: i32 = 6;
}

/// A failure with its exit code, reported as JSON on stderr.
#[derive(Debug, Clone, PartialEq)]
pub struct CliError {
    pub code: i32,
    pub kind: &'static str,
    pub message: String,
    pub details: Value,
}

impl CliError {
    fn new(code: i32, kind: &'static str, message: impl Display) -> Self {
        Self {
            code,
            kind,
            message: message.to_string(),
            details: Value::Null,
        }
    }

    pub fn config(message: impl Display) -> Self {
        Self::new(exit::CONFIG, "config", message)
    }

    pub fn load_flow(message: impl Display) -> Self {
        Self::new(exit::LOAD_FLOW, "load-flow", message)
    }

    pub fn check_failed(message: impl Display, details: Value) -> Self {
        Self {
            details,
            ..Self::new(exit::CHECK_FAILED, "check-failed", message)
        }
    }

    pub fn to_json(&self) -> Value {
        json!({
            "error": self.kind,
            "exit_code": self.code,
            "message": self.message,
            "details": self.details,
        })
    }
}

impl From<EstimationError> for CliError {
    fn from(err: EstimationError) -> Self {
        match &err {
            EstimationError::SingularJacobian { iteration, rcond } => Self {
                details: json!({ "iteration": iteration, "rcond": rcond }),
                ..Self::new(exit::SINGULAR, "singular-jacobian", &err)
            },
            EstimationError::RankDeficient {
                iteration,
                rank,
                columns,
            } => Self {
                details: json!({ "iteration": iteration, "rank": rank, "columns": columns, "rcond": 0.0 }),
                ..Self::new(exit::SINGULAR, "singular-jacobian", &err)
            },
            EstimationError::NoConvergence(report) => Self {
                details: json!({ "status": report.status, "iterations": report.iterations() }),
                ..Self::new(exit::NO_CONVERGENCE, "no-convergence", &err)
            },
            EstimationError::Model(gridline::ModelError::NoConvergence { .. })
            | EstimationError::Model(gridline::ModelError::SingularJacobian) => Self::load_flow(&err),
            EstimationError::Model(_) | EstimationError::InvalidProblem(_) | EstimationError::MissingAngleGuess { .. } => {
                Self::config(&err)
            }
        }
    }
}
