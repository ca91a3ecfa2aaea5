use thiserror::Error;

/// Failures of the grid model, the load flow and the sensitivity routines.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("lines form a cycle: line {line} ({from} -> {to}) closes a loop")]
    CyclicGraph { line: usize, from: usize, to: usize },
    #[error("node {node} is not reachable from the slack node")]
    Disconnected { node: usize },
    #[error("slack node {slack} is out of range for {nodes} nodes")]
    BadSlack { slack: usize, nodes: usize },
    #[error("grid needs at least two nodes, got {0}")]
    TooFewNodes(usize),
    #[error("line {line} has zero impedance")]
    ZeroImpedance { line: usize },
    #[error("line {line} has non-finite parameters")]
    NonFiniteParams { line: usize },
    #[error("dimension mismatch for {what}: expected {expected}, found {found}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        found: usize,
    },
    #[error("load flow did not converge after {iterations} iterations (mismatch {mismatch:.3e} pu)")]
    NoConvergence { iterations: usize, mismatch: f64 },
    #[error("singular load-flow Jacobian")]
    SingularJacobian,
    #[error("snapshot {snapshot} carries no voltage angles and none were supplied")]
    MissingAngles { snapshot: usize },
    #[error("admittance entry ({row}, {col}) is zero but its derivative is not")]
    DegeneratePolar { row: usize, col: usize },
    #[error("invalid per-unit base: {0}")]
    InvalidBase(&'static str),
    #[error("voltage magnitude at node {node} must be positive")]
    NonPositiveVoltage { node: usize },
}
