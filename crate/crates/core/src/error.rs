use std::fmt;

use crate::torus::Point;

/// One row of an `r -> 0` extrapolation table.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ExtrapolationRow {
    pub r: f64,
    pub partial_sum: f64,
    pub extrapolant: f64,
}

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("right-hand side has mean {mean:.3e}, tolerance is {tol:.3e}")]
    NonzeroMean { mean: f64, tol: f64 },

    #[error("singular point: {0}")]
    SingularPoint(String),

    #[error("value {value} lies outside the branch (-inf, 0]{}", at_node(*.node))]
    OutOfBranch { value: f64, node: Option<usize> },

    #[error("iteration failed to converge: {0}")]
    IterationFailure(String),

    #[error("invalid configuration: {0}")]
    InvalidConfiguration(String),

    #[error("ansatz infeasible: discriminant {discriminant:.6e} < 0 (eps too large for this mu)")]
    AnsatzInfeasible { discriminant: f64 },

    #[error("critical point search left the admissible set at {point:?} after {iterations} iterations")]
    SearchFailure { point: Vec<Point>, iterations: usize, trace: Vec<f64> },

    #[error("r -> 0 limit is unstable (last two iterates differ by {spread:.3e})")]
    LimitUnstable { spread: f64, table: Vec<ExtrapolationRow> },

    #[error("projection Gram matrix is singular (reciprocal condition {rcond:.3e})")]
    ProjectionDegenerate { rcond: f64 },

    #[error("reduced system has no root in the mu window [{mu_lo:.4}, {mu_hi:.4}]")]
    ReducedInfeasible { mu_lo: f64, mu_hi: f64, scan: Vec<(f64, f64)> },

    #[error("linear solve stagnated: relative residual {residual:.3e} after {iterations} iterations")]
    LinearSolveFailure { residual: f64, iterations: usize },

    #[error("Newton iteration did not converge ({reason}); last residual {:.3e}", .trace.last().copied().unwrap_or(f64::NAN))]
    NonConvergence { reason: String, trace: Vec<f64> },

    #[error("no solution detected: {0}")]
    NoSolution(String),

    #[error("config error at line {line}: {message}")]
    Config { line: usize, message: String },

    #[error("field file: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

fn at_node(node: Option<usize>) -> impl fmt::Display {
    struct Node(Option<usize>);
    impl fmt::Display for Node {
        fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
            match self.0 {
                Some(i) => write!(f, " at node {i}"),
                None => Ok(()),
            }
        }
    }
    Node(node)
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
