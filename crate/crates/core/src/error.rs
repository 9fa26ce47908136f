use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Errors raised by the solvers and the file layer.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {}: expected {expected}, found {found}", field_path(*.follower, .field))]
    Dimension { follower: Option<usize>, field: &'static str, expected: String, found: String },

    #[error("invalid box: lower bound exceeds upper bound at coordinate {index} ({lo} > {hi})")]
    InvalidBox { index: usize, lo: f64, hi: f64 },

    #[error("infeasible constraint set: {0}")]
    Infeasible(String),

    #[error("point violates inequality {constraint} by {violation:e}")]
    InfeasiblePoint { constraint: usize, violation: f64 },

    #[error("equality constraint rows are linearly dependent (rows {rows:?})")]
    RankDeficient { rows: Vec<usize> },

    #[error("active-set QP did not converge after {iterations} iterations (KKT residual {residual:e})")]
    QpNonconvergence { iterations: usize, residual: f64 },

    #[error("pseudo-gradient is not strongly monotone: smallest eigenvalue of F1 is {lambda_min:e}")]
    Monotonicity { lambda_min: f64 },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("Nash iteration did not converge in {iterations} iterations (last residual {residual:e})")]
    NashNonconvergence { iterations: usize, residual: f64, history: Vec<f64> },

    #[error("follower {follower}: stacked equality/active constraints are rank deficient (rank {rank}, dependent rows {dependent_rows:?})")]
    ActiveSetRank { follower: usize, rank: usize, dependent_rows: Vec<String> },

    #[error("follower {follower}: stationarity residual {residual:e} exceeds {threshold:e}; equilibrium too inexact to differentiate")]
    StaleEquilibrium { follower: usize, residual: f64, threshold: f64 },

    #[error("follower {follower}: KKT matrix of size {size} is numerically singular (rank {rank})")]
    SingularKkt { follower: usize, size: usize, rank: usize },

    #[error("Armijo backtracking exceeded {l_max} reductions without sufficient decrease")]
    StalledStep { l_max: u32 },

    #[error("invalid scenario: {0}")]
    Scenario(String),

    #[error("finite-difference stencil crosses an active-set change at price coordinate {coordinate}")]
    UnreliableStencil { coordinate: usize },

    #[error("enumeration oracle supports at most {max} inequalities, got {got}")]
    OracleScale { got: usize, max: usize },

    #[error("grid search needs {evaluations} evaluations, above the cap of {cap}")]
    Budget { evaluations: u128, cap: u128 },

    #[error("leader iteration {t}: {source}")]
    Leader {
        t: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("schema error at {path}: {message}")]
    Schema { path: String, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

fn field_path(follower: Option<usize>, field: &str) -> String {
    match follower {
        Some(i) => format!("followers[{i}].{field}"),
        None => field.to_string(),
    }
}

impl Error {
    pub(crate) fn dim(
        follower: Option<usize>,
        field: &'static str,
        expected: impl ToString,
        found: impl ToString,
    ) -> Self {
        Error::Dimension { follower, field, expected: expected.to_string(), found: found.to_string() }
    }

    /// Strips any leader-iteration annotation.
    pub fn root(&self) -> &Error {
        match self {
            Error::Leader { source, .. } => source.root(),
            e => e,
        }
    }

    /// True for failures of an iterative method to reach its tolerance.
    pub fn is_nonconvergence(&self) -> bool {
        matches!(
            self.root(),
            Error::NashNonconvergence { .. }
                | Error::QpNonconvergence { .. }
                | Error::StaleEquilibrium { .. }
                | Error::SingularKkt { .. }
                | Error::UnreliableStencil { .. }
        )
    }
}
