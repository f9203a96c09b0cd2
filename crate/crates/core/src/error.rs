use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid parameters: {0}")]
    InvalidParams(String),

    #[error(
        "forecast grid has {n} points, above the cap of {cap} \
         (K={signal_points}, M={return_points}, D={denominator})"
    )]
    CapExceeded {
        n: u128,
        cap: usize,
        signal_points: usize,
        return_points: usize,
        denominator: usize,
    },

    #[error("value {value} outside [{lo}, {hi}]")]
    OutOfRange { value: f64, lo: f64, hi: f64 },

    #[error("index {index} out of range (len {len})")]
    IndexOutOfRange { index: usize, len: usize },

    #[error(
        "halfspace game infeasible: best value {value} exceeds anchor {anchor} by more than {tol}"
    )]
    Infeasible { value: f64, anchor: f64, tol: f64 },

    #[error("linear program failed: {0}")]
    LinearProgram(String),

    #[error("protocol violation: {0}")]
    ProtocolViolation(String),

    #[error("empty history")]
    EmptyHistory,

    #[error("log-optimal solver did not converge: KKT residual {residual} after {iterations} iterations")]
    NonConvergence { residual: f64, iterations: usize },

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("quadrature unstable: {0}")]
    QuadratureUnstable(String),

    #[error("market contract violation at round {round}: {message}")]
    MarketContractViolation { round: usize, message: String },
}
