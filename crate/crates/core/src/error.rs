//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, Error)]
pub enum Error {
    /// Model parameters violate an invariant (nonpositive volatility, ...).
    #[error("invalid parameter: {0}")]
    InvalidParams(String),

    /// Requested Beta moments lie outside the feasible region sd^2 < m(1-m).
    #[error("infeasible moments: mean {mean}, sd {sd} (requires sd^2 < mean*(1-mean))")]
    InfeasibleMoments { mean: f64, sd: f64 },

    /// Moment matching produced a shape parameter <= 1, i.e. an unbounded
    /// or non-vanishing density at an endpoint of (0, 1).
    #[error("unbounded density: moments (mean {mean}, sd {sd}) give alpha {alpha}, beta {beta}; need alpha > 1 and beta > 1")]
    UnboundedDensity { mean: f64, sd: f64, alpha: f64, beta: f64 },

    /// Dividend requested at or below the default threshold.
    #[error("no dividend payable: asset value {v} is not above the threshold {threshold}")]
    NoDividendPayable { v: f64, threshold: f64 },

    /// A numerical input was NaN or infinite.
    #[error("non-finite input in {0}")]
    NonFinite(&'static str),

    /// Invalid grid or discretization request.
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    /// Periodic fixed point for the stock value did not converge.
    #[error("stock fixed point did not converge after {iterations} iterations (last residual {residual:.3e})")]
    StockFixedPoint { iterations: usize, residual: f64 },

    /// Filter has no mass left to normalize.
    #[error("filter degenerate: total unnormalized mass {mass:.3e} is not positive")]
    FilterDegenerate { mass: f64 },

    /// Accumulated clipped negative part of the Galerkin density exceeded
    /// the configured threshold.
    #[error("filter positivity diagnostic {value:.3e} exceeded threshold {threshold:.3e} at t = {t}")]
    PositivityLost { value: f64, threshold: f64, t: f64 },

    /// All particle weights vanished.
    #[error("filter collapse: all particle weights are zero at t = {t}")]
    FilterCollapse { t: f64 },

    /// Requested evaluation time not covered by a value grid.
    #[error("time {t} outside grid range [{lo}, {hi}]")]
    TimeOutOfRange { t: f64, lo: f64, hi: f64 },

    /// Calibration constraint matrix is rank deficient.
    #[error("rank-deficient constraints: instrument '{0}' is redundant with the preceding rows")]
    RankDeficient(String),

    /// No nonnegative density satisfies the calibration constraints.
    #[error("infeasible calibration: {0}")]
    Infeasible(String),

    /// The QP solver exceeded its iteration budget.
    #[error("qp did not terminate after {0} active-set changes")]
    QpStalled(usize),

    /// Error annotated with the path time at which it occurred.
    #[error("at path time {t}: {source}")]
    AtTime {
        t: f64,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub fn at_time(self, t: f64) -> Error {
        Error::AtTime { t, source: Box::new(self) }
    }
}
