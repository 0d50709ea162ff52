use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {what}: expected {expected}, got {got}")]
    Dimension {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("singular linear system in {context}{hint}")]
    Singular {
        context: &'static str,
        hint: &'static str,
    },

    #[error("no convergence after {iters} iterations (residual {residual:e})")]
    NoConvergence { iters: usize, residual: f64 },

    #[error("distribution is not stationary for the target chain (l1 residual {residual:e})")]
    NotStationary { residual: f64 },

    /// Pairs carrying target mass that the behavior distribution never visits.
    #[error("coverage violation: {} pair(s) with target mass but no behavior mass, first {:?}", pairs.len(), pairs.first())]
    Coverage { pairs: Vec<(usize, usize)> },

    #[error("data inconsistency: {0}")]
    DataInconsistency(String),

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("ratio undefined at (s={}, a={}): reference ratio is zero on a positive-mass pair", .0.0, .0.1)]
    UndefinedRatio((usize, usize)),

    #[error("Picard bound violated at k={k}: error {lhs:e} > bound {rhs:e}")]
    PicardViolation { k: usize, lhs: f64, rhs: f64 },

    #[error("cross-check failed in {context}: discrepancy {gap:e}")]
    CrossCheck { context: &'static str, gap: f64 },

    #[error("config error in `{field}`: {reason}")]
    Config { field: String, reason: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }

    pub(crate) fn config(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            reason: reason.into(),
        }
    }
}

pub(crate) fn check_len(what: &'static str, expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::Dimension {
            what,
            expected,
            got,
        })
    }
}
