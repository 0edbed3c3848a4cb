use thiserror::Error;

/// Errors produced anywhere in the crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("dimension mismatch in {what}: expected {expected}, found {found}")]
    Dimension {
        what: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("usage error: {0}")]
    Usage(String),

    #[error("degenerate: {0}")]
    Degenerate(String),

    #[error("state norm {norm:.6e} exceeds bound {bound:.6e} at s = {at:.6e}")]
    Divergence { at: f64, norm: f64, bound: f64 },

    #[error("solution is not optimal ({0})")]
    NotOptimal(String),

    #[error("tangency violated by field {field} at s = {s:.6e}: |Dm f| = {violation:.3e}")]
    Tangency {
        field: usize,
        s: f64,
        x: Vec<f64>,
        violation: f64,
    },

    #[error("point is off the manifold: |m(x)| = {0:.3e}")]
    OffManifold(f64),

    #[error("factorization failed: {0}")]
    Factorization(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error("parse error: {0}")]
    Parse(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn check_dim(what: &'static str, expected: usize, found: usize) -> Result<()> {
    if expected == found {
        Ok(())
    } else {
        Err(Error::Dimension {
            what,
            expected,
            found,
        })
    }
}
