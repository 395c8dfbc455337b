use thiserror::Error;

use crate::lattice::Site;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("site {0} is not in the ambient domain")]
    NotInDomain(Site),

    #[error("site {0} is not in the finite core")]
    NotInCore(Site),

    #[error("sites {0} and {1} are not nearest neighbours")]
    NotABond(Site, Site),

    #[error("field of length {got} does not match a core of {expected} sites")]
    DomainMismatch { expected: usize, got: usize },

    #[error("fixed-point iteration did not converge after {iterations} iterations (residual {residual:e})")]
    NotConverged { iterations: usize, residual: f64 },

    #[error("dense oracle limited to {limit} sites, got {sites}")]
    TooLarge { sites: usize, limit: usize },

    #[error("time step dt={dt} exceeds the stability bound {limit}; choose a smaller dt")]
    Unstable { dt: f64, limit: f64 },

    #[error("trajectory diverged at step {step}: |phi| = {value:e} at site index {site}")]
    Diverged { step: u64, site: usize, value: f64 },

    #[error("dynamics needs at least one boundary-driven site")]
    NoDrivenSites,

    #[error("operation requires {expected} geometry")]
    WrongGeometry { expected: &'static str },

    #[error("{capped} of {total} walks hit the step cap")]
    TooManyCapped { capped: u64, total: u64 },

    #[error("configuration error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn param(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }
}
