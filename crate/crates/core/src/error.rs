use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("bath spin {index} sits at the central spin (r = 0)")]
    SpinAtOrigin { index: usize },

    #[error("invalid geometry: {0}")]
    Geometry(String),

    #[error("all couplings vanish; no effective field can be derived")]
    ZeroCouplings,

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    Dimension { expected: usize, found: usize },

    #[error("trajectory extinct at step {step}: conditional probability {probability:e} below floor {floor:e}")]
    Extinct {
        step: usize,
        probability: f64,
        floor: f64,
    },

    #[error("capacity exceeded: {what} would need {requested}, limit is {limit}; use the dense engine or fewer measurements")]
    Capacity {
        what: &'static str,
        requested: usize,
        limit: usize,
    },
}
