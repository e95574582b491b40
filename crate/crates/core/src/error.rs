use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CrqError {
    #[error("invalid parameter: {0}")]
    InvalidParams(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("{what} did not converge after {iters} iterations (residual {residual:.3e})")]
    NonConvergence {
        what: &'static str,
        iters: usize,
        residual: f64,
    },

    #[error("no increasing bracket for the risk found within {0} doublings")]
    BracketFailure(usize),

    #[error("AMP diverged at iteration {iter}: |x|^2/N = {energy:.3e}")]
    Divergence { iter: usize, energy: f64 },

    #[error("SQUID regularizer sigma2*K/N is zero; noiseless SQUID is ill-posed")]
    DegenerateLambda,

    #[error("trial {trial}: {source}")]
    Trial {
        trial: u64,
        #[source]
        source: Box<CrqError>,
    },
}

impl CrqError {
    /// True for failures of a numerical routine, as opposed to bad input.
    pub fn is_numerical(&self) -> bool {
        match self {
            CrqError::InvalidParams(_) | CrqError::Dimension(_) | CrqError::DegenerateLambda => {
                false
            }
            CrqError::Trial { source, .. } => source.is_numerical(),
            _ => true,
        }
    }
}

pub type Result<T, E = CrqError> = std::result::Result<T, E>;
