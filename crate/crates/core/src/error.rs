use thiserror::Error;

/// Errors raised by simulation, estimation and inference routines.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("simulation produced a non-finite state at step {step}")]
    NonFiniteState { step: usize },

    #[error("summary layouts differ")]
    LayoutMismatch,

    #[error("all weights are zero")]
    ZeroWeights,

    #[error("perturbation of particle {particle} left the prior support after {attempts} attempts")]
    PerturbationExhausted { particle: usize, attempts: usize },

    #[error("kernel mixture density underflowed to zero (kernel too narrow)")]
    KernelUnderflow,

    #[error("perturbation kernel covariance is not positive definite")]
    DegenerateKernel,

    #[error("generation {generation}: {source}")]
    Generation {
        generation: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("generation {generation}: every refill particle received zero weight (prior/kernel mismatch)")]
    DegenerateRefill { generation: usize },
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub(crate) fn in_generation(self, generation: usize) -> Self {
        match self {
            e @ (Error::Generation { .. } | Error::DegenerateRefill { .. }) => e,
            e => Error::Generation {
                generation,
                source: Box::new(e),
            },
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
