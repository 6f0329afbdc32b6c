use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("singular matrix in {context}")]
    Singular { context: String },

    #[error("non-finite value at t = {time}")]
    NonFinite { time: f64 },

    #[error("matrix not positive definite: non-positive pivot at index {pivot}")]
    Indefinite { pivot: usize },

    #[error("Riccati solution escaped (norm {norm:.3e}) at t = {time}")]
    RiccatiEscape { time: f64, norm: f64 },

    #[error("step too coarse: {0}")]
    StepTooCoarse(String),

    #[error("shooting failed: {0}")]
    Shooting(String),

    #[error("Bessel evaluation overflow (argument {argument:.3e})")]
    BesselOverflow { argument: f64 },

    #[error("quadrature grid too coarse: estimated relative error {estimate:.2e}")]
    GridTooCoarse { estimate: f64 },

    #[error("{stage}: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn singular(context: impl Into<String>) -> Self {
        Error::Singular {
            context: context.into(),
        }
    }

    /// Labels an error with the pipeline stage it came from.
    pub fn in_stage(self, stage: &'static str) -> Self {
        Error::Stage {
            stage,
            source: Box::new(self),
        }
    }
}
