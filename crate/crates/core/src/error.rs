use thiserror::Error;

/// Errors raised by model evaluation, estimation and the experiment harness.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum QlaError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("unknown model `{0}`")]
    UnknownModel(String),

    #[error("model evaluation produced a non-finite value: {0}")]
    ModelEvaluation(String),

    #[error("ellipticity violated: {0}")]
    Ellipticity(String),

    #[error("simulation exploded at step {step}")]
    Explosion { step: usize },

    #[error("parameter outside its box: {0}")]
    Domain(String),

    #[error("contrast evaluation failed: {0}")]
    Evaluation(String),

    #[error("loss-class violation: {0}")]
    LossClassViolation(String),

    #[error("A5 not satisfied below cap {cap}")]
    A5NotSatisfied { cap: f64 },

    #[error("optimization failed; best iterate {best:?} with contrast {value}")]
    OptimizationFailure { best: Vec<f64>, value: f64 },

    #[error("process does not look ergodic: {0}")]
    NotErgodic(String),

    #[error("identifiability failure: {0}")]
    Identifiability(String),

    #[error("internal consistency check failed: {0}")]
    InternalConsistency(String),

    #[error("precondition failed: {0}")]
    Precondition(String),

    #[error("i/o error: {0}")]
    Io(String),

    #[error("parse error: {0}")]
    Parse(String),
}

pub type Result<T> = std::result::Result<T, QlaError>;

impl From<std::io::Error> for QlaError {
    fn from(e: std::io::Error) -> Self {
        QlaError::Io(e.to_string())
    }
}
