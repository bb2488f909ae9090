use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("numerical divergence at t = {t:.4} s, vehicle {vehicle}: {what}")]
    Divergence { vehicle: usize, t: f64, what: String },

    #[error("invalid vehicle parameters: {0}")]
    InvalidParams(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("vehicle {vehicle}: predecessor control signal unavailable")]
    CommunicationFailure { vehicle: usize },

    #[error("observer design rejected: {0}")]
    ObserverDesign(String),

    #[error("safety layer: {0}")]
    Safety(String),
}

impl Error {
    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }
}

pub(crate) fn check_finite(what: &'static str, values: &[f64]) -> Result<()> {
    if values.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(what))
    }
}
