use thiserror::Error;

use crate::wire::WireError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("invalid template: {0}")]
    InvalidTemplate(String),

    #[error("question cannot be answered: {0}")]
    Unanswerable(String),

    /// A backend call failed during a named pipeline step.
    #[error("{step} failed: {source}")]
    Step {
        step: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Wire(#[from] WireError),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// The innermost error, looking through pipeline-step wrappers.
    pub fn root(&self) -> &Error {
        match self {
            Error::Step { source, .. } => source.root(),
            e => e,
        }
    }

    pub fn as_wire(&self) -> Option<&WireError> {
        match self.root() {
            Error::Wire(w) => Some(w),
            _ => None,
        }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub(crate) fn at(step: &'static str) -> impl FnOnce(Error) -> Error {
        move |e| Error::Step {
            step,
            source: Box::new(e),
        }
    }
}
