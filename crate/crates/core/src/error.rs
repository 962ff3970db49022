use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Error, Debug, Clone, PartialEq)]
pub enum Error {
    /// A parameter outside its admissible range. `path` names the offending
    /// key (dotted, as it appears in a scenario document when applicable).
    #[error("invalid value for `{path}`: {message}")]
    Invalid { path: String, message: String },

    #[error("trace too short: need at least {required} samples, got {actual}")]
    TraceTooShort { required: usize, actual: usize },

    #[error("transmission result reported for node {node} with an empty queue")]
    EmptyQueue { node: usize },

    #[error("node {node} has no time-division group assignment")]
    Unassigned { node: usize },

    #[error("unsupported prediction: {0}")]
    Unsupported(String),
}

impl Error {
    pub fn invalid(path: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Invalid {
            path: path.into(),
            message: message.into(),
        }
    }
}
