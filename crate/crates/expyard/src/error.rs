use thiserror::Error;

#[derive(Debug, Error)]
pub enum YardError {
    #[error("usage: {0}")]
    Usage(String),
    #[error("config: {0}")]
    Config(String),
    #[error("{scenario}: {source}")]
    Module {
        scenario: &'static str,
        #[source]
        source: decaylab_core::Error,
    },
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("artifact: {0}")]
    Artifact(String),
}

impl YardError {
    /// 2 for usage and schema problems, 1 for everything that happened while running.
    pub fn exit_code(&self) -> i32 {
        match self {
            YardError::Usage(_) | YardError::Config(_) => 2,
            _ => 1,
        }
    }
}

pub type YardResult<T> = std::result::Result<T, YardError>;
