#[derive(Debug, thiserror::Error)]
pub enum NnError {
    #[error("non-finite values detected in {context}")]
    NonFinite { context: String },
    #[error("unknown parameter `{0}`")]
    UnknownParam(String),
    #[error("checkpoint format error: {0}")]
    CheckpointFormat(String),
    #[error("checkpoint does not match configuration: {0}")]
    Mismatch(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
