use alloc::string::String;

pub type Result<T> = core::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("invalid sentence {id}: {reason}")]
    InvalidSentence { id: String, reason: String },
    #[error("invalid schema: {0}")]
    InvalidSchema(String),
    #[error("unknown event type `{0}`")]
    UnknownType(String),
    #[error("unknown tag `{0}`")]
    UnknownTag(String),
    #[error("cannot sample {k} shots: type `{ty}` has only {available} mentions")]
    InfeasibleShot { ty: String, k: usize, available: usize },
    #[error("invalid split: {0}")]
    InvalidSplit(String),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("empty input: {0}")]
    Empty(&'static str),
    #[error("zero vector cannot be normalized")]
    ZeroVector,
    #[error("no prototype for label `{0}`")]
    MissingPrototype(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("unknown preset `{name}` (available: {available})")]
    UnknownPreset { name: String, available: String },
    #[error("non-finite loss at step {step}: {detail}")]
    NonFinite { step: usize, detail: String },
    #[error("label leakage: {0}")]
    Leakage(String),
    #[error("unknown sentence id `{0}`")]
    UnknownSentence(String),
    #[error("parse error: {0}")]
    Parse(String),
}
