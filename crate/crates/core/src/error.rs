use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("empty group")]
    EmptyGroup,
    #[error("empty rollout")]
    EmptyRollout,
    #[error("unknown prefix")]
    UnknownPrefix,
    #[error("entropies required for HEPO")]
    MissingEntropies,
    #[error("ratio overflow")]
    RatioOverflow,
    #[error("rollout prompt_id {found:?} does not match group prompt_id {expected:?}")]
    PromptMismatch { expected: String, found: String },
    #[error("{field} has length {found}, expected {expected}")]
    LengthMismatch {
        field: &'static str,
        expected: usize,
        found: usize,
    },
    #[error("invalid {field}: {reason}")]
    InvalidValue { field: &'static str, reason: String },
    #[error("token {token} outside vocabulary of size {vocab}")]
    TokenOutOfVocab { token: u32, vocab: u32 },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn invalid(field: &'static str, reason: impl Into<String>) -> Error {
    Error::InvalidValue {
        field,
        reason: reason.into(),
    }
}
