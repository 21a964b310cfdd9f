use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum RuleError {
    #[error("syntax error at byte {offset}: {message}")]
    Syntax { offset: usize, message: String },
    #[error("unsupported regex at byte {offset}: {message}")]
    UnsupportedRegex { offset: usize, message: String },
    #[error("contains() at byte {offset} needs 1 to 3 tokens, got {len}")]
    NgramLength { offset: usize, len: usize },
    #[error("duplicate rule id `{0}`")]
    DuplicateId(String),
    #[error("unknown rule id `{0}`")]
    UnknownId(String),
    #[error("rule id must be non-empty")]
    EmptyId,
}

impl RuleError {
    /// Byte offset into the rule source, for errors that have one.
    pub fn offset(&self) -> Option<usize> {
        match self {
            RuleError::Syntax { offset, .. }
            | RuleError::UnsupportedRegex { offset, .. }
            | RuleError::NgramLength { offset, .. } => Some(*offset),
            _ => None,
        }
    }
}
