//! Exit codes: 0 success, 2 invalid input, 1 anything else.

use std::fmt;

use rbe_core::corpus::CorpusError;
use rbe_core::encoder::EncoderError;
use rbe_core::evalkit::EvalError;
use rbe_core::exemplars::ExemplarError;
use rbe_core::grounding::GroundingError;
use rbe_core::induce::InduceError;
use rbe_core::jsonl::JsonlError;
use rbe_core::rulefile::RulesetFileError;
use rbe_core::rules::RuleError;
use rbe_core::train::TrainError;
use rbe_core::weak::WeakError;

pub const OK: i32 = 0;
pub const RUNTIME: i32 = 1;
pub const INVALID: i32 = 2;

/// A user-facing validation failure without a more specific error type.
#[derive(Debug)]
pub struct Invalid(pub String);

impl fmt::Display for Invalid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Invalid {}

pub fn invalid(msg: impl Into<String>) -> anyhow::Error {
    Invalid(msg.into()).into()
}

fn jsonl_invalid(e: &JsonlError) -> bool {
    matches!(e, JsonlError::Parse { .. })
}

fn is_invalid(e: &(dyn std::error::Error + 'static)) -> bool {
    if e.is::<Invalid>() || e.is::<EvalError>() || e.is::<ExemplarError>() || e.is::<RuleError>() {
        return true;
    }
    if let Some(e) = e.downcast_ref::<JsonlError>() {
        return jsonl_invalid(e);
    }
    if let Some(e) = e.downcast_ref::<CorpusError>() {
        return !matches!(e, CorpusError::Io(j) if !jsonl_invalid(j));
    }
    if let Some(e) = e.downcast_ref::<RulesetFileError>() {
        return !matches!(e, RulesetFileError::Io(j) if !jsonl_invalid(j));
    }
    if let Some(e) = e.downcast_ref::<InduceError>() {
        return !matches!(e, InduceError::Io(j) if !jsonl_invalid(j));
    }
    if let Some(e) = e.downcast_ref::<WeakError>() {
        return !matches!(e, WeakError::Io(j) if !jsonl_invalid(j));
    }
    if let Some(e) = e.downcast_ref::<EncoderError>() {
        return matches!(e, EncoderError::Checkpoint(_) | EncoderError::Shape(_));
    }
    if let Some(e) = e.downcast_ref::<GroundingError>() {
        return !matches!(e, GroundingError::Encoder(_));
    }
    if let Some(e) = e.downcast_ref::<TrainError>() {
        return matches!(
            e,
            TrainError::Config(_) | TrainError::EmptyTrain | TrainError::Exemplar(_)
        );
    }
    false
}

pub fn code_for(err: &anyhow::Error) -> i32 {
    if err.chain().any(is_invalid) {
        INVALID
    } else {
        RUNTIME
    }
}

/// The error chain joined with `: `, skipping causes already spelled out by
/// the message above them.
pub fn describe(err: &anyhow::Error) -> String {
    let mut out = err.to_string();
    let mut last = out.clone();
    for cause in err.chain().skip(1) {
        let text = cause.to_string();
        if !last.contains(&text) {
            out.push_str(": ");
            out.push_str(&text);
        }
        last = text;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn classifies() {
        assert_eq!(code_for(&invalid("x")), INVALID);
        assert_eq!(
            code_for(
                &anyhow::Error::new(EvalError::BadLabel {
                    id: "a".into(),
                    value: 3
                })
                .context("eval")
            ),
            INVALID
        );
        let io = std::io::Error::other("disk");
        assert_eq!(code_for(&anyhow::Error::new(io)), RUNTIME);
        assert_eq!(
            code_for(&anyhow::Error::new(TrainError::NonFinite { step: 3 })),
            RUNTIME
        );
    }

    #[test]
    fn describe_skips_repeated_causes() {
        let inner = anyhow::Error::new(std::io::Error::other("disk full"));
        let wrapped = inner
            .context("writing out.json: disk full")
            .context("train");
        assert_eq!(describe(&wrapped), "train: writing out.json: disk full");
    }
}
