//! Text normalization shared by the rule engine, the tokenizer and rule induction.

use unicode_normalization::UnicodeNormalization;

/// NFC-normalizes `text`.
pub fn nfc(text: &str) -> String {
    text.nfc().collect()
}

/// Lowercases `text` and splits it on every run of non-alphanumeric characters.
///
/// This is the word segmentation used for `contains` matching, n-gram
/// extraction and hashed token ids, so all three agree on token boundaries.
pub fn words(text: &str) -> Vec<String> {
    text.to_lowercase()
        .split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
        .map(str::to_owned)
        .collect()
}
