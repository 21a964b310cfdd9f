//! Binary classification metrics; the positive class is 1 (hateful).

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EvalError {
    #[error(
        "prediction and gold id sets differ: {missing} gold ids unpredicted{}, {extra} predictions without gold{}",
        example(.missing_example),
        example(.extra_example)
    )]
    IdMismatch {
        missing: usize,
        missing_example: Option<String>,
        extra: usize,
        extra_example: Option<String>,
    },
    #[error("label for `{id}` must be 0 or 1, got {value}")]
    BadLabel { id: String, value: u8 },
}

fn example(id: &Option<String>) -> String {
    id.as_ref()
        .map_or_else(String::new, |id| format!(" (e.g. `{id}`)"))
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

impl Confusion {
    pub fn total(&self) -> usize {
        self.tp + self.fp + self.tn + self.fn_
    }

    /// Counts `(pred, gold)` pairs.
    pub fn from_pairs<I: IntoIterator<Item = (u8, u8)>>(pairs: I) -> Self {
        let mut c = Confusion::default();
        for (p, g) in pairs {
            match (p == 1, g == 1) {
                (true, true) => c.tp += 1,
                (true, false) => c.fp += 1,
                (false, false) => c.tn += 1,
                (false, true) => c.fn_ += 1,
            }
        }
        c
    }
}

/// Confusion counts over identical id sets.
pub fn confusion(
    preds: &BTreeMap<String, u8>,
    golds: &BTreeMap<String, u8>,
) -> Result<Confusion, EvalError> {
    let missing: Vec<&String> = golds.keys().filter(|k| !preds.contains_key(*k)).collect();
    let extra: Vec<&String> = preds.keys().filter(|k| !golds.contains_key(*k)).collect();
    if !missing.is_empty() || !extra.is_empty() {
        return Err(EvalError::IdMismatch {
            missing: missing.len(),
            missing_example: missing.first().map(|s| s.to_string()),
            extra: extra.len(),
            extra_example: extra.first().map(|s| s.to_string()),
        });
    }
    for (id, &v) in preds.iter().chain(golds) {
        if v > 1 {
            return Err(EvalError::BadLabel {
                id: id.clone(),
                value: v,
            });
        }
    }
    Ok(Confusion::from_pairs(
        golds.iter().map(|(id, &g)| (preds[id], g)),
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub precision: f64,
    pub recall: f64,
    pub f1_pos: f64,
    /// Mean of the positive-class and negative-class F1.
    pub macro_f1: f64,
    pub accuracy: f64,
    /// Set when any ratio had a zero denominator and was defined as 0.
    pub zero_division_hit: bool,
}

fn ratio(num: usize, den: usize, hit: &mut bool) -> f64 {
    if den == 0 {
        *hit = true;
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// F1 from counts, `2tp / (2tp + fp + fn)`, so the only undefined case is a
/// class that never appears in either column.
fn f1(tp: usize, fp: usize, fn_: usize, hit: &mut bool) -> f64 {
    ratio(2 * tp, 2 * tp + fp + fn_, hit)
}

pub fn metrics(c: &Confusion) -> Metrics {
    let mut hit = false;
    let precision = ratio(c.tp, c.tp + c.fp, &mut hit);
    let recall = ratio(c.tp, c.tp + c.fn_, &mut hit);
    let f1_pos = f1(c.tp, c.fp, c.fn_, &mut hit);
    let f1_neg = f1(c.tn, c.fn_, c.fp, &mut hit);
    let accuracy = ratio(c.tp + c.tn, c.total(), &mut hit);
    Metrics {
        precision,
        recall,
        f1_pos,
        macro_f1: (f1_pos + f1_neg) / 2.0,
        accuracy,
        zero_division_hit: hit,
    }
}
