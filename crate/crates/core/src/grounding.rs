//! Inference with the dual encoder and rule-grounded traces.
//!
//! A text is scored by the cosine similarity between the rule encoder's view
//! of its exemplars and the text encoder's view of the text. Positive
//! predictions are traced back to the rules that fire on the text and to the
//! nearest indexed exemplars together with the rules that own them.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{Corpus, Document};
use crate::encoder::{cosine_sim, Embedding, EncoderError, TrainedModel};
use crate::evalkit::{metrics, Confusion};
use crate::exemplars::{
    assemble, build_rule_input_seeded, fired_blocks, ExemplarError, ExemplarMap, InputConfig,
};
use crate::rules::Ruleset;

pub const DEFAULT_TAU: f64 = 0.5;
pub const DEFAULT_K: usize = 3;

#[derive(Debug, Error)]
pub enum GroundingError {
    #[error(transparent)]
    Exemplar(#[from] ExemplarError),
    #[error(transparent)]
    Encoder(#[from] EncoderError),
    #[error("exemplar index was built for checkpoint {index}, model is {model}")]
    StaleIndex { index: String, model: String },
    #[error("threshold calibration needs both classes in the validation split")]
    SingleClass,
    #[error("text is empty")]
    EmptyText,
    #[error("threshold {0} outside [-1, 1]")]
    BadThreshold(f64),
}

/// How the rule-side input is formed when no rule with exemplars fires.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Fallback {
    /// The `fallback_count` exemplars nearest to the text embedding.
    Nearest,
    /// Seeded uniform sampling, as during training.
    Random { seed: u64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InferenceConfig {
    pub input: InputConfig,
    pub fallback: Fallback,
}

impl Default for InferenceConfig {
    fn default() -> Self {
        Self {
            input: InputConfig::default(),
            fallback: Fallback::Nearest,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IndexEntry {
    pub exemplar_id: String,
    pub rule_id: String,
    pub embedding: Embedding,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Neighbor {
    pub exemplar: String,
    pub rule: String,
    pub sim: f64,
}

/// Rule-encoder embeddings of every mapped exemplar, each encoded alone.
#[derive(Debug, Clone, PartialEq)]
pub struct ExemplarIndex {
    digest: String,
    entries: Vec<IndexEntry>,
}

fn encode_exemplar(
    model: &TrainedModel,
    rule_id: &str,
    doc_id: &str,
    corpus: &Corpus,
    cfg: &InputConfig,
) -> Result<IndexEntry, GroundingError> {
    let cfg = InputConfig {
        tokenizer: model.encoders().tokenizer(),
        ..*cfg
    };
    let input = assemble(doc_id, &[vec![doc_id.to_owned()]], corpus, &cfg)?;
    Ok(IndexEntry {
        exemplar_id: doc_id.to_owned(),
        rule_id: rule_id.to_owned(),
        embedding: model.rule().encode(&input.tokens)?,
    })
}

impl ExemplarIndex {
    pub fn build(
        model: &TrainedModel,
        emap: &ExemplarMap,
        corpus: &Corpus,
        cfg: &InputConfig,
    ) -> Result<Self, GroundingError> {
        let entries = emap
            .entries()
            .map(|(r, d)| encode_exemplar(model, r, d, corpus, cfg))
            .collect::<Result<_, _>>()?;
        Ok(Self {
            digest: model.digest().to_owned(),
            entries,
        })
    }

    /// Rebuilds against a modified exemplar map, re-encoding only the
    /// exemplars of `changed` rules and reusing every other entry as is.
    pub fn rebuild_rules(
        &self,
        model: &TrainedModel,
        emap: &ExemplarMap,
        corpus: &Corpus,
        cfg: &InputConfig,
        changed: &[&str],
    ) -> Result<Self, GroundingError> {
        if self.digest != model.digest() {
            return Err(GroundingError::StaleIndex {
                index: self.digest.clone(),
                model: model.digest().to_owned(),
            });
        }
        let mut entries = Vec::with_capacity(emap.exemplar_count());
        for (r, d) in emap.entries() {
            let reuse = if changed.contains(&r) {
                None
            } else {
                self.entries
                    .iter()
                    .find(|e| e.rule_id == r && e.exemplar_id == d)
            };
            match reuse {
                Some(e) => entries.push(e.clone()),
                None => entries.push(encode_exemplar(model, r, d, corpus, cfg)?),
            }
        }
        Ok(Self {
            digest: self.digest.clone(),
            entries,
        })
    }

    pub fn digest(&self) -> &str {
        &self.digest
    }

    pub fn entries(&self) -> &[IndexEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Exact cosine scan; similarity descending, index order on ties.
    pub fn nearest(&self, query: &[f64], k: usize) -> Vec<Neighbor> {
        let mut scored: Vec<(usize, f64)> = self
            .entries
            .iter()
            .enumerate()
            .filter_map(|(i, e)| {
                cosine_sim(e.embedding.as_slice(), query)
                    .ok()
                    .map(|s| (i, s))
            })
            .collect();
        scored.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        scored
            .into_iter()
            .take(k)
            .map(|(i, sim)| Neighbor {
                exemplar: self.entries[i].exemplar_id.clone(),
                rule: self.entries[i].rule_id.clone(),
                sim,
            })
            .collect()
    }
}

/// A scored text before thresholding.
#[derive(Debug, Clone, PartialEq)]
pub struct Scored {
    pub score: f64,
    pub fired_rules: Vec<String>,
    pub exemplar_ids: Vec<String>,
    pub text_embedding: Embedding,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundedPrediction {
    pub doc_id: String,
    pub label: u8,
    pub score: f64,
    pub fired_rules: Vec<String>,
    pub nearest: Vec<Neighbor>,
}

/// Predictions file record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub id: String,
    pub pred: u8,
    pub score: f64,
}

/// Everything needed to score texts against one checkpoint and ruleset.
#[derive(Debug, Clone, Copy)]
pub struct Predictor<'a> {
    model: &'a TrainedModel,
    ruleset: &'a Ruleset,
    emap: &'a ExemplarMap,
    corpus: &'a Corpus,
    index: &'a ExemplarIndex,
    cfg: InferenceConfig,
}

impl<'a> Predictor<'a> {
    pub fn new(
        model: &'a TrainedModel,
        ruleset: &'a Ruleset,
        emap: &'a ExemplarMap,
        corpus: &'a Corpus,
        index: &'a ExemplarIndex,
        mut cfg: InferenceConfig,
    ) -> Result<Self, GroundingError> {
        cfg.input.tokenizer = model.encoders().tokenizer();
        if emap.is_empty() {
            return Err(ExemplarError::Empty.into());
        }
        if index.digest() != model.digest() {
            return Err(GroundingError::StaleIndex {
                index: index.digest().to_owned(),
                model: model.digest().to_owned(),
            });
        }
        Ok(Self {
            model,
            ruleset,
            emap,
            corpus,
            index,
            cfg,
        })
    }

    pub fn score(&self, doc_id: &str, text: &str) -> Result<Scored, GroundingError> {
        let tokenizer = self.cfg.input.tokenizer;
        let text_embedding = self.model.text().encode(&tokenizer.tokenize(text))?;
        let fired_rules = self.ruleset.fired_ids(text);
        let blocks = fired_blocks(&fired_rules, self.emap);
        let input = if !blocks.is_empty() {
            assemble(doc_id, &blocks, self.corpus, &self.cfg.input)?
        } else {
            match self.cfg.fallback {
                Fallback::Nearest => {
                    let near = self.index.nearest(
                        text_embedding.as_slice(),
                        self.cfg.input.fallback_count.max(1),
                    );
                    let blocks: Vec<Vec<String>> =
                        near.into_iter().map(|n| vec![n.exemplar]).collect();
                    if blocks.is_empty() {
                        return Err(ExemplarError::Empty.into());
                    }
                    assemble(doc_id, &blocks, self.corpus, &self.cfg.input)?
                }
                Fallback::Random { seed } => build_rule_input_seeded(
                    doc_id,
                    &[],
                    self.emap,
                    self.corpus,
                    &self.cfg.input,
                    seed,
                )?,
            }
        };
        let rule_embedding = self.model.rule().encode(&input.tokens)?;
        let score = cosine_sim(rule_embedding.as_slice(), text_embedding.as_slice())?;
        Ok(Scored {
            score,
            fired_rules,
            exemplar_ids: input.exemplar_ids,
            text_embedding,
        })
    }

    /// Label 1 iff the score reaches `tau`.
    pub fn predict(&self, doc: &Document, tau: f64) -> Result<(u8, f64), GroundingError> {
        check_tau(tau)?;
        let s = self.score(&doc.id, &doc.text)?;
        Ok((u8::from(s.score >= tau), s.score))
    }

    /// Prediction plus its trace: fired rules and the `k` nearest exemplars.
    pub fn ground(
        &self,
        doc_id: &str,
        text: &str,
        tau: f64,
        k: usize,
    ) -> Result<GroundedPrediction, GroundingError> {
        check_tau(tau)?;
        if text.trim().is_empty() {
            return Err(GroundingError::EmptyText);
        }
        let s = self.score(doc_id, text)?;
        Ok(GroundedPrediction {
            doc_id: doc_id.to_owned(),
            label: u8::from(s.score >= tau),
            score: s.score,
            nearest: self.index.nearest(s.text_embedding.as_slice(), k),
            fired_rules: s.fired_rules,
        })
    }

    /// `(score, gold)` for every labeled document in `docs`.
    pub fn score_labeled<'d, I>(&self, docs: I) -> Result<Vec<(f64, u8)>, GroundingError>
    where
        I: IntoIterator<Item = &'d Document>,
    {
        docs.into_iter()
            .filter_map(|d| d.label.map(|l| (d, l)))
            .map(|(d, l)| Ok((self.score(&d.id, &d.text)?.score, l)))
            .collect()
    }
}

fn check_tau(tau: f64) -> Result<(), GroundingError> {
    if (-1.0..=1.0).contains(&tau) {
        Ok(())
    } else {
        Err(GroundingError::BadThreshold(tau))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub tau: f64,
    pub macro_f1: f64,
}

/// Threshold maximizing macro-F1 over `-1` and the midpoints between
/// consecutive distinct observed scores; ties go to the lower threshold.
pub fn calibrate_threshold(scored: &[(f64, u8)]) -> Result<Calibration, GroundingError> {
    let positives = scored.iter().filter(|(_, l)| *l == 1).count();
    if positives == 0 || positives == scored.len() {
        return Err(GroundingError::SingleClass);
    }
    let mut sorted: Vec<(f64, u8)> = scored.to_vec();
    sorted.sort_by(|a, b| a.0.total_cmp(&b.0));
    let n = sorted.len();
    let negatives = n - positives;
    let evaluate = |below: usize, below_pos: usize| {
        // everything from index `below` up is predicted positive
        let tp = positives - below_pos;
        let fn_ = below_pos;
        let tn = below - below_pos;
        let fp = negatives - tn;
        metrics(&Confusion { tp, fp, tn, fn_ }).macro_f1
    };
    let mut best = Calibration {
        tau: -1.0,
        macro_f1: evaluate(0, 0),
    };
    let mut below_pos = 0;
    for i in 0..n - 1 {
        below_pos += usize::from(sorted[i].1 == 1);
        let (lo, hi) = (sorted[i].0, sorted[i + 1].0);
        if lo == hi {
            continue;
        }
        let f = evaluate(i + 1, below_pos);
        if f > best.macro_f1 {
            best = Calibration {
                tau: (lo + hi) / 2.0,
                macro_f1: f,
            };
        }
    }
    Ok(best)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn midpoint_threshold() {
        let c = calibrate_threshold(&[(0.9, 1), (0.1, 0)]).unwrap();
        assert_eq!(c.tau, 0.5);
        assert_eq!(c.macro_f1, 1.0);
    }

    #[test]
    fn single_class_rejected() {
        assert!(matches!(
            calibrate_threshold(&[(0.9, 1), (0.2, 1)]),
            Err(GroundingError::SingleClass)
        ));
        assert!(matches!(
            calibrate_threshold(&[(0.9, 0)]),
            Err(GroundingError::SingleClass)
        ));
    }

    #[test]
    fn ties_prefer_lower_threshold() {
        // Cutting at 0.35 or at 0.85 misclassifies one document either way.
        let c = calibrate_threshold(&[(0.2, 0), (0.5, 1), (0.8, 0), (0.9, 1)]).unwrap();
        let at_035 = metrics(&Confusion {
            tp: 2,
            fp: 1,
            tn: 1,
            fn_: 0,
        })
        .macro_f1;
        let at_085 = metrics(&Confusion {
            tp: 1,
            fp: 0,
            tn: 2,
            fn_: 1,
        })
        .macro_f1;
        assert!((at_035 - at_085).abs() < 1e-12);
        assert_eq!(c.tau, 0.35);
        assert_eq!(c.macro_f1, at_035);
        let c = calibrate_threshold(&[(0.0, 0), (0.4, 1), (0.6, 0), (1.0, 1), (0.8, 1), (0.2, 0)])
            .unwrap();
        assert!((-1.0..=1.0).contains(&c.tau));
    }

    #[test]
    fn duplicate_scores_never_split() {
        let c = calibrate_threshold(&[(0.5, 1), (0.5, 0), (0.9, 1)]).unwrap();
        assert!(c.tau == -1.0 || c.tau == 0.7);
    }
}
