//! Unsupervised weak labeling from rule exemplars and a fixed embedder.
//!
//! Embeddings come from a JSONL cache so any sentence embedder can be used;
//! `rbe embed` fills one with the text encoder of a checkpoint.
//!
//! * Mean / Concat: a rule is represented by the mean of its exemplar
//!   embeddings or by the embedding of its concatenated exemplar texts, and a
//!   document is labeled 1 when its best cosine similarity to any rule
//!   reaches `k`.
//! * Distance: a rule whose cover set is dispersed (average cosine distance
//!   at least `k`) is eliminated, and documents covered only by eliminated
//!   rules lose their positive weak label.

use std::collections::{BTreeSet, HashMap};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use indexmap::IndexMap;
use log::debug;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::corpus::{Corpus, Document, Split};
use crate::encoder::cosine_sim;
use crate::evalkit::{metrics, Confusion, Metrics};
use crate::exemplars::ExemplarMap;
use crate::jsonl::{self, JsonlError};
use crate::rules::CoverSet;

#[derive(Debug, Error)]
pub enum WeakError {
    #[error(transparent)]
    Io(#[from] JsonlError),
    #[error("line {line}: `{id}` has dimension {got}, cache has {expected}")]
    Dimension {
        line: usize,
        id: String,
        got: usize,
        expected: usize,
    },
    #[error("line {line}: duplicate cache id `{id}`")]
    Duplicate { line: usize, id: String },
    #[error("line {line}: `{id}` has an empty or non-finite vector")]
    BadVector { line: usize, id: String },
    #[error("no embedding cached for `{0}`")]
    Missing(String),
    #[error("rule `{0}` has no exemplars")]
    NoExemplars(String),
    #[error("unknown document `{0}`")]
    UnknownDoc(String),
    #[error("threshold {0} outside the allowed range")]
    BadThreshold(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CacheRecord {
    pub id: String,
    pub vec: Vec<f32>,
}

/// Document (and concatenation) embeddings of one fixed dimension.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct EmbeddingCache {
    dim: Option<usize>,
    vecs: IndexMap<String, Vec<f64>>,
}

/// Cache key for the embedding of several texts joined by single spaces.
pub fn concat_key<S: AsRef<str>>(texts: &[S]) -> String {
    let joined: Vec<&str> = texts.iter().map(AsRef::as_ref).collect();
    format!(
        "concat:{}",
        hex::encode(Sha256::digest(joined.join(" ").as_bytes()))
    )
}

impl EmbeddingCache {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_records<I: IntoIterator<Item = (usize, CacheRecord)>>(
        records: I,
    ) -> Result<Self, WeakError> {
        let mut cache = Self::new();
        for (line, rec) in records {
            let vec: Vec<f64> = rec.vec.iter().map(|&x| f64::from(x)).collect();
            if vec.is_empty() || vec.iter().any(|x| !x.is_finite()) {
                return Err(WeakError::BadVector { line, id: rec.id });
            }
            if let Some(expected) = cache.dim.filter(|&d| d != vec.len()) {
                return Err(WeakError::Dimension {
                    line,
                    id: rec.id,
                    got: vec.len(),
                    expected,
                });
            }
            if cache.vecs.contains_key(&rec.id) {
                return Err(WeakError::Duplicate { line, id: rec.id });
            }
            cache.dim = Some(vec.len());
            cache.vecs.insert(rec.id, vec);
        }
        Ok(cache)
    }

    /// Adds or replaces one entry. Panics on a dimension mismatch.
    pub fn insert(&mut self, id: impl Into<String>, vec: Vec<f64>) {
        let d = *self.dim.get_or_insert(vec.len());
        assert_eq!(d, vec.len(), "embedding dimension mismatch");
        self.vecs.insert(id.into(), vec);
    }

    pub fn dim(&self) -> Option<usize> {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.vecs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vecs.is_empty()
    }

    pub fn get(&self, id: &str) -> Result<&[f64], WeakError> {
        self.vecs
            .get(id)
            .map(Vec::as_slice)
            .ok_or_else(|| WeakError::Missing(id.to_owned()))
    }

    pub fn records(&self) -> Vec<CacheRecord> {
        self.vecs
            .iter()
            .map(|(id, v)| CacheRecord {
                id: id.clone(),
                vec: v.iter().map(|&x| x as f32).collect(),
            })
            .collect()
    }
}

pub fn load_embedding_cache(path: &Path) -> Result<EmbeddingCache, WeakError> {
    EmbeddingCache::from_records(jsonl::read(path)?)
}

pub fn save_embedding_cache(path: &Path, cache: &EmbeddingCache) -> Result<(), WeakError> {
    Ok(jsonl::write(path, &cache.records())?)
}

#[derive(Debug, Clone, PartialEq)]
pub struct RuleVector {
    pub rule_id: String,
    pub vec: Vec<f64>,
    /// The vector is all zeros, so no similarity to it is defined.
    pub degenerate: bool,
}

impl RuleVector {
    fn new(rule_id: &str, vec: Vec<f64>) -> Self {
        let degenerate = vec.iter().all(|&x| x == 0.0);
        if degenerate {
            log::warn!("rule `{rule_id}` has a zero embedding and will never label a document");
        }
        Self {
            rule_id: rule_id.to_owned(),
            vec,
            degenerate,
        }
    }
}

/// Arithmetic mean of the rule's exemplar embeddings.
pub fn rule_embedding_mean(
    rule_id: &str,
    emap: &ExemplarMap,
    cache: &EmbeddingCache,
) -> Result<RuleVector, WeakError> {
    let ids = emap.exemplars(rule_id);
    if ids.is_empty() {
        return Err(WeakError::NoExemplars(rule_id.to_owned()));
    }
    let mut mean = vec![0.0; cache.dim().unwrap_or(0)];
    for id in ids {
        for (m, x) in mean.iter_mut().zip(cache.get(id)?) {
            *m += x;
        }
    }
    let n = ids.len() as f64;
    mean.iter_mut().for_each(|m| *m /= n);
    Ok(RuleVector::new(rule_id, mean))
}

/// The cached embedding of the rule's exemplar texts concatenated in
/// selection order.
pub fn rule_embedding_concat(
    rule_id: &str,
    emap: &ExemplarMap,
    corpus: &Corpus,
    cache: &EmbeddingCache,
) -> Result<RuleVector, WeakError> {
    let key = concat_key_for(rule_id, emap, corpus)?;
    Ok(RuleVector::new(rule_id, cache.get(&key)?.to_vec()))
}

pub fn concat_key_for(
    rule_id: &str,
    emap: &ExemplarMap,
    corpus: &Corpus,
) -> Result<String, WeakError> {
    Ok(concat_key(&concat_texts(rule_id, emap, corpus)?))
}

pub fn concat_texts<'a>(
    rule_id: &str,
    emap: &ExemplarMap,
    corpus: &'a Corpus,
) -> Result<Vec<&'a str>, WeakError> {
    let ids = emap.exemplars(rule_id);
    if ids.is_empty() {
        return Err(WeakError::NoExemplars(rule_id.to_owned()));
    }
    ids.iter()
        .map(|id| {
            corpus
                .get(id)
                .map(|d| d.text.as_str())
                .ok_or_else(|| WeakError::UnknownDoc(id.clone()))
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    Mean,
    Concat,
    Distance,
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Strategy::Mean => "mean",
            Strategy::Concat => "concat",
            Strategy::Distance => "distance",
        })
    }
}

impl FromStr for Strategy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "mean" => Ok(Strategy::Mean),
            "concat" => Ok(Strategy::Concat),
            "distance" => Ok(Strategy::Distance),
            other => Err(format!(
                "unknown strategy `{other}`, expected mean, concat or distance"
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeakLabelSet {
    pub strategy: Strategy,
    pub k: f64,
    pub labels: IndexMap<String, u8>,
}

impl WeakLabelSet {
    pub fn positives(&self) -> usize {
        self.labels.values().filter(|&&l| l == 1).count()
    }

    pub fn positive_ids(&self) -> BTreeSet<&str> {
        self.labels
            .iter()
            .filter(|(_, &l)| l == 1)
            .map(|(id, _)| id.as_str())
            .collect()
    }

    /// Labeled documents in label-set order, all in the train split.
    pub fn to_documents(&self, corpus: &Corpus) -> Result<Vec<Document>, WeakError> {
        self.labels
            .iter()
            .map(|(id, &l)| {
                let doc = corpus
                    .get(id)
                    .ok_or_else(|| WeakError::UnknownDoc(id.clone()))?;
                Ok(Document::new(
                    id.clone(),
                    doc.text.clone(),
                    Some(l),
                    Split::Train,
                ))
            })
            .collect()
    }

    /// Precision and the other metrics against gold labels where known.
    pub fn score(&self, corpus: &Corpus) -> Option<Metrics> {
        let pairs: Vec<(u8, u8)> = self
            .labels
            .iter()
            .filter_map(|(id, &l)| corpus.get(id).and_then(|d| d.label).map(|g| (l, g)))
            .collect();
        (!pairs.is_empty()).then(|| metrics(&Confusion::from_pairs(pairs)))
    }
}

/// Cosine similarity, with vectors of zero norm treated as maximally
/// dissimilar so that no threshold above -1 accepts them.
fn similarity(a: &[f64], b: &[f64]) -> f64 {
    cosine_sim(a, b).unwrap_or(-1.0)
}

/// Label 1 iff the best similarity to any rule vector reaches `k`.
pub fn label_by_similarity<'a, I>(
    strategy: Strategy,
    rule_vecs: &[RuleVector],
    targets: I,
    cache: &EmbeddingCache,
    k: f64,
) -> Result<WeakLabelSet, WeakError>
where
    I: IntoIterator<Item = &'a str>,
{
    if !(-1.0..=1.0).contains(&k) {
        return Err(WeakError::BadThreshold(k));
    }
    let mut labels = IndexMap::new();
    for id in targets {
        let v = cache.get(id)?;
        let best = rule_vecs
            .iter()
            .map(|r| similarity(&r.vec, v))
            .fold(f64::NEG_INFINITY, f64::max);
        labels.insert(id.to_owned(), u8::from(best >= k));
    }
    Ok(WeakLabelSet {
        strategy,
        k,
        labels,
    })
}

/// Mean cosine distance over a cover set: between neighbours in ascending id
/// order, or over all pairs. Covers of fewer than two documents score 0.
pub fn avg_dist(
    cover_ids: &[String],
    cache: &EmbeddingCache,
    all_pairs: bool,
) -> Result<f64, WeakError> {
    if cover_ids.len() < 2 {
        debug!(
            "cover of {} document(s) has no dispersion, scoring 0",
            cover_ids.len()
        );
        return Ok(0.0);
    }
    let mut ids: Vec<&String> = cover_ids.iter().collect();
    ids.sort();
    let vecs: Vec<&[f64]> = ids
        .iter()
        .map(|id| cache.get(id))
        .collect::<Result<_, _>>()?;
    let dist = |a: &[f64], b: &[f64]| 1.0 - cosine_sim(a, b).unwrap_or(0.0);
    let (sum, n) = if all_pairs {
        let mut s = 0.0;
        for i in 0..vecs.len() {
            for j in i + 1..vecs.len() {
                s += dist(vecs[i], vecs[j]);
            }
        }
        (s, vecs.len() * (vecs.len() - 1) / 2)
    } else {
        (
            vecs.windows(2).map(|w| dist(w[0], w[1])).sum(),
            vecs.len() - 1,
        )
    };
    Ok(sum / n as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RuleDispersion {
    pub rule_id: String,
    pub avg_dist: f64,
    pub eliminated: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DistanceOutcome {
    pub labels: WeakLabelSet,
    pub rules: Vec<RuleDispersion>,
}

/// Rule weak labels (1 on any cover) after eliminating every rule whose
/// cover has `avg_dist ≥ k`: a document stays positive only while some
/// surviving rule covers it.
pub fn distance_filter<'a, I>(
    cover_sets: &[CoverSet],
    targets: I,
    cache: &EmbeddingCache,
    k: f64,
    all_pairs: bool,
) -> Result<DistanceOutcome, WeakError>
where
    I: IntoIterator<Item = &'a str>,
{
    if k.is_nan() || k < 0.0 {
        return Err(WeakError::BadThreshold(k));
    }
    let mut rules = Vec::with_capacity(cover_sets.len());
    let mut kept: HashMap<&str, bool> = HashMap::new();
    for cover in cover_sets {
        let d = avg_dist(&cover.doc_ids, cache, all_pairs)?;
        let eliminated = d >= k;
        if eliminated {
            debug!("eliminating rule `{}` (avg distance {d:.4})", cover.rule_id);
        }
        for id in &cover.doc_ids {
            let e = kept.entry(id.as_str()).or_insert(false);
            *e |= !eliminated;
        }
        rules.push(RuleDispersion {
            rule_id: cover.rule_id.clone(),
            avg_dist: d,
            eliminated,
        });
    }
    let labels = targets
        .into_iter()
        .map(|id| {
            (
                id.to_owned(),
                u8::from(kept.get(id).copied().unwrap_or(false)),
            )
        })
        .collect();
    Ok(DistanceOutcome {
        labels: WeakLabelSet {
            strategy: Strategy::Distance,
            k,
            labels,
        },
        rules,
    })
}

/// `n` evenly spaced thresholds from `lo` to `hi` inclusive.
pub fn k_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![lo],
        _ => (0..n)
            .map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64)
            .collect(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub k: f64,
    pub positives: usize,
    pub metrics: Option<Metrics>,
}

/// Weak-label size and quality across a grid of thresholds.
pub fn sweep_similarity(
    strategy: Strategy,
    rule_vecs: &[RuleVector],
    corpus: &Corpus,
    cache: &EmbeddingCache,
    grid: &[f64],
) -> Result<Vec<SweepPoint>, WeakError> {
    grid.iter()
        .map(|&k| {
            let set = label_by_similarity(
                strategy,
                rule_vecs,
                corpus.docs().iter().map(|d| d.id.as_str()),
                cache,
                k,
            )?;
            Ok(SweepPoint {
                k,
                positives: set.positives(),
                metrics: set.score(corpus),
            })
        })
        .collect()
}
