//! Documents, corpora and the corpus JSONL format.

use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::jsonl::{self, JsonlError};
use crate::text;

#[derive(
    Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default, Serialize, Deserialize,
)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    #[default]
    Train,
    Val,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl std::fmt::Display for Split {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Split {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(format!("unknown split `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    pub id: String,
    pub text: String,
    /// Gold label, 1 = hateful.
    pub label: Option<u8>,
    #[serde(default)]
    pub split: Split,
}

impl Document {
    pub fn new(
        id: impl Into<String>,
        text: impl Into<String>,
        label: Option<u8>,
        split: Split,
    ) -> Self {
        Self {
            id: id.into(),
            text: text.into(),
            label,
            split,
        }
    }
}

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error(transparent)]
    Io(#[from] JsonlError),
    #[error("line {line}: duplicate document id `{id}`")]
    DuplicateId { line: usize, id: String },
    #[error("line {line}: document `{id}` has empty text")]
    EmptyText { line: usize, id: String },
    #[error("line {line}: label must be 0, 1 or null, got {value}")]
    BadLabel { line: usize, value: String },
    #[error("line {line}: document id must be non-empty")]
    EmptyId { line: usize },
    #[error("unknown document id `{0}`")]
    UnknownId(String),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct SplitCount {
    pub total: usize,
    pub positive: usize,
    pub negative: usize,
    pub unlabeled: usize,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct SplitCounts {
    pub train: SplitCount,
    pub val: SplitCount,
    pub test: SplitCount,
}

impl SplitCounts {
    pub fn get(&self, split: Split) -> &SplitCount {
        match split {
            Split::Train => &self.train,
            Split::Val => &self.val,
            Split::Test => &self.test,
        }
    }
}

/// Ordered, validated documents with an id index. Immutable once built.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Corpus {
    docs: Vec<Document>,
    index: HashMap<String, usize>,
}

impl Corpus {
    /// Validates `docs`; error line numbers are 1-based positions.
    pub fn new(docs: Vec<Document>) -> Result<Self, CorpusError> {
        let lines = (1..=docs.len()).collect::<Vec<_>>();
        Self::with_lines(docs, &lines)
    }

    fn with_lines(docs: Vec<Document>, lines: &[usize]) -> Result<Self, CorpusError> {
        let mut index = HashMap::with_capacity(docs.len());
        for (i, (doc, &line)) in docs.iter().zip(lines).enumerate() {
            if doc.id.is_empty() {
                return Err(CorpusError::EmptyId { line });
            }
            if doc.text.trim().is_empty() {
                return Err(CorpusError::EmptyText {
                    line,
                    id: doc.id.clone(),
                });
            }
            if let Some(l) = doc.label {
                if l > 1 {
                    return Err(CorpusError::BadLabel {
                        line,
                        value: l.to_string(),
                    });
                }
            }
            if index.insert(doc.id.clone(), i).is_some() {
                return Err(CorpusError::DuplicateId {
                    line,
                    id: doc.id.clone(),
                });
            }
        }
        Ok(Self { docs, index })
    }

    pub fn docs(&self) -> &[Document] {
        &self.docs
    }

    pub fn get(&self, id: &str) -> Option<&Document> {
        self.index.get(id).map(|&i| &self.docs[i])
    }

    pub fn require(&self, id: &str) -> Result<&Document, CorpusError> {
        self.get(id)
            .ok_or_else(|| CorpusError::UnknownId(id.to_owned()))
    }

    pub fn position(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    pub fn len(&self) -> usize {
        self.docs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.docs.is_empty()
    }

    pub fn split_docs(&self, split: Split) -> impl Iterator<Item = &Document> {
        self.docs.iter().filter(move |d| d.split == split)
    }

    /// The documents of one split as a corpus of their own, order preserved.
    pub fn subset(&self, split: Split) -> Corpus {
        let docs: Vec<Document> = self.split_docs(split).cloned().collect();
        let index = docs
            .iter()
            .enumerate()
            .map(|(i, d)| (d.id.clone(), i))
            .collect();
        Corpus { docs, index }
    }

    pub fn split_counts(&self) -> SplitCounts {
        let mut counts = SplitCounts::default();
        for d in &self.docs {
            let c = match d.split {
                Split::Train => &mut counts.train,
                Split::Val => &mut counts.val,
                Split::Test => &mut counts.test,
            };
            c.total += 1;
            match d.label {
                Some(1) => c.positive += 1,
                Some(_) => c.negative += 1,
                None => c.unlabeled += 1,
            }
        }
        counts
    }
}

#[derive(Deserialize)]
struct DocRecord {
    id: String,
    text: String,
    #[serde(default)]
    label: serde_json::Value,
    #[serde(default)]
    split: Split,
}

fn parse_label(line: usize, value: &serde_json::Value) -> Result<Option<u8>, CorpusError> {
    match value {
        serde_json::Value::Null => Ok(None),
        serde_json::Value::Number(n) if n.as_u64() == Some(0) => Ok(Some(0)),
        serde_json::Value::Number(n) if n.as_u64() == Some(1) => Ok(Some(1)),
        other => Err(CorpusError::BadLabel {
            line,
            value: other.to_string(),
        }),
    }
}

fn from_records(records: Vec<(usize, DocRecord)>) -> Result<Corpus, CorpusError> {
    let mut docs = Vec::with_capacity(records.len());
    let mut lines = Vec::with_capacity(records.len());
    for (line, r) in records {
        let label = parse_label(line, &r.label)?;
        docs.push(Document {
            id: r.id,
            text: text::nfc(&r.text),
            label,
            split: r.split,
        });
        lines.push(line);
    }
    Corpus::with_lines(docs, &lines)
}

/// Loads a corpus JSONL file. Text is NFC-normalized; errors cite the file line.
pub fn load_corpus(path: &Path) -> Result<Corpus, CorpusError> {
    from_records(jsonl::read(path)?)
}

pub fn read_corpus<R: std::io::BufRead>(reader: R) -> Result<Corpus, CorpusError> {
    from_records(jsonl::from_reader(reader)?)
}

pub fn save_corpus(path: &Path, corpus: &Corpus) -> Result<(), CorpusError> {
    Ok(jsonl::write(path, corpus.docs())?)
}
