//! Ruleset JSONL: one `{"id","expr","provenance","exemplar_ids"}` object per rule.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::exemplars::{ExemplarError, ExemplarMap};
use crate::jsonl::{self, JsonlError};
use crate::rules::{Provenance, Rule, RuleError, Ruleset};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RuleRecord {
    pub id: String,
    pub expr: String,
    #[serde(default = "default_provenance")]
    pub provenance: Provenance,
    #[serde(default)]
    pub exemplar_ids: Vec<String>,
}

fn default_provenance() -> Provenance {
    Provenance::Manual
}

#[derive(Debug, Error)]
pub enum RulesetFileError {
    #[error(transparent)]
    Io(#[from] JsonlError),
    #[error("line {line}: {source}")]
    Rule {
        line: usize,
        #[source]
        source: RuleError,
    },
    #[error("line {line}: {source}")]
    Exemplar {
        line: usize,
        #[source]
        source: ExemplarError,
    },
}

pub fn records(rs: &Ruleset, emap: &ExemplarMap) -> Vec<RuleRecord> {
    rs.iter()
        .map(|r| RuleRecord {
            id: r.id.clone(),
            expr: r.expr.to_string(),
            provenance: r.provenance,
            exemplar_ids: emap.exemplars(&r.id).to_vec(),
        })
        .collect()
}

pub fn from_records<I>(records: I) -> Result<(Ruleset, ExemplarMap), RulesetFileError>
where
    I: IntoIterator<Item = (usize, RuleRecord)>,
{
    let mut rs = Ruleset::default();
    let mut emap = ExemplarMap::new();
    for (line, rec) in records {
        let rule = Rule::parse(rec.id, &rec.expr, rec.provenance)
            .map_err(|source| RulesetFileError::Rule { line, source })?;
        let id = rule.id.clone();
        rs.push(rule)
            .map_err(|source| RulesetFileError::Rule { line, source })?;
        emap.insert(&id, &rec.exemplar_ids)
            .map_err(|source| RulesetFileError::Exemplar { line, source })?;
    }
    Ok((rs, emap))
}

pub fn load_ruleset(path: &Path) -> Result<(Ruleset, ExemplarMap), RulesetFileError> {
    from_records(jsonl::read(path)?)
}

pub fn save_ruleset(path: &Path, rs: &Ruleset, emap: &ExemplarMap) -> Result<(), RulesetFileError> {
    Ok(jsonl::write(path, &records(rs, emap))?)
}

/// The ruleset file contents as a string.
pub fn to_jsonl(rs: &Ruleset, emap: &ExemplarMap) -> String {
    records(rs, emap)
        .iter()
        .map(|r| serde_json::to_string(r).expect("rule records serialize") + "\n")
        .collect()
}
