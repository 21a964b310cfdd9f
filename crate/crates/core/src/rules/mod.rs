//! Boolean text rules used as black-box labeling functions.
//!
//! Rules are written in a small DSL (`contains("hate") AND NOT regex("^rt ")`),
//! parsed into a normalized [`Expr`] and evaluated on lowercased, tokenized
//! text. [`apply_ruleset`] computes cover sets and per-document fired rules.

mod ast;
mod error;
mod eval;
mod parser;

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

pub use ast::{Atom, Expr, Pattern, MAX_NGRAM};
pub use error::RuleError;
pub use eval::TextView;
pub use parser::parse;

use crate::corpus::Corpus;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    Manual,
    Induced,
    Imported,
}

impl fmt::Display for Provenance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Provenance::Manual => "manual",
            Provenance::Induced => "induced",
            Provenance::Imported => "imported",
        })
    }
}

impl FromStr for Provenance {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "manual" => Ok(Provenance::Manual),
            "induced" => Ok(Provenance::Induced),
            "imported" => Ok(Provenance::Imported),
            other => Err(format!("unknown provenance `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Rule {
    pub id: String,
    pub expr: Expr,
    pub provenance: Provenance,
}

impl Rule {
    pub fn new(id: impl Into<String>, expr: Expr, provenance: Provenance) -> Self {
        Self {
            id: id.into(),
            expr,
            provenance,
        }
    }

    pub fn parse(
        id: impl Into<String>,
        src: &str,
        provenance: Provenance,
    ) -> Result<Self, RuleError> {
        let id = id.into();
        if id.trim().is_empty() {
            return Err(RuleError::EmptyId);
        }
        Ok(Self::new(id, parse(src)?, provenance))
    }

    pub fn fires(&self, view: &TextView) -> bool {
        eval::eval_expr(&self.expr, view)
    }
}

/// Whether `rule` fires on `text`.
pub fn evaluate(rule: &Rule, text: &str) -> bool {
    rule.fires(&TextView::new(text))
}

/// Ordered rules with unique ids. Order is the tie-break order everywhere.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Ruleset {
    rules: Vec<Rule>,
    index: HashMap<String, usize>,
}

impl Ruleset {
    pub fn new(rules: Vec<Rule>) -> Result<Self, RuleError> {
        let mut rs = Self::default();
        for r in rules {
            rs.push(r)?;
        }
        Ok(rs)
    }

    pub fn push(&mut self, rule: Rule) -> Result<(), RuleError> {
        if self.index.contains_key(&rule.id) {
            return Err(RuleError::DuplicateId(rule.id));
        }
        self.index.insert(rule.id.clone(), self.rules.len());
        self.rules.push(rule);
        Ok(())
    }

    pub fn remove(&mut self, id: &str) -> Result<Rule, RuleError> {
        let pos = self
            .index
            .get(id)
            .copied()
            .ok_or_else(|| RuleError::UnknownId(id.to_owned()))?;
        let rule = self.rules.remove(pos);
        self.reindex();
        Ok(rule)
    }

    /// Replaces the expression of an existing rule in place.
    pub fn replace(&mut self, rule: Rule) -> Result<Rule, RuleError> {
        let pos = self
            .position(&rule.id)
            .ok_or_else(|| RuleError::UnknownId(rule.id.clone()))?;
        Ok(std::mem::replace(&mut self.rules[pos], rule))
    }

    fn reindex(&mut self) {
        self.index = self
            .rules
            .iter()
            .enumerate()
            .map(|(i, r)| (r.id.clone(), i))
            .collect();
    }

    pub fn get(&self, id: &str) -> Option<&Rule> {
        self.index.get(id).map(|&i| &self.rules[i])
    }

    pub fn position(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    pub fn rules(&self) -> &[Rule] {
        &self.rules
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Rule> {
        self.rules.iter()
    }

    pub fn len(&self) -> usize {
        self.rules.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rules.is_empty()
    }

    /// Indices of the rules firing on `view`, in ruleset order.
    pub fn fired_indices(&self, view: &TextView) -> Vec<usize> {
        self.rules
            .iter()
            .enumerate()
            .filter(|(_, r)| r.fires(view))
            .map(|(i, _)| i)
            .collect()
    }

    /// Ids of the rules firing on `text`, in ruleset order.
    pub fn fired_ids(&self, text: &str) -> Vec<String> {
        let view = TextView::new(text);
        self.fired_indices(&view)
            .into_iter()
            .map(|i| self.rules[i].id.clone())
            .collect()
    }
}

impl<'a> IntoIterator for &'a Ruleset {
    type Item = &'a Rule;
    type IntoIter = std::slice::Iter<'a, Rule>;

    fn into_iter(self) -> Self::IntoIter {
        self.rules.iter()
    }
}

/// Documents on which one rule fires.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverSet {
    pub rule_id: String,
    /// Sorted ascending.
    pub doc_ids: Vec<String>,
    /// Fraction of labeled covered documents whose gold label is 1.
    pub label_agreement: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FiredRules {
    pub doc_id: String,
    /// Ruleset order.
    pub rule_ids: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Application {
    pub cover_sets: Vec<CoverSet>,
    /// One entry per document, in corpus order.
    pub fired: Vec<FiredRules>,
}

impl Application {
    pub fn cover_set(&self, rule_id: &str) -> Option<&CoverSet> {
        self.cover_sets.iter().find(|c| c.rule_id == rule_id)
    }
}

pub fn apply_ruleset(rs: &Ruleset, corpus: &Corpus) -> Application {
    let mut covers: Vec<Vec<usize>> = vec![Vec::new(); rs.len()];
    let mut fired = Vec::with_capacity(corpus.len());
    for (di, doc) in corpus.docs().iter().enumerate() {
        let view = TextView::new(&doc.text);
        let hits = rs.fired_indices(&view);
        for &ri in &hits {
            covers[ri].push(di);
        }
        fired.push(FiredRules {
            doc_id: doc.id.clone(),
            rule_ids: hits.iter().map(|&ri| rs.rules[ri].id.clone()).collect(),
        });
    }
    let cover_sets = rs
        .iter()
        .zip(covers)
        .map(|(rule, docs)| {
            let labels: Vec<u8> = docs
                .iter()
                .filter_map(|&di| corpus.docs()[di].label)
                .collect();
            let label_agreement = (!labels.is_empty())
                .then(|| labels.iter().filter(|&&l| l == 1).count() as f64 / labels.len() as f64);
            let mut doc_ids: Vec<String> = docs
                .into_iter()
                .map(|di| corpus.docs()[di].id.clone())
                .collect();
            doc_ids.sort();
            CoverSet {
                rule_id: rule.id.clone(),
                doc_ids,
                label_agreement,
            }
        })
        .collect();
    Application { cover_sets, fired }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WeakVote {
    Positive,
    Abstain,
}

/// Positive iff at least one rule fires, abstain otherwise. Corpus order.
pub fn weak_label(rs: &Ruleset, corpus: &Corpus) -> IndexMap<String, WeakVote> {
    corpus
        .docs()
        .iter()
        .map(|doc| {
            let view = TextView::new(&doc.text);
            let vote = if rs.iter().any(|r| r.fires(&view)) {
                WeakVote::Positive
            } else {
                WeakVote::Abstain
            };
            (doc.id.clone(), vote)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{Document, Split};

    fn doc(id: &str, text: &str, label: Option<u8>) -> Document {
        Document::new(id, text, label, Split::Train)
    }

    fn two_rules() -> Ruleset {
        Ruleset::new(vec![
            Rule::parse("A", r#"contains("x")"#, Provenance::Manual).unwrap(),
            Rule::parse("B", r#"contains("y")"#, Provenance::Manual).unwrap(),
        ])
        .unwrap()
    }

    #[test]
    fn cover_sets_and_fired_lists() {
        let corpus = Corpus::new(vec![
            doc("1", "x here", Some(1)),
            doc("2", "nothing", Some(0)),
            doc("3", "y and x", Some(0)),
            doc("4", "z", None),
        ])
        .unwrap();
        let app = apply_ruleset(&two_rules(), &corpus);
        assert_eq!(app.cover_set("A").unwrap().doc_ids, vec!["1", "3"]);
        assert_eq!(app.cover_set("B").unwrap().doc_ids, vec!["3"]);
        assert_eq!(app.fired[2].rule_ids, vec!["A", "B"]);
        assert!(app.fired[1].rule_ids.is_empty());
        assert_eq!(app.cover_set("A").unwrap().label_agreement, Some(0.5));
        assert_eq!(app.cover_set("B").unwrap().label_agreement, Some(0.0));
    }

    #[test]
    fn empty_ruleset_covers_nothing() {
        let corpus = Corpus::new(vec![doc("1", "x", None)]).unwrap();
        let app = apply_ruleset(&Ruleset::default(), &corpus);
        assert!(app.cover_sets.is_empty());
        assert!(app.fired.iter().all(|f| f.rule_ids.is_empty()));
    }

    #[test]
    fn tautology_covers_corpus() {
        let rs = Ruleset::new(vec![Rule::parse(
            "t",
            r#"contains("a") OR NOT contains("a")"#,
            Provenance::Manual,
        )
        .unwrap()])
        .unwrap();
        let corpus = Corpus::new(vec![
            doc("b", "a", None),
            doc("a", "", None),
            doc("c", "q", None),
        ]);
        // empty text is rejected by the corpus itself
        assert!(corpus.is_err());
        let corpus = Corpus::new(vec![
            doc("b", "a", None),
            doc("a", "?", None),
            doc("c", "q", None),
        ])
        .unwrap();
        let app = apply_ruleset(&rs, &corpus);
        assert_eq!(app.cover_sets[0].doc_ids, vec!["a", "b", "c"]);
    }

    #[test]
    fn weak_labels() {
        let corpus = Corpus::new(vec![doc("1", "x y", None), doc("2", "z", None)]).unwrap();
        let wl = weak_label(&two_rules(), &corpus);
        assert_eq!(wl["1"], WeakVote::Positive);
        assert_eq!(wl["2"], WeakVote::Abstain);
    }

    #[test]
    fn ruleset_ids_unique_and_removal_reindexes() {
        let mut rs = two_rules();
        let dup = Rule::parse("A", r#"contains("q")"#, Provenance::Manual).unwrap();
        assert_eq!(rs.push(dup), Err(RuleError::DuplicateId("A".into())));
        rs.remove("A").unwrap();
        assert_eq!(rs.position("B"), Some(0));
        assert!(rs.remove("A").is_err());
    }
}
