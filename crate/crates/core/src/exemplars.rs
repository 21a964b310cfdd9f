//! Rule → exemplar assignment and assembly of the rule-side encoder input.
//!
//! An exemplar is a training document its rule correctly fires on. No
//! document may serve two rules. The rule-side input for a text is
//! `[CLS] block₁ [SEP] block₂ ...` where each block is the concatenated
//! tokens of one fired rule's exemplars.

use std::collections::HashMap;
use std::hash::Hasher;

use fnv::FnvHasher;
use indexmap::IndexMap;
use log::warn;
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::corpus::{Corpus, Split};
use crate::encoder::{Tokenizer, CLS, SEP};
use crate::rules::{Ruleset, TextView};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ExemplarError {
    #[error("document `{doc_id}` is already the exemplar of rule `{owner}`")]
    Conflict { doc_id: String, owner: String },
    #[error("unknown exemplar document `{0}`")]
    UnknownDoc(String),
    #[error("unknown rule `{0}`")]
    UnknownRule(String),
    #[error("rule `{rule_id}` does not fire on exemplar `{doc_id}`")]
    NotFiring { rule_id: String, doc_id: String },
    #[error("exemplar `{0}` is labeled non-hateful")]
    NegativeExemplar(String),
    #[error("exemplar map is empty")]
    Empty,
}

/// Injective rule → exemplar assignment, kept in insertion (ruleset) order.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ExemplarMap {
    pairs: IndexMap<String, Vec<String>>,
    reverse: HashMap<String, String>,
}

impl ExemplarMap {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds exemplars to `rule_id`, failing without change if any document
    /// already belongs to a different rule.
    pub fn insert(&mut self, rule_id: &str, doc_ids: &[String]) -> Result<(), ExemplarError> {
        for d in doc_ids {
            if let Some(owner) = self.reverse.get(d) {
                if owner != rule_id {
                    return Err(ExemplarError::Conflict {
                        doc_id: d.clone(),
                        owner: owner.clone(),
                    });
                }
            }
        }
        let entry = self.pairs.entry(rule_id.to_owned()).or_default();
        for d in doc_ids {
            if !entry.contains(d) {
                entry.push(d.clone());
                self.reverse.insert(d.clone(), rule_id.to_owned());
            }
        }
        if entry.is_empty() {
            self.pairs.shift_remove(rule_id);
        }
        Ok(())
    }

    pub fn remove_rule(&mut self, rule_id: &str) -> Option<Vec<String>> {
        let docs = self.pairs.shift_remove(rule_id)?;
        for d in &docs {
            self.reverse.remove(d);
        }
        Some(docs)
    }

    pub fn exemplars(&self, rule_id: &str) -> &[String] {
        self.pairs.get(rule_id).map_or(&[], Vec::as_slice)
    }

    pub fn owner(&self, doc_id: &str) -> Option<&str> {
        self.reverse.get(doc_id).map(String::as_str)
    }

    pub fn contains_rule(&self, rule_id: &str) -> bool {
        self.pairs.contains_key(rule_id)
    }

    /// `(rule_id, exemplar ids)` in map order.
    pub fn iter(&self) -> impl Iterator<Item = (&str, &[String])> {
        self.pairs.iter().map(|(r, d)| (r.as_str(), d.as_slice()))
    }

    /// Every `(rule_id, exemplar id)` pair in map order.
    pub fn entries(&self) -> impl Iterator<Item = (&str, &str)> {
        self.iter()
            .flat_map(|(r, ds)| ds.iter().map(move |d| (r, d.as_str())))
    }

    /// Number of rules with exemplars.
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn exemplar_count(&self) -> usize {
        self.reverse.len()
    }

    /// Reorders rules to follow `rs`; rules missing from `rs` are dropped.
    pub fn ordered_by(&self, rs: &Ruleset) -> ExemplarMap {
        let mut out = ExemplarMap::new();
        for rule in rs {
            if let Some(docs) = self.pairs.get(&rule.id) {
                out.insert(&rule.id, docs)
                    .expect("subset of an injective map stays injective");
            }
        }
        out
    }

    /// Checks every assignment against the ruleset and corpus: the rule
    /// exists, the document exists, the rule fires on it, and it is not
    /// labeled negative.
    pub fn validate(&self, rs: &Ruleset, corpus: &Corpus) -> Result<(), ExemplarError> {
        for (rule_id, doc_id) in self.entries() {
            check_assignment(rs, corpus, rule_id, doc_id)?;
        }
        Ok(())
    }
}

/// Validates a single prospective (rule, exemplar) pair.
pub fn check_assignment(
    rs: &Ruleset,
    corpus: &Corpus,
    rule_id: &str,
    doc_id: &str,
) -> Result<(), ExemplarError> {
    let rule = rs
        .get(rule_id)
        .ok_or_else(|| ExemplarError::UnknownRule(rule_id.to_owned()))?;
    let doc = corpus
        .get(doc_id)
        .ok_or_else(|| ExemplarError::UnknownDoc(doc_id.to_owned()))?;
    if doc.label == Some(0) {
        return Err(ExemplarError::NegativeExemplar(doc_id.to_owned()));
    }
    if !rule.fires(&TextView::new(&doc.text)) {
        return Err(ExemplarError::NotFiring {
            rule_id: rule_id.to_owned(),
            doc_id: doc_id.to_owned(),
        });
    }
    Ok(())
}

/// Picks up to `n` exemplars per rule from the positive training documents
/// it fires on. Rules claim in ruleset order; a document claimed earlier is
/// unavailable to later rules. Rules left with no candidates are dropped.
pub fn select_exemplars(rs: &Ruleset, corpus: &Corpus, n: usize, seed: u64) -> ExemplarMap {
    assert!(n >= 1, "need at least one exemplar per rule");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let positives: Vec<(&str, TextView)> = corpus
        .split_docs(Split::Train)
        .filter(|d| d.label == Some(1))
        .map(|d| (d.id.as_str(), TextView::new(&d.text)))
        .collect();
    let mut map = ExemplarMap::new();
    for rule in rs {
        let candidates: Vec<&str> = positives
            .iter()
            .filter(|(id, view)| map.owner(id).is_none() && rule.fires(view))
            .map(|(id, _)| *id)
            .collect();
        if candidates.is_empty() {
            warn!(
                "rule `{}` has no unclaimed correct firing in train; dropped",
                rule.id
            );
            continue;
        }
        let chosen: Vec<String> = candidates
            .choose_multiple(&mut rng, n)
            .map(|s| (*s).to_owned())
            .collect();
        map.insert(&rule.id, &chosen)
            .expect("candidates exclude claimed documents");
    }
    map
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct InputConfig {
    pub tokenizer: Tokenizer,
    /// Exemplars sampled when no rule with exemplars fires.
    pub fallback_count: usize,
    /// Longest rule-side token sequence; the tail is truncated.
    pub max_len: usize,
}

impl Default for InputConfig {
    fn default() -> Self {
        Self {
            tokenizer: Tokenizer::default(),
            fallback_count: 1,
            max_len: 256,
        }
    }
}

/// The rule-side encoder input for one document.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RuleInput {
    pub doc_id: String,
    pub exemplar_ids: Vec<String>,
    pub tokens: Vec<u32>,
}

/// Concatenates exemplar blocks into `[CLS] b₁ [SEP] b₂ ...`, truncated to `max_len`.
pub fn assemble(
    doc_id: &str,
    blocks: &[Vec<String>],
    corpus: &Corpus,
    cfg: &InputConfig,
) -> Result<RuleInput, ExemplarError> {
    let mut tokens = vec![CLS];
    let mut exemplar_ids = Vec::new();
    for (i, block) in blocks.iter().enumerate() {
        if i > 0 {
            tokens.push(SEP);
        }
        for id in block {
            let doc = corpus
                .get(id)
                .ok_or_else(|| ExemplarError::UnknownDoc(id.clone()))?;
            tokens.extend(cfg.tokenizer.word_ids(&doc.text));
            exemplar_ids.push(id.clone());
        }
    }
    tokens.truncate(cfg.max_len.max(1));
    Ok(RuleInput {
        doc_id: doc_id.to_owned(),
        exemplar_ids,
        tokens,
    })
}

/// Exemplar blocks of the fired rules that have exemplars, in the given order.
pub fn fired_blocks(fired_rule_ids: &[String], emap: &ExemplarMap) -> Vec<Vec<String>> {
    fired_rule_ids
        .iter()
        .map(|r| emap.exemplars(r).to_vec())
        .filter(|b| !b.is_empty())
        .collect()
}

/// Builds the rule-side input: exemplars of the fired rules (which must be
/// given in ruleset order), or `fallback_count` exemplars drawn uniformly
/// from the whole map when none of them has exemplars.
pub fn build_rule_input<R: Rng + ?Sized>(
    doc_id: &str,
    fired_rule_ids: &[String],
    emap: &ExemplarMap,
    corpus: &Corpus,
    cfg: &InputConfig,
    rng: &mut R,
) -> Result<RuleInput, ExemplarError> {
    if emap.is_empty() {
        return Err(ExemplarError::Empty);
    }
    let mut blocks = fired_blocks(fired_rule_ids, emap);
    if blocks.is_empty() {
        let all: Vec<&str> = emap.entries().map(|(_, d)| d).collect();
        blocks = all
            .choose_multiple(rng, cfg.fallback_count.max(1))
            .map(|d| vec![(*d).to_owned()])
            .collect();
    }
    assemble(doc_id, &blocks, corpus, cfg)
}

/// [`build_rule_input`] with a generator derived from `seed` and the document id.
pub fn build_rule_input_seeded(
    doc_id: &str,
    fired_rule_ids: &[String],
    emap: &ExemplarMap,
    corpus: &Corpus,
    cfg: &InputConfig,
    seed: u64,
) -> Result<RuleInput, ExemplarError> {
    let mut h = FnvHasher::default();
    h.write(doc_id.as_bytes());
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ h.finish());
    build_rule_input(doc_id, fired_rule_ids, emap, corpus, cfg, &mut rng)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Document;
    use crate::rules::{Provenance, Rule};

    fn rule(id: &str, src: &str) -> Rule {
        Rule::parse(id, src, Provenance::Manual).unwrap()
    }

    fn train(id: &str, text: &str, label: u8) -> Document {
        Document::new(id, text, Some(label), Split::Train)
    }

    #[test]
    fn shared_doc_goes_to_first_rule() {
        let rs = Ruleset::new(vec![
            rule("A", r#"contains("x")"#),
            rule("B", r#"contains("y")"#),
        ])
        .unwrap();
        let corpus = Corpus::new(vec![train("d1", "x y", 1), train("d2", "x y", 0)]).unwrap();
        for seed in 0..10 {
            let m = select_exemplars(&rs, &corpus, 1, seed);
            assert_eq!(m.exemplars("A"), ["d1".to_owned()]);
            assert!(!m.contains_rule("B"));
        }
        let corpus = Corpus::new(vec![train("d1", "x y", 1), train("d2", "y", 1)]).unwrap();
        let m = select_exemplars(&rs, &corpus, 1, 0);
        assert_eq!(m.exemplars("A"), ["d1".to_owned()]);
        assert_eq!(m.exemplars("B"), ["d2".to_owned()]);
    }

    #[test]
    fn only_positive_train_firings_qualify() {
        let rs = Ruleset::new(vec![rule("A", r#"contains("x")"#)]).unwrap();
        let corpus = Corpus::new(vec![
            train("neg", "x", 0),
            Document::new("val", "x", Some(1), Split::Val),
            Document::new("unl", "x", None, Split::Train),
        ])
        .unwrap();
        assert!(select_exemplars(&rs, &corpus, 1, 3).is_empty());
    }

    #[test]
    fn selection_is_seeded() {
        let rs = Ruleset::new(vec![rule("A", r#"contains("x")"#)]).unwrap();
        let docs = (0..20)
            .map(|i| train(&format!("d{i:02}"), "x", 1))
            .collect();
        let corpus = Corpus::new(docs).unwrap();
        let a = select_exemplars(&rs, &corpus, 3, 9);
        assert_eq!(a, select_exemplars(&rs, &corpus, 3, 9));
        assert_eq!(a.exemplars("A").len(), 3);
        let picks: std::collections::HashSet<_> = (0..20)
            .map(|s| select_exemplars(&rs, &corpus, 1, s).exemplars("A")[0].clone())
            .collect();
        assert!(picks.len() > 1);
    }

    #[test]
    fn insert_rejects_conflicts_atomically() {
        let mut m = ExemplarMap::new();
        m.insert("A", &["d1".into()]).unwrap();
        let err = m.insert("B", &["d2".into(), "d1".into()]).unwrap_err();
        assert_eq!(
            err,
            ExemplarError::Conflict {
                doc_id: "d1".into(),
                owner: "A".into()
            }
        );
        assert_eq!(m.owner("d2"), None);
        assert!(!m.contains_rule("B"));
        m.remove_rule("A");
        assert_eq!(m.owner("d1"), None);
    }

    fn fixture() -> (Corpus, ExemplarMap, InputConfig) {
        let corpus = Corpus::new(vec![
            train("a1", "alpha beta", 1),
            train("b1", "gamma", 1),
            train("c1", "delta", 1),
        ])
        .unwrap();
        let mut m = ExemplarMap::new();
        m.insert("A", &["a1".into()]).unwrap();
        m.insert("B", &["b1".into()]).unwrap();
        m.insert("C", &["c1".into()]).unwrap();
        (
            corpus,
            m,
            InputConfig {
                tokenizer: Tokenizer::new(1000),
                ..Default::default()
            },
        )
    }

    #[test]
    fn blocks_follow_fired_order_with_separators() {
        let (corpus, m, cfg) = fixture();
        let t = cfg.tokenizer;
        let input =
            build_rule_input_seeded("x", &["A".into(), "B".into()], &m, &corpus, &cfg, 1).unwrap();
        let mut want = vec![CLS];
        want.extend(t.word_ids("alpha beta"));
        want.push(SEP);
        want.extend(t.word_ids("gamma"));
        assert_eq!(input.tokens, want);
        assert_eq!(input.exemplar_ids, ["a1", "b1"]);

        let single = build_rule_input_seeded("x", &["B".into()], &m, &corpus, &cfg, 1).unwrap();
        assert_eq!(single.tokens, [vec![CLS], t.word_ids("gamma")].concat());
        assert!(!single.tokens.contains(&SEP));
    }

    #[test]
    fn fallback_is_deterministic_per_seed() {
        let (corpus, m, cfg) = fixture();
        let a = build_rule_input_seeded("x", &[], &m, &corpus, &cfg, 5).unwrap();
        for _ in 0..5 {
            assert_eq!(
                a,
                build_rule_input_seeded("x", &[], &m, &corpus, &cfg, 5).unwrap()
            );
        }
        assert_eq!(a.exemplar_ids.len(), 1);
        // a fired rule without exemplars also falls back
        let b = build_rule_input_seeded("x", &["Z".into()], &m, &corpus, &cfg, 5).unwrap();
        assert_eq!(b.exemplar_ids.len(), 1);
        let empty = ExemplarMap::new();
        assert_eq!(
            build_rule_input_seeded("x", &[], &empty, &corpus, &cfg, 5),
            Err(ExemplarError::Empty)
        );
    }

    #[test]
    fn truncates_tail() {
        let (corpus, m, mut cfg) = fixture();
        cfg.max_len = 2;
        let input =
            build_rule_input_seeded("x", &["A".into(), "B".into()], &m, &corpus, &cfg, 0).unwrap();
        assert_eq!(input.tokens, vec![CLS, cfg.tokenizer.word_id("alpha")]);
    }

    #[test]
    fn validate_checks_firing_and_labels() {
        let rs = Ruleset::new(vec![rule("A", r#"contains("x")"#)]).unwrap();
        let corpus = Corpus::new(vec![
            train("p", "x", 1),
            train("n", "x", 0),
            train("q", "y", 1),
        ])
        .unwrap();
        let mut m = ExemplarMap::new();
        m.insert("A", &["p".into()]).unwrap();
        assert!(m.validate(&rs, &corpus).is_ok());
        assert!(matches!(
            check_assignment(&rs, &corpus, "A", "n"),
            Err(ExemplarError::NegativeExemplar(_))
        ));
        assert!(matches!(
            check_assignment(&rs, &corpus, "A", "q"),
            Err(ExemplarError::NotFiring { .. })
        ));
        assert!(matches!(
            check_assignment(&rs, &corpus, "A", "zz"),
            Err(ExemplarError::UnknownDoc(_))
        ));
        assert!(matches!(
            check_assignment(&rs, &corpus, "B", "p"),
            Err(ExemplarError::UnknownRule(_))
        ));
    }
}
