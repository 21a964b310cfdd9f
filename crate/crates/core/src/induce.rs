//! Ruleset induction from annotator rationales: n-grams inside rationale
//! spans are counted per target group and the most frequent become
//! `contains` rules.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::Corpus;
use crate::jsonl::{self, JsonlError};
use crate::rules::{Expr, Provenance, Rule, Ruleset, MAX_NGRAM};
use crate::text::words;

/// Token ranges are half-open `[start, end)` over the document's words.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rationale {
    pub doc_id: String,
    pub spans: Vec<[usize; 2]>,
    pub group: String,
}

#[derive(Debug, Error)]
pub enum InduceError {
    #[error(transparent)]
    Io(#[from] JsonlError),
    #[error("rationale for unknown document `{0}`")]
    UnknownDoc(String),
    #[error("rationale span [{start}, {end}) outside the {len} tokens of `{doc_id}`")]
    SpanOutOfBounds {
        doc_id: String,
        start: usize,
        end: usize,
        len: usize,
    },
    #[error("rationale for `{0}` has an empty group")]
    EmptyGroup(String),
    #[error("top_n must be at least 1")]
    ZeroTopN,
}

pub fn load_rationales(path: &Path) -> Result<Vec<Rationale>, InduceError> {
    Ok(jsonl::read(path)?.into_iter().map(|(_, r)| r).collect())
}

/// Every contiguous 1- to 3-gram inside the spans, space-joined, with
/// multiplicity.
pub fn extract_ngrams(
    rationale: &Rationale,
    corpus: &Corpus,
) -> Result<BTreeMap<String, usize>, InduceError> {
    let doc = corpus
        .get(&rationale.doc_id)
        .ok_or_else(|| InduceError::UnknownDoc(rationale.doc_id.clone()))?;
    if rationale.group.trim().is_empty() {
        return Err(InduceError::EmptyGroup(rationale.doc_id.clone()));
    }
    let tokens = words(&doc.text);
    let mut out = BTreeMap::new();
    for &[start, end] in &rationale.spans {
        if start > end || end > tokens.len() {
            return Err(InduceError::SpanOutOfBounds {
                doc_id: rationale.doc_id.clone(),
                start,
                end,
                len: tokens.len(),
            });
        }
        let span = &tokens[start..end];
        for n in 1..=MAX_NGRAM {
            for w in span.windows(n) {
                *out.entry(w.join(" ")).or_insert(0) += 1;
            }
        }
    }
    Ok(out)
}

/// The `top_n` most frequent n-grams of each group (ties broken
/// lexicographically), keeping only n-grams seen in at least `min_df`
/// rationales. Groups are visited in sorted order and an n-gram already
/// taken by an earlier group is not repeated.
pub fn induce_ruleset(
    rationales: &[Rationale],
    corpus: &Corpus,
    top_n: usize,
    min_df: usize,
) -> Result<Ruleset, InduceError> {
    if top_n == 0 {
        return Err(InduceError::ZeroTopN);
    }
    let mut counts: BTreeMap<&str, BTreeMap<String, (usize, usize)>> = BTreeMap::new();
    for r in rationales {
        let grams = extract_ngrams(r, corpus)?;
        let group = counts.entry(r.group.as_str()).or_default();
        for (g, c) in grams {
            let e = group.entry(g).or_insert((0, 0));
            e.0 += c;
            e.1 += 1;
        }
    }
    let mut seen = BTreeSet::new();
    let mut rules = Vec::new();
    for group in counts.values() {
        let mut ranked: Vec<(&String, usize)> = group
            .iter()
            .filter(|(_, (_, df))| *df >= min_df)
            .map(|(g, (c, _))| (g, *c))
            .collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
        for (gram, _) in ranked.into_iter().take(top_n) {
            if seen.insert(gram.clone()) {
                let expr = Expr::contains(gram).expect("induced n-grams are 1 to 3 words");
                rules.push(Rule::new(
                    format!("induced-{:04}", rules.len() + 1),
                    expr,
                    Provenance::Induced,
                ));
            }
        }
    }
    Ok(Ruleset::new(rules).expect("generated ids are unique"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{Document, Split};

    fn corpus(texts: &[(&str, &str)]) -> Corpus {
        Corpus::new(
            texts
                .iter()
                .map(|(id, t)| Document::new(*id, *t, Some(1), Split::Train))
                .collect(),
        )
        .unwrap()
    }

    fn rat(doc: &str, spans: &[[usize; 2]], group: &str) -> Rationale {
        Rationale {
            doc_id: doc.into(),
            spans: spans.to_vec(),
            group: group.into(),
        }
    }

    #[test]
    fn bigram_span() {
        let c = corpus(&[("d", "such dumb people here")]);
        let g = extract_ngrams(&rat("d", &[[1, 3]], "x"), &c).unwrap();
        let keys: Vec<&str> = g.keys().map(String::as_str).collect();
        assert_eq!(keys, ["dumb", "dumb people", "people"]);
        assert!(extract_ngrams(&rat("d", &[], "x"), &c).unwrap().is_empty());
        assert_eq!(
            extract_ngrams(&rat("d", &[[0, 1]], "x"), &c).unwrap().len(),
            1
        );
    }

    #[test]
    fn bad_rationales() {
        let c = corpus(&[("d", "a b")]);
        assert!(matches!(
            extract_ngrams(&rat("d", &[[1, 3]], "x"), &c),
            Err(InduceError::SpanOutOfBounds { len: 2, .. })
        ));
        assert!(matches!(
            extract_ngrams(&rat("e", &[], "x"), &c),
            Err(InduceError::UnknownDoc(_))
        ));
        assert!(matches!(
            extract_ngrams(&rat("d", &[], " "), &c),
            Err(InduceError::EmptyGroup(_))
        ));
    }

    #[test]
    fn top_one_per_group() {
        let c = corpus(&[
            ("a", "you idiot"),
            ("b", "idiot again"),
            ("c", "what a fool"),
        ]);
        let rats = [
            rat("a", &[[1, 2]], "g"),
            rat("b", &[[0, 1]], "g"),
            rat("c", &[[2, 3]], "g"),
        ];
        let rs = induce_ruleset(&rats, &c, 1, 1).unwrap();
        assert_eq!(rs.len(), 1);
        assert_eq!(rs.rules()[0].expr.to_string(), r#"contains("idiot")"#);
        assert_eq!(rs.rules()[0].provenance, Provenance::Induced);
    }

    #[test]
    fn groups_bound_and_dedupe() {
        let c = corpus(&[("a", "aa bb cc dd"), ("b", "ee ff gg hh"), ("c", "aa zz")]);
        let rats = [rat("a", &[[0, 4]], "g1"), rat("b", &[[0, 4]], "g2")];
        let rs = induce_ruleset(&rats, &c, 3, 1).unwrap();
        assert!(rs.len() <= 6);
        let rats = [rat("a", &[[0, 1]], "g1"), rat("c", &[[0, 1]], "g2")];
        assert_eq!(induce_ruleset(&rats, &c, 3, 1).unwrap().len(), 1);
        assert!(induce_ruleset(&[], &c, 3, 1).unwrap().is_empty());
    }

    #[test]
    fn ties_are_lexicographic_and_min_df_filters() {
        let c = corpus(&[("a", "zeta alpha"), ("b", "zeta")]);
        let rats = [rat("a", &[[0, 2]], "g"), rat("b", &[[0, 1]], "g")];
        let rs = induce_ruleset(&rats, &c, 2, 1).unwrap();
        let exprs: Vec<String> = rs.iter().map(|r| r.expr.to_string()).collect();
        assert_eq!(exprs, [r#"contains("zeta")"#, r#"contains("alpha")"#]);
        let rs = induce_ruleset(&rats, &c, 5, 2).unwrap();
        assert_eq!(rs.len(), 1);
    }
}
