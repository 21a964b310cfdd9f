use std::fmt;

use regex::Regex;

use super::error::RuleError;
use crate::text;

/// Longest n-gram a `contains` atom may hold.
pub const MAX_NGRAM: usize = 3;

/// A compiled regular expression that compares and prints by its source.
#[derive(Debug, Clone)]
pub struct Pattern {
    source: String,
    compiled: Regex,
}

impl Pattern {
    pub fn new(source: &str) -> Result<Self, regex::Error> {
        Ok(Self {
            source: source.to_owned(),
            compiled: Regex::new(source)?,
        })
    }

    pub fn as_str(&self) -> &str {
        &self.source
    }

    pub fn is_match(&self, haystack: &str) -> bool {
        self.compiled.is_match(haystack)
    }
}

impl PartialEq for Pattern {
    fn eq(&self, other: &Self) -> bool {
        self.source == other.source
    }
}

impl Eq for Pattern {}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Atom {
    /// Contiguous lowercase token n-gram, 1 to 3 tokens.
    Contains(Vec<String>),
    /// Matched against the whole lowercased text.
    Regex(Pattern),
}

/// Normalized boolean rule expression.
///
/// Built through [`Expr::not`], [`Expr::and`] and [`Expr::or`], which keep the
/// tree canonical: double negation is removed and nested `And`/`Or` of the same
/// kind are flattened, so printing and re-parsing yields the same tree.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Expr {
    Atom(Atom),
    Not(Box<Expr>),
    And(Vec<Expr>),
    Or(Vec<Expr>),
}

impl Expr {
    pub fn contains(ngram: &str) -> Result<Self, RuleError> {
        let tokens = text::words(ngram);
        if tokens.is_empty() || tokens.len() > MAX_NGRAM {
            return Err(RuleError::NgramLength {
                offset: 0,
                len: tokens.len(),
            });
        }
        Ok(Expr::Atom(Atom::Contains(tokens)))
    }

    pub fn contains_tokens(tokens: Vec<String>) -> Result<Self, RuleError> {
        let joined = tokens.join(" ");
        Self::contains(&joined)
    }

    pub fn regex(pattern: &str) -> Result<Self, RuleError> {
        Pattern::new(pattern)
            .map(|p| Expr::Atom(Atom::Regex(p)))
            .map_err(|e| RuleError::UnsupportedRegex {
                offset: 0,
                message: e.to_string(),
            })
    }

    #[allow(clippy::should_implement_trait)]
    pub fn not(inner: Expr) -> Self {
        match inner {
            Expr::Not(e) => *e,
            other => Expr::Not(Box::new(other)),
        }
    }

    pub fn and(lhs: Expr, rhs: Expr) -> Self {
        let mut items = Vec::new();
        for e in [lhs, rhs] {
            match e {
                Expr::And(children) => items.extend(children),
                other => items.push(other),
            }
        }
        Expr::And(items)
    }

    pub fn or(lhs: Expr, rhs: Expr) -> Self {
        let mut items = Vec::new();
        for e in [lhs, rhs] {
            match e {
                Expr::Or(children) => items.extend(children),
                other => items.push(other),
            }
        }
        Expr::Or(items)
    }

    pub fn depth(&self) -> usize {
        match self {
            Expr::Atom(_) => 1,
            Expr::Not(e) => 1 + e.depth(),
            Expr::And(xs) | Expr::Or(xs) => 1 + xs.iter().map(Expr::depth).max().unwrap_or(0),
        }
    }

    /// Visits every atom in left-to-right order.
    pub fn atoms(&self) -> Vec<&Atom> {
        let mut out = Vec::new();
        self.collect_atoms(&mut out);
        out
    }

    fn collect_atoms<'a>(&'a self, out: &mut Vec<&'a Atom>) {
        match self {
            Expr::Atom(a) => out.push(a),
            Expr::Not(e) => e.collect_atoms(out),
            Expr::And(xs) | Expr::Or(xs) => xs.iter().for_each(|x| x.collect_atoms(out)),
        }
    }
}

fn write_quoted(f: &mut fmt::Formatter<'_>, s: &str) -> fmt::Result {
    f.write_str("\"")?;
    for c in s.chars() {
        match c {
            '"' => f.write_str("\\\"")?,
            '\\' => f.write_str("\\\\")?,
            c => write!(f, "{c}")?,
        }
    }
    f.write_str("\"")
}

impl fmt::Display for Atom {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Atom::Contains(tokens) => {
                f.write_str("contains(")?;
                write_quoted(f, &tokens.join(" "))?;
                f.write_str(")")
            }
            Atom::Regex(p) => {
                f.write_str("regex(")?;
                write_quoted(f, p.as_str())?;
                f.write_str(")")
            }
        }
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Atom(a) => write!(f, "{a}"),
            Expr::Not(e) => match e.as_ref() {
                Expr::Atom(_) => write!(f, "NOT {e}"),
                _ => write!(f, "NOT ({e})"),
            },
            Expr::And(xs) => {
                for (i, x) in xs.iter().enumerate() {
                    if i > 0 {
                        f.write_str(" AND ")?;
                    }
                    match x {
                        Expr::Or(_) => write!(f, "({x})")?,
                        _ => write!(f, "{x}")?,
                    }
                }
                Ok(())
            }
            Expr::Or(xs) => {
                for (i, x) in xs.iter().enumerate() {
                    if i > 0 {
                        f.write_str(" OR ")?;
                    }
                    write!(f, "{x}")?;
                }
                Ok(())
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(s: &str) -> Expr {
        Expr::contains(s).unwrap()
    }

    #[test]
    fn double_negation_collapses() {
        assert_eq!(Expr::not(Expr::not(c("a"))), c("a"));
    }

    #[test]
    fn same_kind_flattens() {
        let e = Expr::and(Expr::and(c("a"), c("b")), c("c"));
        assert_eq!(e, Expr::And(vec![c("a"), c("b"), c("c")]));
        let mixed = Expr::and(Expr::or(c("a"), c("b")), c("c"));
        assert_eq!(mixed.depth(), 3);
    }

    #[test]
    fn prints_minimal_parens() {
        let e = Expr::and(Expr::or(c("hate"), c("loathe")), c("women"));
        assert_eq!(
            e.to_string(),
            r#"(contains("hate") OR contains("loathe")) AND contains("women")"#
        );
        let n = Expr::not(Expr::and(c("a"), c("b")));
        assert_eq!(n.to_string(), r#"NOT (contains("a") AND contains("b"))"#);
    }

    #[test]
    fn ngram_length_bounds() {
        assert!(Expr::contains("a b c").is_ok());
        assert!(matches!(
            Expr::contains("a b c d"),
            Err(RuleError::NgramLength { len: 4, .. })
        ));
        assert!(Expr::contains("!!").is_err());
    }

    #[test]
    fn regex_quotes_escape() {
        let e = Expr::regex(r#"a\"b"#).unwrap();
        assert_eq!(e.to_string(), r#"regex("a\\\"b")"#);
    }
}
