use super::ast::{Atom, Expr};
use crate::text;

/// A document prepared once for evaluating many rules against it.
#[derive(Debug, Clone)]
pub struct TextView {
    lowered: String,
    words: Vec<String>,
}

impl TextView {
    pub fn new(text: &str) -> Self {
        Self {
            lowered: text.to_lowercase(),
            words: text::words(text),
        }
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }
}

fn contains_ngram(words: &[String], ngram: &[String]) -> bool {
    !ngram.is_empty() && words.windows(ngram.len()).any(|w| w == ngram)
}

pub(crate) fn eval_expr(expr: &Expr, view: &TextView) -> bool {
    match expr {
        Expr::Atom(Atom::Contains(ngram)) => contains_ngram(&view.words, ngram),
        Expr::Atom(Atom::Regex(p)) => p.is_match(&view.lowered),
        Expr::Not(e) => !eval_expr(e, view),
        Expr::And(xs) => xs.iter().all(|x| eval_expr(x, view)),
        Expr::Or(xs) => xs.iter().any(|x| eval_expr(x, view)),
    }
}
