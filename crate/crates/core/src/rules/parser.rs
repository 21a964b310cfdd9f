//! Recursive-descent parser for the rule DSL.
//!
//! ```text
//! expr    := and ( OR and )*
//! and     := unary ( AND unary )*
//! unary   := NOT unary | primary
//! primary := '(' expr ')' | contains '(' STRING ')' | regex '(' STRING ')'
//! ```
//!
//! Keywords are case-insensitive. Strings are double- or single-quoted with
//! `\\` and `\"` / `\'` escapes.

use super::ast::{Atom, Expr, Pattern, MAX_NGRAM};
use super::error::RuleError;
use crate::text;

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Ident(String),
    Str(String),
    LParen,
    RParen,
}

#[derive(Debug, Clone)]
struct Spanned {
    tok: Tok,
    offset: usize,
}

fn syntax(offset: usize, message: impl Into<String>) -> RuleError {
    RuleError::Syntax {
        offset,
        message: message.into(),
    }
}

fn lex(src: &str) -> Result<Vec<Spanned>, RuleError> {
    let mut out = Vec::new();
    let mut chars = src.char_indices().peekable();
    while let Some(&(offset, c)) = chars.peek() {
        match c {
            c if c.is_whitespace() => {
                chars.next();
            }
            '(' => {
                chars.next();
                out.push(Spanned {
                    tok: Tok::LParen,
                    offset,
                });
            }
            ')' => {
                chars.next();
                out.push(Spanned {
                    tok: Tok::RParen,
                    offset,
                });
            }
            '"' | '\'' => {
                let quote = c;
                chars.next();
                let mut value = String::new();
                let mut closed = false;
                while let Some((_, c)) = chars.next() {
                    match c {
                        '\\' => match chars.next() {
                            Some((_, e)) if e == '\\' || e == quote => value.push(e),
                            Some((pos, e)) => {
                                return Err(syntax(pos, format!("invalid escape `\\{e}`")))
                            }
                            None => break,
                        },
                        c if c == quote => {
                            closed = true;
                            break;
                        }
                        c => value.push(c),
                    }
                }
                if !closed {
                    return Err(syntax(offset, "unterminated string"));
                }
                out.push(Spanned {
                    tok: Tok::Str(value),
                    offset,
                });
            }
            c if c.is_alphabetic() || c == '_' => {
                let mut ident = String::new();
                while let Some(&(_, c)) = chars.peek() {
                    if c.is_alphanumeric() || c == '_' {
                        ident.push(c);
                        chars.next();
                    } else {
                        break;
                    }
                }
                out.push(Spanned {
                    tok: Tok::Ident(ident),
                    offset,
                });
            }
            other => return Err(syntax(offset, format!("unexpected character `{other}`"))),
        }
    }
    Ok(out)
}

struct Parser {
    toks: Vec<Spanned>,
    pos: usize,
    end: usize,
}

impl Parser {
    fn peek(&self) -> Option<&Spanned> {
        self.toks.get(self.pos)
    }

    fn offset(&self) -> usize {
        self.peek().map_or(self.end, |t| t.offset)
    }

    fn keyword(&self, kw: &str) -> bool {
        matches!(self.peek(), Some(Spanned { tok: Tok::Ident(s), .. }) if s.eq_ignore_ascii_case(kw))
    }

    fn expect(&mut self, want: Tok, what: &str) -> Result<(), RuleError> {
        match self.peek() {
            Some(t) if t.tok == want => {
                self.pos += 1;
                Ok(())
            }
            _ => Err(syntax(self.offset(), format!("expected {what}"))),
        }
    }

    fn expr(&mut self) -> Result<Expr, RuleError> {
        let mut lhs = self.and()?;
        while self.keyword("or") {
            self.pos += 1;
            let rhs = self.and()?;
            lhs = Expr::or(lhs, rhs);
        }
        Ok(lhs)
    }

    fn and(&mut self) -> Result<Expr, RuleError> {
        let mut lhs = self.unary()?;
        while self.keyword("and") {
            self.pos += 1;
            let rhs = self.unary()?;
            lhs = Expr::and(lhs, rhs);
        }
        Ok(lhs)
    }

    fn unary(&mut self) -> Result<Expr, RuleError> {
        if self.keyword("not") {
            self.pos += 1;
            return Ok(Expr::not(self.unary()?));
        }
        self.primary()
    }

    fn string_arg(&mut self) -> Result<(String, usize), RuleError> {
        self.expect(Tok::LParen, "`(`")?;
        let offset = self.offset();
        let value = match self.peek() {
            Some(Spanned {
                tok: Tok::Str(s), ..
            }) => s.clone(),
            _ => return Err(syntax(offset, "expected quoted string")),
        };
        self.pos += 1;
        self.expect(Tok::RParen, "`)`")?;
        Ok((value, offset))
    }

    fn primary(&mut self) -> Result<Expr, RuleError> {
        let offset = self.offset();
        let Some(t) = self.peek().cloned() else {
            return Err(syntax(offset, "unexpected end of input"));
        };
        match t.tok {
            Tok::LParen => {
                self.pos += 1;
                let e = self.expr()?;
                self.expect(Tok::RParen, "`)`")?;
                Ok(e)
            }
            Tok::Ident(ref id) if id.eq_ignore_ascii_case("contains") => {
                self.pos += 1;
                let (value, at) = self.string_arg()?;
                let tokens = text::words(&value);
                if tokens.is_empty() || tokens.len() > MAX_NGRAM {
                    return Err(RuleError::NgramLength {
                        offset: at,
                        len: tokens.len(),
                    });
                }
                Ok(Expr::Atom(Atom::Contains(tokens)))
            }
            Tok::Ident(ref id) if id.eq_ignore_ascii_case("regex") => {
                self.pos += 1;
                let (value, at) = self.string_arg()?;
                let p = Pattern::new(&value).map_err(|e| RuleError::UnsupportedRegex {
                    offset: at,
                    message: e.to_string(),
                })?;
                Ok(Expr::Atom(Atom::Regex(p)))
            }
            Tok::Ident(id) => Err(syntax(
                offset,
                format!("unknown function or keyword `{id}`"),
            )),
            Tok::Str(_) => Err(syntax(offset, "bare string; wrap it in contains(...)")),
            Tok::RParen => Err(syntax(offset, "unexpected `)`")),
        }
    }
}

/// Parses rule source into a normalized expression.
pub fn parse(src: &str) -> Result<Expr, RuleError> {
    if src.trim().is_empty() {
        return Err(syntax(0, "empty rule"));
    }
    let toks = lex(src)?;
    let mut p = Parser {
        toks,
        pos: 0,
        end: src.len(),
    };
    let e = p.expr()?;
    if p.pos != p.toks.len() {
        return Err(syntax(p.offset(), "trailing input"));
    }
    Ok(e)
}
