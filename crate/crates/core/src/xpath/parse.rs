//! Recursive descent parser for the path-expression surface syntax.
//!
//! Axes are spelled out (`child::`, `ancestor-or-self::`, …); `[...]` holds
//! qualifiers or a 1-based position; `|` is union; `text()='…'` and
//! `= self::lab` are the comparison forms. A maximum fragment is enforced
//! after parsing, so `ancestor::x` parses but is rejected when the caller
//! only admits the downward fragment.

use crate::error::XPathError;

use super::ast::{Axis, Fragment, NameTest, PathExpr, Qualifier};

#[derive(Debug, Clone, PartialEq)]
enum Token {
    Ident(String),
    Int(usize),
    Str(String),
    ColonColon,
    Slash,
    Pipe,
    Open,
    Close,
    BracketOpen,
    BracketClose,
    Eq,
    Star,
}

#[derive(Debug, Clone)]
struct Spanned {
    token: Token,
    offset: usize,
}

fn tokenize(input: &str) -> Result<Vec<Spanned>, XPathError> {
    let mut out = Vec::new();
    let bytes = input.as_bytes();
    let mut pos = 0usize;
    while pos < bytes.len() {
        let ch = input[pos..].chars().next().unwrap();
        let start = pos;
        match ch {
            c if c.is_whitespace() => {
                pos += c.len_utf8();
                continue;
            }
            ':' => {
                if input[pos..].starts_with("::") {
                    out.push(Spanned { token: Token::ColonColon, offset: start });
                    pos += 2;
                } else {
                    return Err(XPathError::Syntax {
                        offset: start,
                        msg: "single `:` (expected `::`)".into(),
                    });
                }
            }
            '/' => {
                out.push(Spanned { token: Token::Slash, offset: start });
                pos += 1;
            }
            '|' => {
                out.push(Spanned { token: Token::Pipe, offset: start });
                pos += 1;
            }
            '(' => {
                out.push(Spanned { token: Token::Open, offset: start });
                pos += 1;
            }
            ')' => {
                out.push(Spanned { token: Token::Close, offset: start });
                pos += 1;
            }
            '[' => {
                out.push(Spanned { token: Token::BracketOpen, offset: start });
                pos += 1;
            }
            ']' => {
                out.push(Spanned { token: Token::BracketClose, offset: start });
                pos += 1;
            }
            '=' => {
                out.push(Spanned { token: Token::Eq, offset: start });
                pos += 1;
            }
            '*' => {
                out.push(Spanned { token: Token::Star, offset: start });
                pos += 1;
            }
            '\'' => {
                let rest = &input[pos + 1..];
                let Some(end) = rest.find('\'') else {
                    return Err(XPathError::Syntax {
                        offset: start,
                        msg: "unterminated string literal".into(),
                    });
                };
                out.push(Spanned {
                    token: Token::Str(rest[..end].to_string()),
                    offset: start,
                });
                pos += end + 2;
            }
            c if c.is_ascii_digit() => {
                let end = input[pos..]
                    .find(|c: char| !c.is_ascii_digit())
                    .map(|e| pos + e)
                    .unwrap_or(input.len());
                let value: usize = input[pos..end].parse().map_err(|_| XPathError::Syntax {
                    offset: start,
                    msg: "bad integer".into(),
                })?;
                out.push(Spanned { token: Token::Int(value), offset: start });
                pos = end;
            }
            c if c.is_ascii_alphabetic() || c == '_' => {
                let end = input[pos..]
                    .find(|c: char| !(c.is_ascii_alphanumeric() || c == '_' || c == '-'))
                    .map(|e| pos + e)
                    .unwrap_or(input.len());
                out.push(Spanned {
                    token: Token::Ident(input[pos..end].to_string()),
                    offset: start,
                });
                pos = end;
            }
            c => {
                return Err(XPathError::Syntax {
                    offset: start,
                    msg: format!("unexpected character `{c}`"),
                })
            }
        }
    }
    Ok(out)
}

struct Parser {
    tokens: Vec<Spanned>,
    pos: usize,
}

impl Parser {
    fn err(&self, msg: impl Into<String>) -> XPathError {
        let offset = self.tokens.get(self.pos).map(|t| t.offset).unwrap_or_else(|| {
            self.tokens.last().map(|t| t.offset + 1).unwrap_or(0)
        });
        XPathError::Syntax { offset, msg: msg.into() }
    }

    fn peek(&self) -> Option<&Token> {
        self.tokens.get(self.pos).map(|t| &t.token)
    }

    fn peek_at(&self, ahead: usize) -> Option<&Token> {
        self.tokens.get(self.pos + ahead).map(|t| &t.token)
    }

    fn eat(&mut self, token: &Token) -> bool {
        if self.peek() == Some(token) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn expect(&mut self, token: &Token, what: &str) -> Result<(), XPathError> {
        if self.eat(token) {
            Ok(())
        } else {
            Err(self.err(format!("expected {what}")))
        }
    }

    fn ident(&mut self) -> Option<String> {
        if let Some(Token::Ident(name)) = self.peek() {
            let name = name.clone();
            self.pos += 1;
            Some(name)
        } else {
            None
        }
    }

    /// `/text()` starts the text-comparison tail of a qualifier, never a
    /// path step; the path parser stops in front of it.
    fn at_text_tail(&self) -> bool {
        self.peek() == Some(&Token::Slash)
            && matches!(self.peek_at(1), Some(Token::Ident(w)) if w == "text")
            && self.peek_at(2) == Some(&Token::Open)
            && self.peek_at(3) == Some(&Token::Close)
    }

    // path := slash-chain ('|' slash-chain)*
    fn path(&mut self) -> Result<PathExpr, XPathError> {
        let mut left = self.slash_chain()?;
        while self.eat(&Token::Pipe) {
            let right = self.slash_chain()?;
            left = left.union(right);
        }
        Ok(left)
    }

    fn slash_chain(&mut self) -> Result<PathExpr, XPathError> {
        let mut left = self.postfix()?;
        while !self.at_text_tail() && self.eat(&Token::Slash) {
            let right = self.postfix()?;
            left = left.slash(right);
        }
        Ok(left)
    }

    fn postfix(&mut self) -> Result<PathExpr, XPathError> {
        let mut expr = self.primary()?;
        loop {
            if self.peek() != Some(&Token::BracketOpen) {
                break;
            }
            // `[n]` is a position filter when the bracket holds a lone integer.
            if let (Some(Token::Int(n)), Some(Token::BracketClose)) =
                (self.peek_at(1), self.peek_at(2))
            {
                let n = *n;
                self.pos += 3;
                if n == 0 {
                    return Err(self.err("positions are 1-based"));
                }
                expr = expr.position(n);
                continue;
            }
            self.pos += 1; // '['
            let q = self.qualifier()?;
            self.expect(&Token::BracketClose, "`]`")?;
            expr = expr.filter(q);
        }
        Ok(expr)
    }

    fn primary(&mut self) -> Result<PathExpr, XPathError> {
        if self.eat(&Token::Open) {
            let inner = self.path()?;
            self.expect(&Token::Close, "`)`")?;
            return Ok(inner);
        }
        let Some(axis_name) = self.ident() else {
            return Err(self.err("expected an axis name"));
        };
        let axis = match axis_name.as_str() {
            "self" => Axis::SelfAxis,
            "child" => Axis::Child,
            "descendant" => Axis::Descendant,
            "descendant-or-self" => Axis::DescendantOrSelf,
            "parent" => Axis::Parent,
            "ancestor" => Axis::Ancestor,
            "ancestor-or-self" => Axis::AncestorOrSelf,
            other => return Err(self.err(format!("unknown axis `{other}`"))),
        };
        self.expect(&Token::ColonColon, "`::`")?;
        let test = if self.eat(&Token::Star) {
            NameTest::Any
        } else if let Some(name) = self.ident() {
            NameTest::Name(name)
        } else {
            return Err(self.err("expected an element name or `*`"));
        };
        Ok(PathExpr::Step(axis, test))
    }

    // qualifier := and-chain ('or' and-chain)*
    fn qualifier(&mut self) -> Result<Qualifier, XPathError> {
        let mut left = self.and_chain()?;
        while matches!(self.peek(), Some(Token::Ident(w)) if w == "or") {
            self.pos += 1;
            let right = self.and_chain()?;
            left = left.or(right);
        }
        Ok(left)
    }

    fn and_chain(&mut self) -> Result<Qualifier, XPathError> {
        let mut left = self.qualifier_atom()?;
        while matches!(self.peek(), Some(Token::Ident(w)) if w == "and") {
            self.pos += 1;
            let right = self.qualifier_atom()?;
            left = left.and(right);
        }
        Ok(left)
    }

    fn qualifier_atom(&mut self) -> Result<Qualifier, XPathError> {
        if matches!(self.peek(), Some(Token::Ident(w)) if w == "not")
            && self.peek_at(1) == Some(&Token::Open)
        {
            self.pos += 2;
            let inner = self.qualifier()?;
            self.expect(&Token::Close, "`)`")?;
            return Ok(inner.not());
        }
        // A leading `(` may open either a parenthesized path or a boolean
        // group; try the path reading first and fall back.
        if self.peek() == Some(&Token::Open) {
            let checkpoint = self.pos;
            match self.path_led_atom() {
                Ok(q) => return Ok(q),
                Err(_) => self.pos = checkpoint,
            }
            self.pos += 1; // '('
            let inner = self.qualifier()?;
            self.expect(&Token::Close, "`)`")?;
            return Ok(inner);
        }
        self.path_led_atom()
    }

    /// A path, optionally extended by a `/text()='…'` or `= self::lab` tail.
    fn path_led_atom(&mut self) -> Result<Qualifier, XPathError> {
        let path = self.path()?;
        if self.at_text_tail() {
            self.pos += 4; // / text ( )
            self.expect(&Token::Eq, "`=` after text()")?;
            let Some(Token::Str(value)) = self.peek().cloned() else {
                return Err(self.err("expected a string literal"));
            };
            self.pos += 1;
            return Ok(Qualifier::TextEquals(path, value));
        }
        if self.eat(&Token::Eq) {
            let Some(word) = self.ident() else {
                return Err(self.err("expected `self::…` on the right of `=`"));
            };
            if word != "self" {
                return Err(self.err("only `self::…` may appear on the right of `=`"));
            }
            self.expect(&Token::ColonColon, "`::`")?;
            let test = if self.eat(&Token::Star) {
                NameTest::Any
            } else if let Some(name) = self.ident() {
                NameTest::Name(name)
            } else {
                return Err(self.err("expected an element name or `*`"));
            };
            return Ok(Qualifier::NodeEquals(path, test));
        }
        Ok(Qualifier::Path(path))
    }
}

fn check_fragment(found: Fragment, max: Fragment) -> Result<(), XPathError> {
    if found > max {
        Err(XPathError::FragmentViolation {
            found: found.to_string(),
            allowed: max.to_string(),
        })
    } else {
        Ok(())
    }
}

/// Parses a path expression and verifies it lies within `max` fragment.
pub fn parse_path(text: &str, max: Fragment) -> Result<PathExpr, XPathError> {
    let tokens = tokenize(text)?;
    let mut parser = Parser { tokens, pos: 0 };
    let expr = parser.path()?;
    if parser.pos < parser.tokens.len() {
        return Err(parser.err("trailing tokens after expression"));
    }
    check_fragment(expr.fragment(), max)?;
    Ok(expr)
}

/// Parses a bare qualifier (no surrounding brackets) within `max` fragment.
pub fn parse_qualifier(text: &str, max: Fragment) -> Result<Qualifier, XPathError> {
    let tokens = tokenize(text)?;
    let mut parser = Parser { tokens, pos: 0 };
    let q = parser.qualifier()?;
    if parser.pos < parser.tokens.len() {
        return Err(parser.err("trailing tokens after qualifier"));
    }
    check_fragment(q.fragment(), max)?;
    Ok(q)
}
