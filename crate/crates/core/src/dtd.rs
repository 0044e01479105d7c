//! Schema model: element types, regular-expression content models, and
//! conformance machinery.
//!
//! A schema is a triple of element types, per-type content models, and a
//! root type. Content models are regular expressions over element-type
//! names plus the text type `str`; recursion through content models is
//! allowed and detected, never forbidden.
//!
//! The textual format is line based:
//!
//! ```text
//! root hospital;
//! hospital -> (dept)*;
//! dname -> STR;
//! patient -> pname, categ, (parent | EPSILON), medicalFolder;
//! ```
//!
//! `,` is sequence, `|` alternation, `*` the Kleene star, `EPSILON` the
//! empty word and `STR` the text type. `#` starts a comment.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use crate::error::DtdError;

/// Label of the text type in content models and tree labels.
pub const STR_TYPE: &str = "str";

/// Regular expression over element-type names and the text type.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ContentModel {
    /// The text type `str` (PCDATA).
    Str,
    /// The empty word.
    Epsilon,
    /// A single element type.
    Name(String),
    Seq(Box<ContentModel>, Box<ContentModel>),
    Alt(Box<ContentModel>, Box<ContentModel>),
    Star(Box<ContentModel>),
}

impl ContentModel {
    /// All element-type names referenced by this model (excludes `str`).
    pub fn referenced_types(&self) -> BTreeSet<String> {
        let mut out = BTreeSet::new();
        self.collect_types(&mut out);
        out
    }

    fn collect_types(&self, out: &mut BTreeSet<String>) {
        match self {
            ContentModel::Str | ContentModel::Epsilon => {}
            ContentModel::Name(n) => {
                out.insert(n.clone());
            }
            ContentModel::Seq(a, b) | ContentModel::Alt(a, b) => {
                a.collect_types(out);
                b.collect_types(out);
            }
            ContentModel::Star(a) => a.collect_types(out),
        }
    }

    /// Number of constructors in the expression tree.
    pub fn size(&self) -> usize {
        match self {
            ContentModel::Str | ContentModel::Epsilon | ContentModel::Name(_) => 1,
            ContentModel::Seq(a, b) | ContentModel::Alt(a, b) => 1 + a.size() + b.size(),
            ContentModel::Star(a) => 1 + a.size(),
        }
    }
}

impl fmt::Display for ContentModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        // `,` binds tighter than `|`, so Alt children of a Seq need parens;
        // the right side of either binary form is parenthesized when it is
        // the same constructor, keeping printed trees left associated.
        fn atom(m: &ContentModel, f: &mut fmt::Formatter<'_>, parent_seq: bool) -> fmt::Result {
            let needs_parens = match m {
                ContentModel::Alt(..) => parent_seq,
                _ => false,
            };
            if needs_parens {
                write!(f, "(")?;
                write!(f, "{m}")?;
                write!(f, ")")
            } else {
                write!(f, "{m}")
            }
        }
        match self {
            ContentModel::Str => write!(f, "STR"),
            ContentModel::Epsilon => write!(f, "EPSILON"),
            ContentModel::Name(n) => write!(f, "{n}"),
            ContentModel::Seq(a, b) => {
                atom(a, f, true)?;
                write!(f, ", ")?;
                match b.as_ref() {
                    ContentModel::Seq(..) => {
                        write!(f, "(")?;
                        atom(b, f, true)?;
                        write!(f, ")")
                    }
                    _ => atom(b, f, true),
                }
            }
            ContentModel::Alt(a, b) => {
                write!(f, "{a} | ")?;
                match b.as_ref() {
                    ContentModel::Alt(..) => write!(f, "({b})"),
                    _ => write!(f, "{b}"),
                }
            }
            ContentModel::Star(a) => write!(f, "({a})*"),
        }
    }
}

/// A schema: element types, their content models, and the root type.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Dtd {
    ele: BTreeSet<String>,
    rg: BTreeMap<String, ContentModel>,
    root: String,
    automata: BTreeMap<String, Nfa>,
}

impl Dtd {
    /// Builds a schema from productions, checking the structural invariants.
    pub fn new(
        root: impl Into<String>,
        productions: Vec<(String, ContentModel)>,
    ) -> Result<Self, DtdError> {
        let root = root.into();
        let mut ele = BTreeSet::new();
        let mut rg = BTreeMap::new();
        for (name, model) in productions {
            if rg.contains_key(&name) {
                return Err(DtdError::DuplicateProduction(name));
            }
            ele.insert(name.clone());
            rg.insert(name, model);
        }
        if !ele.contains(&root) {
            return Err(DtdError::UndefinedRoot(root));
        }
        for model in rg.values() {
            for referenced in model.referenced_types() {
                if !ele.contains(&referenced) {
                    return Err(DtdError::UnknownType(referenced));
                }
            }
        }
        let automata = rg
            .iter()
            .map(|(name, model)| (name.clone(), Nfa::compile(model)))
            .collect();
        Ok(Dtd { ele, rg, root, automata })
    }

    pub fn root(&self) -> &str {
        &self.root
    }

    pub fn element_types(&self) -> impl Iterator<Item = &str> {
        self.ele.iter().map(String::as_str)
    }

    pub fn has_type(&self, name: &str) -> bool {
        self.ele.contains(name)
    }

    pub fn content_model(&self, name: &str) -> Option<&ContentModel> {
        self.rg.get(name)
    }

    /// Decides whether `word` (a sequence of child labels, `str` included)
    /// belongs to the language of `name`'s content model. Linear in the
    /// length of the word for a fixed model: the model is compiled once
    /// when the schema is built.
    pub fn accepts(&self, name: &str, word: &[&str]) -> Option<bool> {
        self.automata.get(name).map(|nfa| nfa.accepts(word))
    }

    /// True when some element type reaches itself through content models,
    /// directly or indirectly. Derived from the productions on demand.
    pub fn is_recursive(&self) -> bool {
        self.ele.iter().any(|ty| self.reachable_from(ty).contains(ty))
    }

    /// Element types reachable from `from` through one or more content-model
    /// edges.
    pub fn reachable_from(&self, from: &str) -> BTreeSet<String> {
        let mut reached = BTreeSet::new();
        let mut stack: Vec<String> = self
            .rg
            .get(from)
            .map(|m| m.referenced_types().into_iter().collect())
            .unwrap_or_default();
        while let Some(ty) = stack.pop() {
            if reached.insert(ty.clone()) {
                if let Some(model) = self.rg.get(&ty) {
                    stack.extend(model.referenced_types());
                }
            }
        }
        reached
    }

    /// Child types occurring in the content model of `parent`.
    pub fn child_types(&self, parent: &str) -> BTreeSet<String> {
        self.rg
            .get(parent)
            .map(|m| m.referenced_types())
            .unwrap_or_default()
    }
}

impl fmt::Display for Dtd {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "root {};", self.root)?;
        for (name, model) in &self.rg {
            writeln!(f, "{name} -> {model};")?;
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Content-model parsing
// ---------------------------------------------------------------------------

/// Parses the textual schema format described in the module docs.
pub fn parse_dtd(text: &str) -> Result<Dtd, DtdError> {
    let mut root: Option<String> = None;
    let mut productions: Vec<(String, ContentModel)> = Vec::new();
    let mut seen: BTreeSet<String> = BTreeSet::new();

    for (stmt, line, col) in statements(text) {
        let stmt = stmt.trim();
        if stmt.is_empty() {
            continue;
        }
        if let Some(rest) = stmt.strip_prefix("root") {
            if rest.starts_with(|c: char| c.is_whitespace()) {
                let name = rest.trim();
                if name.is_empty() || !is_name(name) {
                    return Err(DtdError::Syntax {
                        line,
                        col,
                        msg: format!("bad root declaration `{stmt}`"),
                    });
                }
                if root.is_some() {
                    return Err(DtdError::Syntax {
                        line,
                        col,
                        msg: "duplicate root declaration".into(),
                    });
                }
                root = Some(name.to_string());
                continue;
            }
        }
        let Some((lhs, rhs)) = stmt.split_once("->") else {
            return Err(DtdError::Syntax {
                line,
                col,
                msg: format!("expected `<name> -> <model>` in `{stmt}`"),
            });
        };
        let name = lhs.trim();
        if !is_name(name) {
            return Err(DtdError::Syntax {
                line,
                col,
                msg: format!("bad element-type name `{name}`"),
            });
        }
        if !seen.insert(name.to_string()) {
            return Err(DtdError::DuplicateProduction(name.to_string()));
        }
        let model = parse_model(rhs, line, col)?;
        productions.push((name.to_string(), model));
    }

    let root = root.ok_or(DtdError::MissingRoot)?;
    if !seen.contains(&root) {
        return Err(DtdError::UndefinedRoot(root));
    }
    Dtd::new(root, productions)
}

/// Splits the source into `;`-terminated statements, stripping `#` comments,
/// and tracks the (line, column) where each statement starts.
fn statements(text: &str) -> Vec<(String, usize, usize)> {
    let mut out = Vec::new();
    let mut current = String::new();
    let mut start: Option<(usize, usize)> = None;
    let mut line = 1usize;
    let mut col = 1usize;
    let mut in_comment = false;
    for ch in text.chars() {
        match ch {
            '\n' => {
                in_comment = false;
                current.push(' ');
                line += 1;
                col = 1;
                continue;
            }
            '#' => in_comment = true,
            ';' if !in_comment => {
                let (l, c) = start.take().unwrap_or((line, col));
                out.push((std::mem::take(&mut current), l, c));
                col += 1;
                continue;
            }
            _ => {}
        }
        if !in_comment {
            if start.is_none() && !ch.is_whitespace() {
                start = Some((line, col));
            }
            current.push(ch);
        }
        col += 1;
    }
    if !current.trim().is_empty() {
        let (l, c) = start.unwrap_or((line, col));
        out.push((current, l, c));
    }
    out
}

fn is_name(s: &str) -> bool {
    !s.is_empty()
        && s.chars().next().unwrap().is_ascii_alphabetic()
        && s.chars().all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-')
        && s != "EPSILON"
        && s != "STR"
}

struct ModelParser<'a> {
    tokens: Vec<ModelToken<'a>>,
    pos: usize,
    line: usize,
    col: usize,
}

#[derive(Debug, PartialEq)]
enum ModelToken<'a> {
    Name(&'a str),
    Epsilon,
    Str,
    Comma,
    Pipe,
    Star,
    Open,
    Close,
}

fn parse_model(src: &str, line: usize, col: usize) -> Result<ContentModel, DtdError> {
    let mut tokens = Vec::new();
    let mut rest = src.trim();
    while !rest.is_empty() {
        let ch = rest.chars().next().unwrap();
        let (token, advance) = match ch {
            ',' => (ModelToken::Comma, 1),
            '|' => (ModelToken::Pipe, 1),
            '*' => (ModelToken::Star, 1),
            '(' => (ModelToken::Open, 1),
            ')' => (ModelToken::Close, 1),
            c if c.is_whitespace() => {
                rest = &rest[c.len_utf8()..];
                continue;
            }
            c if c.is_ascii_alphanumeric() || c == '_' => {
                let end = rest
                    .find(|c: char| !(c.is_ascii_alphanumeric() || c == '_' || c == '-'))
                    .unwrap_or(rest.len());
                let word = &rest[..end];
                let token = match word {
                    "EPSILON" => ModelToken::Epsilon,
                    "STR" => ModelToken::Str,
                    _ => ModelToken::Name(word),
                };
                (token, end)
            }
            c => {
                return Err(DtdError::Syntax {
                    line,
                    col,
                    msg: format!("unexpected character `{c}` in content model"),
                })
            }
        };
        tokens.push(token);
        rest = &rest[advance..];
    }
    let mut parser = ModelParser { tokens, pos: 0, line, col };
    let model = parser.alt()?;
    if parser.pos < parser.tokens.len() {
        return Err(parser.err("trailing tokens after content model"));
    }
    Ok(model)
}

impl<'a> ModelParser<'a> {
    fn err(&self, msg: &str) -> DtdError {
        DtdError::Syntax { line: self.line, col: self.col, msg: msg.to_string() }
    }

    fn peek(&self) -> Option<&ModelToken<'a>> {
        self.tokens.get(self.pos)
    }

    // alt := seq ('|' seq)*
    fn alt(&mut self) -> Result<ContentModel, DtdError> {
        let mut left = self.seq()?;
        while self.peek() == Some(&ModelToken::Pipe) {
            self.pos += 1;
            let right = self.seq()?;
            left = ContentModel::Alt(Box::new(left), Box::new(right));
        }
        Ok(left)
    }

    // seq := atom (',' atom)*
    fn seq(&mut self) -> Result<ContentModel, DtdError> {
        let mut left = self.starred()?;
        while self.peek() == Some(&ModelToken::Comma) {
            self.pos += 1;
            let right = self.starred()?;
            left = ContentModel::Seq(Box::new(left), Box::new(right));
        }
        Ok(left)
    }

    // starred := atom '*'*
    fn starred(&mut self) -> Result<ContentModel, DtdError> {
        let mut atom = self.atom()?;
        while self.peek() == Some(&ModelToken::Star) {
            self.pos += 1;
            atom = ContentModel::Star(Box::new(atom));
        }
        Ok(atom)
    }

    fn atom(&mut self) -> Result<ContentModel, DtdError> {
        match self.tokens.get(self.pos) {
            Some(ModelToken::Name(n)) => {
                self.pos += 1;
                Ok(ContentModel::Name(n.to_string()))
            }
            Some(ModelToken::Epsilon) => {
                self.pos += 1;
                Ok(ContentModel::Epsilon)
            }
            Some(ModelToken::Str) => {
                self.pos += 1;
                Ok(ContentModel::Str)
            }
            Some(ModelToken::Open) => {
                self.pos += 1;
                let inner = self.alt()?;
                if self.peek() != Some(&ModelToken::Close) {
                    return Err(self.err("expected `)`"));
                }
                self.pos += 1;
                Ok(inner)
            }
            _ => Err(self.err("expected a content-model atom")),
        }
    }
}

// ---------------------------------------------------------------------------
// Membership automaton
// ---------------------------------------------------------------------------

/// Thompson construction; membership runs a set-of-states simulation, so one
/// decision is O(states × word length) with states fixed per model.
#[derive(Debug, Clone, PartialEq, Eq)]
struct Nfa {
    /// `transitions[state]` is a list of `(symbol, target)` edges.
    transitions: Vec<Vec<(String, usize)>>,
    /// `epsilons[state]` lists ε-edges.
    epsilons: Vec<Vec<usize>>,
    start: usize,
    accept: usize,
}

impl Nfa {
    fn compile(model: &ContentModel) -> Nfa {
        let mut nfa = Nfa {
            transitions: Vec::new(),
            epsilons: Vec::new(),
            start: 0,
            accept: 0,
        };
        let start = nfa.fresh();
        let accept = nfa.fresh();
        nfa.start = start;
        nfa.accept = accept;
        nfa.build(model, start, accept);
        nfa
    }

    fn fresh(&mut self) -> usize {
        self.transitions.push(Vec::new());
        self.epsilons.push(Vec::new());
        self.transitions.len() - 1
    }

    fn build(&mut self, model: &ContentModel, from: usize, to: usize) {
        match model {
            ContentModel::Epsilon => self.epsilons[from].push(to),
            ContentModel::Str => self.transitions[from].push((STR_TYPE.to_string(), to)),
            ContentModel::Name(n) => self.transitions[from].push((n.clone(), to)),
            ContentModel::Seq(a, b) => {
                let mid = self.fresh();
                self.build(a, from, mid);
                self.build(b, mid, to);
            }
            ContentModel::Alt(a, b) => {
                self.build(a, from, to);
                self.build(b, from, to);
            }
            ContentModel::Star(a) => {
                let hub = self.fresh();
                self.epsilons[from].push(hub);
                self.build(a, hub, hub);
                self.epsilons[hub].push(to);
            }
        }
    }

    fn closure(&self, states: &mut [bool]) {
        let mut stack: Vec<usize> =
            states.iter().enumerate().filter(|(_, on)| **on).map(|(i, _)| i).collect();
        while let Some(s) = stack.pop() {
            for &t in &self.epsilons[s] {
                if !states[t] {
                    states[t] = true;
                    stack.push(t);
                }
            }
        }
    }

    fn accepts(&self, word: &[&str]) -> bool {
        let mut current = vec![false; self.transitions.len()];
        current[self.start] = true;
        self.closure(&mut current);
        for symbol in word {
            let mut next = vec![false; self.transitions.len()];
            for (state, on) in current.iter().enumerate() {
                if !on {
                    continue;
                }
                for (edge, target) in &self.transitions[state] {
                    if edge == symbol {
                        next[*target] = true;
                    }
                }
            }
            self.closure(&mut next);
            current = next;
        }
        current[self.accept]
    }
}
