//! Path-expression ASTs and their surface printing.
//!
//! The expression language follows the grammar
//!
//! ```text
//! p := axis::lab | p[q] | p/p | p ∪ p | p[n]
//! q := p | p/text()='c' | q and q | q or q | not(q) | p = self::lab
//! ```
//!
//! with axes `self`, `child`, `descendant`, `descendant-or-self`, `parent`,
//! `ancestor`, `ancestor-or-self`. Four nested fragments are distinguished:
//! the downward fragment (policy and input language), the upward extension,
//! the position extension, and the node-comparison extension (the output
//! language of the rewriters).

use std::fmt;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Axis {
    SelfAxis,
    Child,
    Descendant,
    DescendantOrSelf,
    Parent,
    Ancestor,
    AncestorOrSelf,
}

impl Axis {
    pub fn is_downward(self) -> bool {
        matches!(
            self,
            Axis::SelfAxis | Axis::Child | Axis::Descendant | Axis::DescendantOrSelf
        )
    }

    pub fn name(self) -> &'static str {
        match self {
            Axis::SelfAxis => "self",
            Axis::Child => "child",
            Axis::Descendant => "descendant",
            Axis::DescendantOrSelf => "descendant-or-self",
            Axis::Parent => "parent",
            Axis::Ancestor => "ancestor",
            Axis::AncestorOrSelf => "ancestor-or-self",
        }
    }
}

/// Label test of a step: a specific element type or `*`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum NameTest {
    Any,
    Name(String),
}

impl NameTest {
    pub fn matches(&self, label: &str) -> bool {
        match self {
            NameTest::Any => true,
            NameTest::Name(n) => n == label,
        }
    }
}

impl fmt::Display for NameTest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            NameTest::Any => write!(f, "*"),
            NameTest::Name(n) => write!(f, "{n}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum PathExpr {
    Step(Axis, NameTest),
    /// `p[q]`
    Filter(Box<PathExpr>, Box<Qualifier>),
    /// `p[n]`, 1-based: keeps the n-th node of `p`'s ordered result.
    Position(Box<PathExpr>, usize),
    Slash(Box<PathExpr>, Box<PathExpr>),
    Union(Box<PathExpr>, Box<PathExpr>),
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Qualifier {
    /// Valid iff the path's result set is nonempty.
    Path(PathExpr),
    /// `p/text()='c'`: some result node has a text child with value `c`.
    TextEquals(PathExpr, String),
    And(Box<Qualifier>, Box<Qualifier>),
    Or(Box<Qualifier>, Box<Qualifier>),
    Not(Box<Qualifier>),
    /// `p = self::lab`: `p` yields exactly one node and it is the context
    /// node, whose label must match.
    NodeEquals(PathExpr, NameTest),
}

/// The four nested expression fragments, smallest first.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Fragment {
    /// Downward axes only; no position, no node comparison.
    Downward,
    /// Adds the upward axes.
    Upward,
    /// Adds the position predicate.
    UpwardPos,
    /// Adds the node-comparison predicate.
    UpwardPosEq,
}

impl fmt::Display for Fragment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            Fragment::Downward => "X",
            Fragment::Upward => "X^up",
            Fragment::UpwardPos => "X^up[n]",
            Fragment::UpwardPosEq => "X^up[n,=]",
        };
        write!(f, "{name}")
    }
}

impl PathExpr {
    pub fn step(axis: Axis, test: NameTest) -> PathExpr {
        PathExpr::Step(axis, test)
    }

    pub fn self_any() -> PathExpr {
        PathExpr::Step(Axis::SelfAxis, NameTest::Any)
    }

    pub fn self_named(name: impl Into<String>) -> PathExpr {
        PathExpr::Step(Axis::SelfAxis, NameTest::Name(name.into()))
    }

    pub fn filter(self, q: Qualifier) -> PathExpr {
        PathExpr::Filter(Box::new(self), Box::new(q))
    }

    pub fn position(self, n: usize) -> PathExpr {
        PathExpr::Position(Box::new(self), n)
    }

    pub fn slash(self, next: PathExpr) -> PathExpr {
        PathExpr::Slash(Box::new(self), Box::new(next))
    }

    pub fn union(self, other: PathExpr) -> PathExpr {
        PathExpr::Union(Box::new(self), Box::new(other))
    }

    /// Smallest fragment containing this expression.
    pub fn fragment(&self) -> Fragment {
        match self {
            PathExpr::Step(axis, _) => {
                if axis.is_downward() {
                    Fragment::Downward
                } else {
                    Fragment::Upward
                }
            }
            PathExpr::Filter(p, q) => p.fragment().max(q.fragment()),
            PathExpr::Position(p, _) => p.fragment().max(Fragment::UpwardPos),
            PathExpr::Slash(a, b) | PathExpr::Union(a, b) => a.fragment().max(b.fragment()),
        }
    }

    /// Number of constructors in the expression tree (qualifiers included).
    pub fn size(&self) -> usize {
        match self {
            PathExpr::Step(..) => 1,
            PathExpr::Filter(p, q) => 1 + p.size() + q.size(),
            PathExpr::Position(p, _) => 1 + p.size(),
            PathExpr::Slash(a, b) | PathExpr::Union(a, b) => 1 + a.size() + b.size(),
        }
    }
}

impl Qualifier {
    pub fn and(self, other: Qualifier) -> Qualifier {
        Qualifier::And(Box::new(self), Box::new(other))
    }

    pub fn or(self, other: Qualifier) -> Qualifier {
        Qualifier::Or(Box::new(self), Box::new(other))
    }

    // named after the surface form `not(q)`
    #[allow(clippy::should_implement_trait)]
    pub fn not(self) -> Qualifier {
        Qualifier::Not(Box::new(self))
    }

    /// `not(self::*)`: false at every node.
    pub fn constant_false() -> Qualifier {
        Qualifier::Path(PathExpr::self_any()).not()
    }

    /// `self::*`: true at every node.
    pub fn constant_true() -> Qualifier {
        Qualifier::Path(PathExpr::self_any())
    }

    /// Left-associated disjunction; `None` when the list is empty.
    pub fn any_of(mut qs: Vec<Qualifier>) -> Option<Qualifier> {
        if qs.is_empty() {
            return None;
        }
        let first = qs.remove(0);
        Some(qs.into_iter().fold(first, |acc, q| acc.or(q)))
    }

    /// Left-associated conjunction; `None` when the list is empty.
    pub fn all_of(mut qs: Vec<Qualifier>) -> Option<Qualifier> {
        if qs.is_empty() {
            return None;
        }
        let first = qs.remove(0);
        Some(qs.into_iter().fold(first, |acc, q| acc.and(q)))
    }

    pub fn fragment(&self) -> Fragment {
        match self {
            Qualifier::Path(p) => p.fragment(),
            Qualifier::TextEquals(p, _) => p.fragment(),
            Qualifier::And(a, b) | Qualifier::Or(a, b) => a.fragment().max(b.fragment()),
            Qualifier::Not(q) => q.fragment(),
            Qualifier::NodeEquals(p, _) => p.fragment().max(Fragment::UpwardPosEq),
        }
    }

    pub fn size(&self) -> usize {
        match self {
            Qualifier::Path(p) => 1 + p.size(),
            Qualifier::TextEquals(p, _) => 1 + p.size(),
            Qualifier::And(a, b) | Qualifier::Or(a, b) => 1 + a.size() + b.size(),
            Qualifier::Not(q) => 1 + q.size(),
            Qualifier::NodeEquals(p, _) => 1 + p.size(),
        }
    }
}

// ---------------------------------------------------------------------------
// Printing
// ---------------------------------------------------------------------------
//
// Path precedence, loosest first: union, slash, postfix ([q] and [n]).
// Qualifier precedence: or, and, atoms. The printer emits parentheses
// exactly where reparsing would otherwise change the tree.

fn path_level(p: &PathExpr) -> u8 {
    match p {
        PathExpr::Union(..) => 1,
        PathExpr::Slash(..) => 2,
        PathExpr::Filter(..) | PathExpr::Position(..) => 3,
        PathExpr::Step(..) => 4,
    }
}

fn write_path(p: &PathExpr, min_level: u8, out: &mut String) {
    let level = path_level(p);
    let parens = level < min_level;
    if parens {
        out.push('(');
    }
    match p {
        PathExpr::Step(axis, test) => {
            out.push_str(axis.name());
            out.push_str("::");
            out.push_str(&test.to_string());
        }
        PathExpr::Filter(inner, q) => {
            write_path(inner, 3, out);
            out.push('[');
            write_qualifier(q, 1, out);
            out.push(']');
        }
        PathExpr::Position(inner, n) => {
            write_path(inner, 3, out);
            out.push('[');
            out.push_str(&n.to_string());
            out.push(']');
        }
        PathExpr::Slash(a, b) => {
            write_path(a, 2, out);
            out.push('/');
            write_path(b, 3, out);
        }
        PathExpr::Union(a, b) => {
            write_path(a, 1, out);
            out.push_str(" | ");
            write_path(b, 2, out);
        }
    }
    if parens {
        out.push(')');
    }
}

fn qualifier_level(q: &Qualifier) -> u8 {
    match q {
        Qualifier::Or(..) => 1,
        Qualifier::And(..) => 2,
        _ => 3,
    }
}

fn write_qualifier(q: &Qualifier, min_level: u8, out: &mut String) {
    let level = qualifier_level(q);
    let parens = level < min_level;
    if parens {
        out.push('(');
    }
    match q {
        Qualifier::Path(p) => write_path(p, 1, out),
        Qualifier::TextEquals(p, c) => {
            write_path(p, 2, out);
            out.push_str("/text()='");
            out.push_str(c);
            out.push('\'');
        }
        Qualifier::And(a, b) => {
            write_qualifier(a, 2, out);
            out.push_str(" and ");
            write_qualifier(b, 3, out);
        }
        Qualifier::Or(a, b) => {
            write_qualifier(a, 1, out);
            out.push_str(" or ");
            write_qualifier(b, 2, out);
        }
        Qualifier::Not(inner) => {
            out.push_str("not(");
            write_qualifier(inner, 1, out);
            out.push(')');
        }
        Qualifier::NodeEquals(p, test) => {
            write_path(p, 2, out);
            out.push_str(" = self::");
            out.push_str(&test.to_string());
        }
    }
    if parens {
        out.push(')');
    }
}

impl fmt::Display for PathExpr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut out = String::new();
        write_path(self, 1, &mut out);
        f.write_str(&out)
    }
}

impl fmt::Display for Qualifier {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut out = String::new();
        write_qualifier(self, 1, &mut out);
        f.write_str(&out)
    }
}
