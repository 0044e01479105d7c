//! Update specifications and their compilation into path predicates.
//!
//! An update specification annotates (element type, update type) pairs with
//! one of five values: allow, deny, conditional allow, and the
//! downward-closed deny/conditional forms that forbid or constrain
//! overriding anywhere below. Unannotated types inherit from the nearest
//! annotated ancestor; everything is denied by default.
//!
//! Two independent routes decide updatability: a direct ancestor-walk
//! oracle, and a compiled qualifier built once per update type. Their
//! pointwise equivalence is the module's core contract.
//!
//! Policy files are UTF-8 lines
//!
//! ```text
//! annot medicalFolder delete[treatment] = Y
//! annot dept insertInto[treatment] = [child::dname/text()='cardiology']h
//! annot clinical insertInto[treatment] = Nh
//! # comment
//! ```

use std::fmt;
use std::sync::Arc;

use indexmap::IndexMap;

use crate::dtd::Dtd;
use crate::error::PolicyError;
use crate::tree::{NodeId, XmlTree};
use crate::xpath::{
    eval_qualifier, parse_qualifier, Axis, Fragment, NameTest, PathExpr, Qualifier,
};

/// The seven update-operation kinds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum UpdateKind {
    InsertInto,
    InsertAsFirst,
    InsertAsLast,
    InsertBefore,
    InsertAfter,
    Delete,
    Replace,
}

impl UpdateKind {
    pub fn name(self) -> &'static str {
        match self {
            UpdateKind::InsertInto => "insertInto",
            UpdateKind::InsertAsFirst => "insertAsFirst",
            UpdateKind::InsertAsLast => "insertAsLast",
            UpdateKind::InsertBefore => "insertBefore",
            UpdateKind::InsertAfter => "insertAfter",
            UpdateKind::Delete => "delete",
            UpdateKind::Replace => "replace",
        }
    }

    pub fn from_name(name: &str) -> Option<UpdateKind> {
        Some(match name {
            "insertInto" => UpdateKind::InsertInto,
            "insertAsFirst" => UpdateKind::InsertAsFirst,
            "insertAsLast" => UpdateKind::InsertAsLast,
            "insertBefore" => UpdateKind::InsertBefore,
            "insertAfter" => UpdateKind::InsertAfter,
            "delete" => UpdateKind::Delete,
            "replace" => UpdateKind::Replace,
            _ => return None,
        })
    }

    /// Insert kinds grant the right at the target node itself; delete and
    /// replace grant it over children of the annotated node.
    pub fn is_insert(self) -> bool {
        !matches!(self, UpdateKind::Delete | UpdateKind::Replace)
    }
}

/// A parametrized update class: `delete[B]`, `insertInto[B]`,
/// `replace[Bi,Bj]`, …
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct UpdateType {
    pub kind: UpdateKind,
    /// Source type for inserts; target type for delete and replace.
    pub subject: String,
    /// Replacement source type, present exactly for `replace`.
    pub replacement: Option<String>,
}

impl UpdateType {
    pub fn new(kind: UpdateKind, subject: impl Into<String>) -> UpdateType {
        assert!(kind != UpdateKind::Replace, "replace takes two type parameters");
        UpdateType { kind, subject: subject.into(), replacement: None }
    }

    pub fn replace(target: impl Into<String>, source: impl Into<String>) -> UpdateType {
        UpdateType {
            kind: UpdateKind::Replace,
            subject: target.into(),
            replacement: Some(source.into()),
        }
    }

    fn check_types(&self, dtd: &Dtd) -> Result<(), PolicyError> {
        if !dtd.has_type(&self.subject) {
            return Err(PolicyError::UnknownType(self.subject.clone()));
        }
        if let Some(replacement) = &self.replacement {
            if !dtd.has_type(replacement) {
                return Err(PolicyError::UnknownType(replacement.clone()));
            }
        }
        Ok(())
    }
}

impl fmt::Display for UpdateType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.replacement {
            Some(r) => write!(f, "{}[{},{}]", self.kind.name(), self.subject, r),
            None => write!(f, "{}[{}]", self.kind.name(), self.subject),
        }
    }
}

/// Annotation value: allow, deny, conditional, and the downward-closed
/// deny/conditional forms.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum AnnotationValue {
    Yes,
    No,
    Cond(Qualifier),
    NoClosed,
    CondClosed(Qualifier),
}

impl AnnotationValue {
    pub fn is_downward_closed(&self) -> bool {
        matches!(self, AnnotationValue::NoClosed | AnnotationValue::CondClosed(_))
    }

    /// Validity at a node: allow is always valid, deny never, conditional
    /// forms when their qualifier holds there.
    pub fn valid_at(&self, tree: &XmlTree, node: NodeId) -> bool {
        match self {
            AnnotationValue::Yes => true,
            AnnotationValue::No | AnnotationValue::NoClosed => false,
            AnnotationValue::Cond(q) | AnnotationValue::CondClosed(q) => {
                eval_qualifier(q, tree, node)
            }
        }
    }

    pub fn qualifier(&self) -> Option<&Qualifier> {
        match self {
            AnnotationValue::Cond(q) | AnnotationValue::CondClosed(q) => Some(q),
            _ => None,
        }
    }
}

impl fmt::Display for AnnotationValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AnnotationValue::Yes => write!(f, "Y"),
            AnnotationValue::No => write!(f, "N"),
            AnnotationValue::NoClosed => write!(f, "Nh"),
            AnnotationValue::Cond(q) => write!(f, "[{q}]"),
            AnnotationValue::CondClosed(q) => write!(f, "[{q}]h"),
        }
    }
}

/// An update specification: a schema plus a partial map from
/// (element type, update type) to annotation values. Declaration order is
/// preserved; it fixes the order of compiled disjuncts.
#[derive(Debug, Clone)]
pub struct UpdateSpec {
    dtd: Arc<Dtd>,
    ann_up: IndexMap<(String, UpdateType), AnnotationValue>,
}

impl UpdateSpec {
    pub fn empty(dtd: Arc<Dtd>) -> UpdateSpec {
        UpdateSpec { dtd, ann_up: IndexMap::new() }
    }

    pub fn dtd(&self) -> &Arc<Dtd> {
        &self.dtd
    }

    /// Adds one annotation; duplicate keys are an error rather than
    /// last-wins, since a silent override would make policies unauditable.
    pub fn annotate(
        &mut self,
        element_type: impl Into<String>,
        ut: UpdateType,
        value: AnnotationValue,
    ) -> Result<(), PolicyError> {
        let element_type = element_type.into();
        if !self.dtd.has_type(&element_type) {
            return Err(PolicyError::UnknownType(element_type));
        }
        ut.check_types(&self.dtd)?;
        if let Some(q) = value.qualifier() {
            if q.fragment() > Fragment::Downward {
                return Err(PolicyError::Qualifier(
                    crate::error::XPathError::FragmentViolation {
                        found: q.fragment().to_string(),
                        allowed: Fragment::Downward.to_string(),
                    },
                ));
            }
        }
        let key = (element_type, ut);
        if self.ann_up.contains_key(&key) {
            return Err(PolicyError::DuplicateKey(key.0, key.1.to_string()));
        }
        self.ann_up.insert(key, value);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.ann_up.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ann_up.is_empty()
    }

    pub fn get(&self, element_type: &str, ut: &UpdateType) -> Option<&AnnotationValue> {
        self.ann_up.get(&(element_type.to_string(), ut.clone()))
    }

    /// The sub-map for one update type, in declaration order.
    pub fn annotations_for(&self, ut: &UpdateType) -> Vec<(&str, &AnnotationValue)> {
        self.ann_up
            .iter()
            .filter(|((_, key_ut), _)| key_ut == ut)
            .map(|((ty, _), value)| (ty.as_str(), value))
            .collect()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &UpdateType, &AnnotationValue)> {
        self.ann_up.iter().map(|((ty, ut), v)| (ty.as_str(), ut, v))
    }
}

// ---------------------------------------------------------------------------
// Policy file format
// ---------------------------------------------------------------------------

/// Parses `annot <Type> <kind>[<Bi>(,<Bj>)] = <value>` lines.
pub fn parse_policy(text: &str, dtd: Arc<Dtd>) -> Result<UpdateSpec, PolicyError> {
    let mut spec = UpdateSpec::empty(dtd);
    for (idx, raw_line) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = strip_comment(raw_line).trim();
        if line.is_empty() {
            continue;
        }
        let Some(rest) = line.strip_prefix("annot ") else {
            return Err(PolicyError::Syntax {
                line: line_no,
                msg: format!("expected `annot …`, found `{line}`"),
            });
        };
        let rest = rest.trim_start();
        let Some((element_type, rest)) = rest.split_once(char::is_whitespace) else {
            return Err(PolicyError::Syntax {
                line: line_no,
                msg: "expected `<Type> <kind>[…] = <value>`".into(),
            });
        };
        let Some((ut_text, value_text)) = split_top_level_eq(rest) else {
            return Err(PolicyError::Syntax { line: line_no, msg: "expected `=`".into() });
        };
        let ut = parse_update_type(ut_text.trim(), line_no)?;
        let value = parse_annotation_value(value_text.trim(), line_no)?;
        spec.annotate(element_type, ut, value)?;
    }
    Ok(spec)
}

fn strip_comment(line: &str) -> &str {
    // `#` inside a quoted string does not start a comment
    let mut in_string = false;
    for (i, ch) in line.char_indices() {
        match ch {
            '\'' => in_string = !in_string,
            '#' if !in_string => return &line[..i],
            _ => {}
        }
    }
    line
}

/// Splits at the first `=` outside brackets and quotes, so qualifiers with
/// `text()='…'` comparisons survive intact.
fn split_top_level_eq(s: &str) -> Option<(&str, &str)> {
    let mut depth = 0i32;
    let mut in_string = false;
    for (i, ch) in s.char_indices() {
        match ch {
            '\'' => in_string = !in_string,
            '[' | '(' if !in_string => depth += 1,
            ']' | ')' if !in_string => depth -= 1,
            '=' if !in_string && depth == 0 => return Some((&s[..i], &s[i + 1..])),
            _ => {}
        }
    }
    None
}

pub(crate) fn parse_update_type(text: &str, line: usize) -> Result<UpdateType, PolicyError> {
    let Some(open) = text.find('[') else {
        return Err(PolicyError::Syntax {
            line,
            msg: format!("expected `kind[Type]`, found `{text}`"),
        });
    };
    if !text.ends_with(']') {
        return Err(PolicyError::Syntax { line, msg: "expected closing `]`".into() });
    }
    let kind_name = &text[..open];
    let kind = UpdateKind::from_name(kind_name)
        .ok_or_else(|| PolicyError::UnknownKind(kind_name.to_string()))?;
    let params = &text[open + 1..text.len() - 1];
    match kind {
        UpdateKind::Replace => {
            let Some((target, source)) = params.split_once(',') else {
                return Err(PolicyError::Syntax {
                    line,
                    msg: "replace takes two type parameters: `replace[Bi,Bj]`".into(),
                });
            };
            Ok(UpdateType::replace(target.trim(), source.trim()))
        }
        _ => {
            if params.contains(',') {
                return Err(PolicyError::Syntax {
                    line,
                    msg: format!("{} takes a single type parameter", kind.name()),
                });
            }
            Ok(UpdateType::new(kind, params.trim()))
        }
    }
}

pub(crate) fn parse_annotation_value(
    text: &str,
    line: usize,
) -> Result<AnnotationValue, PolicyError> {
    match text {
        "Y" => return Ok(AnnotationValue::Yes),
        "N" => return Ok(AnnotationValue::No),
        "Nh" => return Ok(AnnotationValue::NoClosed),
        _ => {}
    }
    if let Some(rest) = text.strip_prefix('[') {
        let (closed, inner) = if let Some(inner) = rest.strip_suffix("]h") {
            (true, inner)
        } else if let Some(inner) = rest.strip_suffix(']') {
            (false, inner)
        } else {
            return Err(PolicyError::Syntax {
                line,
                msg: "expected `]` or `]h` to close the qualifier".into(),
            });
        };
        let q = parse_qualifier(inner, Fragment::Downward)?;
        return Ok(if closed {
            AnnotationValue::CondClosed(q)
        } else {
            AnnotationValue::Cond(q)
        });
    }
    Err(PolicyError::Syntax {
        line,
        msg: format!("bad annotation value `{text}` (expected Y, N, Nh, […] or […]h)"),
    })
}

// ---------------------------------------------------------------------------
// Direct oracle
// ---------------------------------------------------------------------------

/// Nearest node in `{n} ∪ ancestors(n)` whose element type carries an
/// annotation for `ut`.
fn nearest_annotated<'s>(
    spec: &'s UpdateSpec,
    tree: &XmlTree,
    n: NodeId,
    ut: &UpdateType,
) -> Option<(NodeId, &'s AnnotationValue)> {
    let mut current = Some(n);
    while let Some(node) = current {
        if !tree.is_text(node) {
            if let Some(value) = spec.get(tree.label(node), ut) {
                return Some((node, value));
            }
        }
        current = tree.parent(node);
    }
    None
}

/// Direct ancestor-walk updatability check, no compiled predicates: the
/// nearest annotated ancestor-or-self must carry a valid annotation, and no
/// strict ancestor may carry an invalid downward-closed one. A node with no
/// applicable annotation at all is not updatable (default deny).
pub fn oracle_updatable(spec: &UpdateSpec, tree: &XmlTree, n: NodeId, ut: &UpdateType) -> bool {
    let Some((node, value)) = nearest_annotated(spec, tree, n, ut) else {
        return false;
    };
    if !value.valid_at(tree, node) {
        return false;
    }
    for ancestor in tree.ancestors(n) {
        if let Some(value) = spec.get(tree.label(ancestor), ut) {
            if value.is_downward_closed() && !value.valid_at(tree, ancestor) {
                return false;
            }
        }
    }
    true
}

/// Direct check that update operations of type `ut` are explicitly
/// forbidden at `n`: the nearest annotated ancestor-or-self carries an
/// invalid annotation, or some strict ancestor carries an invalid
/// downward-closed one.
pub fn oracle_forbidden(spec: &UpdateSpec, tree: &XmlTree, n: NodeId, ut: &UpdateType) -> bool {
    if let Some((node, value)) = nearest_annotated(spec, tree, n, ut) {
        if !value.valid_at(tree, node) {
            return true;
        }
    }
    tree.ancestors(n).into_iter().any(|ancestor| {
        spec.get(tree.label(ancestor), ut)
            .map(|value| value.is_downward_closed() && !value.valid_at(tree, ancestor))
            .unwrap_or(false)
    })
}

/// Direct form of the insert-conflict check for source type `b`: a
/// positional insert kind is explicitly forbidden at `n` itself or, for the
/// sibling kinds, at some child of `n`.
pub fn oracle_conflict(spec: &UpdateSpec, tree: &XmlTree, n: NodeId, b: &str) -> bool {
    let first = UpdateType::new(UpdateKind::InsertAsFirst, b);
    let last = UpdateType::new(UpdateKind::InsertAsLast, b);
    let before = UpdateType::new(UpdateKind::InsertBefore, b);
    let after = UpdateType::new(UpdateKind::InsertAfter, b);
    oracle_forbidden(spec, tree, n, &first)
        || oracle_forbidden(spec, tree, n, &last)
        || tree.element_children(n).into_iter().any(|c| {
            oracle_forbidden(spec, tree, c, &before) || oracle_forbidden(spec, tree, c, &after)
        })
}

// ---------------------------------------------------------------------------
// Predicate compilation
// ---------------------------------------------------------------------------

/// `self::A` or `self::A[Q]` as a disjunct.
fn self_with(ty: &str, q: Option<&Qualifier>) -> Qualifier {
    let step = PathExpr::self_named(ty);
    let path = match q {
        Some(q) => step.filter(q.clone()),
        None => step,
    };
    Qualifier::Path(path)
}

/// First half of the updatability predicate: the nearest ancestor-or-self
/// node carrying an annotation of this type must carry a valid one.
/// Shape: `ancestor-or-self::*[any annotated type][1][valid disjuncts]`.
/// `None` when no annotation exists for `ut`.
pub fn build_u1(spec: &UpdateSpec, ut: &UpdateType) -> Option<Qualifier> {
    build_u1_from(&spec.annotations_for(ut))
}

/// As [`build_u1`], over a pre-grouped annotation slice.
pub fn build_u1_from(annotations: &[(&str, &AnnotationValue)]) -> Option<Qualifier> {
    if annotations.is_empty() {
        return None;
    }
    let concerned =
        Qualifier::any_of(annotations.iter().map(|(ty, _)| self_with(ty, None)).collect())
            .expect("nonempty");
    let mut valid = Vec::new();
    for (ty, value) in annotations {
        if matches!(value, AnnotationValue::Yes) {
            valid.push(self_with(ty, None));
        }
    }
    for (ty, value) in annotations {
        if let Some(q) = value.qualifier() {
            valid.push(self_with(ty, Some(q)));
        }
    }
    let valid = Qualifier::any_of(valid).unwrap_or_else(Qualifier::constant_false);
    let path = PathExpr::step(Axis::AncestorOrSelf, NameTest::Any)
        .filter(concerned)
        .position(1)
        .filter(valid);
    Some(Qualifier::Path(path))
}

/// Second half: every downward-closed annotation on a strict ancestor must
/// be valid there. Conjuncts follow declaration order. `None` when no
/// downward-closed annotation exists for `ut`.
pub fn build_u2(spec: &UpdateSpec, ut: &UpdateType) -> Option<Qualifier> {
    build_u2_from(&spec.annotations_for(ut))
}

/// As [`build_u2`], over a pre-grouped annotation slice.
pub fn build_u2_from(annotations: &[(&str, &AnnotationValue)]) -> Option<Qualifier> {
    let mut conjuncts = Vec::new();
    for (ty, value) in annotations {
        match value {
            AnnotationValue::NoClosed => {
                let path = PathExpr::step(Axis::Ancestor, NameTest::Name(ty.to_string()));
                conjuncts.push(Qualifier::Path(path).not());
            }
            AnnotationValue::CondClosed(q) => {
                let path = PathExpr::step(Axis::Ancestor, NameTest::Name(ty.to_string()))
                    .filter(q.clone().not());
                conjuncts.push(Qualifier::Path(path).not());
            }
            _ => {}
        }
    }
    Qualifier::all_of(conjuncts)
}

/// The updatability predicate: a node is updatable w.r.t `ut` iff this
/// qualifier holds at it. Constant-false when nothing is annotated for `ut`.
pub fn build_updatability(spec: &UpdateSpec, ut: &UpdateType) -> Qualifier {
    build_updatability_from(&spec.annotations_for(ut))
}

/// As [`build_updatability`], over a pre-grouped annotation slice.
pub fn build_updatability_from(annotations: &[(&str, &AnnotationValue)]) -> Qualifier {
    match (build_u1_from(annotations), build_u2_from(annotations)) {
        (None, _) => Qualifier::constant_false(),
        (Some(u1), None) => u1,
        (Some(u1), Some(u2)) => u1.and(u2),
    }
}

/// The explicit-prohibition predicate: true where `ut` is explicitly
/// forbidden, either because the nearest annotated ancestor-or-self node
/// carries an invalid annotation, or because a strict ancestor carries an
/// invalid downward-closed one. Constant-false when nothing is annotated.
pub fn build_forbidden(spec: &UpdateSpec, ut: &UpdateType) -> Qualifier {
    let annotations = spec.annotations_for(ut);
    if annotations.is_empty() {
        return Qualifier::constant_false();
    }
    let concerned =
        Qualifier::any_of(annotations.iter().map(|(ty, _)| self_with(ty, None)).collect())
            .expect("nonempty");
    let mut invalid = Vec::new();
    for (ty, value) in &annotations {
        if matches!(value, AnnotationValue::No | AnnotationValue::NoClosed) {
            invalid.push(self_with(ty, None));
        }
    }
    for (ty, value) in &annotations {
        if let Some(q) = value.qualifier() {
            invalid.push(self_with(ty, Some(&q.clone().not())));
        }
    }
    let invalid = Qualifier::any_of(invalid).unwrap_or_else(Qualifier::constant_false);
    let cnd_ab = Qualifier::Path(
        PathExpr::step(Axis::AncestorOrSelf, NameTest::Any)
            .filter(concerned)
            .position(1)
            .filter(invalid),
    );
    let mut cnd_c = Vec::new();
    for (ty, value) in &annotations {
        match value {
            AnnotationValue::NoClosed => {
                cnd_c.push(Qualifier::Path(PathExpr::step(
                    Axis::Ancestor,
                    NameTest::Name(ty.to_string()),
                )));
            }
            AnnotationValue::CondClosed(q) => {
                cnd_c.push(Qualifier::Path(
                    PathExpr::step(Axis::Ancestor, NameTest::Name(ty.to_string()))
                        .filter(q.clone().not()),
                ));
            }
            _ => {}
        }
    }
    match Qualifier::any_of(cnd_c) {
        Some(c) => cnd_ab.or(c),
        None => cnd_ab,
    }
}

/// Conflict-resolution predicate for inserting nodes of type `b`: true
/// where one of the positional insert kinds is explicitly forbidden at the
/// node or, for the sibling kinds, at one of its children. Disjuncts whose
/// update type has no annotations are dropped; with none left the predicate
/// is constant-false.
pub fn build_crp(spec: &UpdateSpec, b: &str) -> Qualifier {
    let mut disjuncts = Vec::new();
    let first = UpdateType::new(UpdateKind::InsertAsFirst, b);
    if !spec.annotations_for(&first).is_empty() {
        disjuncts.push(build_forbidden(spec, &first));
    }
    let last = UpdateType::new(UpdateKind::InsertAsLast, b);
    if !spec.annotations_for(&last).is_empty() {
        disjuncts.push(build_forbidden(spec, &last));
    }
    let before = UpdateType::new(UpdateKind::InsertBefore, b);
    if !spec.annotations_for(&before).is_empty() {
        disjuncts.push(Qualifier::Path(
            PathExpr::step(Axis::Child, NameTest::Any).filter(build_forbidden(spec, &before)),
        ));
    }
    let after = UpdateType::new(UpdateKind::InsertAfter, b);
    if !spec.annotations_for(&after).is_empty() {
        disjuncts.push(Qualifier::Path(
            PathExpr::step(Axis::Child, NameTest::Any).filter(build_forbidden(spec, &after)),
        ));
    }
    Qualifier::any_of(disjuncts).unwrap_or_else(Qualifier::constant_false)
}
