//! Update operations: parsing, safety rewriting, and guarded application.
//!
//! Rewriting appends exactly one safety qualifier to the operation's target
//! expression, so the operation only ever reaches nodes the policy lets the
//! user touch: for delete and replace the parent of each target node must
//! be updatable for that node's type; positional inserts check the target
//! node itself; contained inserts additionally require that no positional
//! insert kind is explicitly forbidden there.
//!
//! Application evaluates the rewritten target at the document root, applies
//! the edits, then revalidates: a document that no longer conforms rolls
//! back to the original. The report distinguishes accepted, accepted-no-op,
//! dynamic-error and rejected-invalid so callers can tell silence from
//! denial.

use std::fmt;

use crate::dtd::Dtd;
use crate::error::UpdateError;
use crate::policy::{build_crp, build_updatability, UpdateKind, UpdateSpec, UpdateType};
use crate::tree::{
    parse_xml, serialize_xml_compact, InsertPos, NodeId, SiblingSide, TreeEdit, XmlTree,
};
use crate::validate::{validate, Violation};
use crate::xpath::{eval, parse_path, Axis, Fragment, NameTest, PathExpr, Qualifier};

/// A parsed update operation. The target is a downward-fragment expression;
/// sources are whole XML fragments sharing one root type.
#[derive(Debug, Clone)]
pub struct UpdateOp {
    pub kind: UpdateKind,
    pub target: PathExpr,
    pub source: Vec<XmlTree>,
    /// Shared root type of the source fragments; absent for delete.
    pub source_type: Option<String>,
}

/// An update operation whose target carries the appended safety qualifier.
#[derive(Debug, Clone)]
pub struct RewrittenOp {
    pub kind: UpdateKind,
    pub target: PathExpr,
    pub source: Vec<XmlTree>,
    pub source_type: Option<String>,
}

impl fmt::Display for UpdateOp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write_op(f, self.kind, &self.target, &self.source)
    }
}

impl fmt::Display for RewrittenOp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write_op(f, self.kind, &self.target, &self.source)
    }
}

fn write_op(
    f: &mut fmt::Formatter<'_>,
    kind: UpdateKind,
    target: &PathExpr,
    source: &[XmlTree],
) -> fmt::Result {
    let sources =
        source.iter().map(serialize_xml_compact).collect::<Vec<_>>().join("");
    match kind {
        UpdateKind::Delete => write!(f, "delete {target}"),
        UpdateKind::Replace => write!(f, "replace {target} with {sources}"),
        UpdateKind::InsertInto => write!(f, "insert {sources} into {target}"),
        UpdateKind::InsertAsFirst => write!(f, "insert {sources} as first into {target}"),
        UpdateKind::InsertAsLast => write!(f, "insert {sources} as last into {target}"),
        UpdateKind::InsertBefore => write!(f, "insert {sources} before {target}"),
        UpdateKind::InsertAfter => write!(f, "insert {sources} after {target}"),
    }
}

// ---------------------------------------------------------------------------
// Surface syntax
// ---------------------------------------------------------------------------

/// Parses one update operation:
///
/// ```text
/// insert <frag…> (into | as first into | as last into | before | after) <xpath>
/// delete <xpath>
/// replace <xpath> with <frag…>
/// ```
pub fn parse_update(text: &str) -> Result<UpdateOp, UpdateError> {
    let text = text.trim();
    if let Some(rest) = text.strip_prefix("delete") {
        let target = parse_target(rest)?;
        return Ok(UpdateOp { kind: UpdateKind::Delete, target, source: Vec::new(), source_type: None });
    }
    if let Some(rest) = text.strip_prefix("replace") {
        let Some((target_text, source_text)) = split_keyword(rest, "with") else {
            return Err(UpdateError::Syntax("replace needs `with <fragments>`".into()));
        };
        let target = parse_target(target_text)?;
        let (source, source_type) = parse_fragments(source_text)?;
        if source.is_empty() {
            return Err(UpdateError::EmptySource("replace".into()));
        }
        return Ok(UpdateOp { kind: UpdateKind::Replace, target, source, source_type });
    }
    if let Some(rest) = text.strip_prefix("insert") {
        let (fragments_text, rest) = take_fragments(rest)?;
        let (source, source_type) = parse_fragments(&fragments_text)?;
        if source.is_empty() {
            return Err(UpdateError::EmptySource("insert".into()));
        }
        let rest = rest.trim_start();
        let (kind, target_text) = if let Some(t) = rest.strip_prefix("as first into") {
            (UpdateKind::InsertAsFirst, t)
        } else if let Some(t) = rest.strip_prefix("as last into") {
            (UpdateKind::InsertAsLast, t)
        } else if let Some(t) = rest.strip_prefix("into") {
            (UpdateKind::InsertInto, t)
        } else if let Some(t) = rest.strip_prefix("before") {
            (UpdateKind::InsertBefore, t)
        } else if let Some(t) = rest.strip_prefix("after") {
            (UpdateKind::InsertAfter, t)
        } else {
            return Err(UpdateError::Syntax(
                "expected `into`, `as first into`, `as last into`, `before` or `after`".into(),
            ));
        };
        let target = parse_target(target_text)?;
        return Ok(UpdateOp { kind, target, source, source_type });
    }
    Err(UpdateError::Syntax("expected `insert`, `delete` or `replace`".into()))
}

fn parse_target(text: &str) -> Result<PathExpr, UpdateError> {
    Ok(parse_path(text.trim(), Fragment::Downward)?)
}

/// Splits at the first standalone `word` outside brackets and quotes.
fn split_keyword<'a>(text: &'a str, word: &str) -> Option<(&'a str, &'a str)> {
    let mut depth = 0i32;
    let mut in_string = false;
    for (i, ch) in text.char_indices() {
        match ch {
            '\'' => in_string = !in_string,
            '[' | '(' if !in_string => depth += 1,
            ']' | ')' if !in_string => depth -= 1,
            c if !in_string && depth == 0 && c.is_whitespace() => {
                let rest = text[i..].trim_start();
                if let Some(after) = rest.strip_prefix(word) {
                    if after.is_empty() || after.starts_with(char::is_whitespace) {
                        return Some((&text[..i], after));
                    }
                }
            }
            _ => {}
        }
    }
    None
}

/// Consumes leading XML fragments (balanced element markup) and returns the
/// remaining text.
fn take_fragments(text: &str) -> Result<(String, &str), UpdateError> {
    let mut rest = text.trim_start();
    let mut collected = String::new();
    while rest.starts_with('<') {
        let end = element_end(rest)
            .ok_or_else(|| UpdateError::Syntax("unterminated XML fragment".into()))?;
        collected.push_str(&rest[..end]);
        rest = rest[end..].trim_start();
    }
    if collected.is_empty() {
        return Err(UpdateError::Syntax("expected at least one XML fragment".into()));
    }
    Ok((collected, rest))
}

/// Byte length of the first complete element in `text` (which starts at `<`).
fn element_end(text: &str) -> Option<usize> {
    let mut depth = 0i32;
    let mut i = 0;
    while i < text.len() {
        let rest = &text[i..];
        let open = rest.find('<')?;
        let close = rest[open..].find('>')? + open;
        let tag = &rest[open..=close];
        if tag.starts_with("</") {
            depth -= 1;
        } else if !tag.ends_with("/>") {
            depth += 1;
        }
        i += close + 1;
        if depth == 0 {
            return Some(i);
        }
    }
    None
}

/// Parses a run of XML fragments and checks they share one root type.
fn parse_fragments(text: &str) -> Result<(Vec<XmlTree>, Option<String>), UpdateError> {
    let mut fragments = Vec::new();
    let mut shared_type: Option<String> = None;
    let mut rest = text.trim();
    while !rest.is_empty() {
        if !rest.starts_with('<') {
            return Err(UpdateError::Syntax(format!(
                "unexpected content after fragments: `{rest}`"
            )));
        }
        let end = element_end(rest)
            .ok_or_else(|| UpdateError::Syntax("unterminated XML fragment".into()))?;
        let tree = parse_xml(&rest[..end])?;
        let root_type = tree.label(tree.root()).to_string();
        match &shared_type {
            None => shared_type = Some(root_type),
            Some(t) if *t != root_type => {
                return Err(UpdateError::MixedSource(t.clone(), root_type))
            }
            _ => {}
        }
        fragments.push(tree);
        rest = rest[end..].trim_start();
    }
    Ok((fragments, shared_type))
}

// ---------------------------------------------------------------------------
// Rewriting
// ---------------------------------------------------------------------------

/// The update type an operation checks at a target node labeled `label`.
fn operation_type(op: &UpdateOp, label: &str) -> UpdateType {
    match op.kind {
        UpdateKind::Delete => UpdateType::new(UpdateKind::Delete, label),
        UpdateKind::Replace => UpdateType::replace(
            label,
            op.source_type.clone().expect("replace has a source"),
        ),
        kind => UpdateType::new(kind, op.source_type.clone().expect("insert has a source")),
    }
}

/// Safety qualifier appended by [`rewrite_update`], exposed for inspection.
pub fn safety_qualifier(spec: &UpdateSpec, op: &UpdateOp) -> Qualifier {
    match op.kind {
        UpdateKind::Delete | UpdateKind::Replace => {
            // one disjunct per annotated subject type: the node has that
            // type and its parent is updatable for it; types with no
            // annotations would contribute constant-false disjuncts and
            // are dropped. One grouping pass over the annotation set keeps
            // the whole rewrite linear in its size.
            let replacement = match op.kind {
                UpdateKind::Replace => op.source_type.as_deref(),
                _ => None,
            };
            let mut subjects: Vec<&str> = Vec::new();
            let mut groups: std::collections::HashMap<&str, Vec<(&str, &crate::policy::AnnotationValue)>> =
                std::collections::HashMap::new();
            for (ty, ut, value) in spec.iter() {
                if ut.kind == op.kind && ut.replacement.as_deref() == replacement {
                    let entry = groups.entry(ut.subject.as_str()).or_default();
                    if entry.is_empty() {
                        subjects.push(ut.subject.as_str());
                    }
                    entry.push((ty, value));
                }
            }
            let disjuncts: Vec<Qualifier> = subjects
                .into_iter()
                .map(|subject| {
                    let u = crate::policy::build_updatability_from(&groups[subject]);
                    Qualifier::Path(
                        PathExpr::self_named(subject).filter(Qualifier::Path(
                            PathExpr::step(Axis::Parent, NameTest::Any).filter(u),
                        )),
                    )
                })
                .collect();
            Qualifier::any_of(disjuncts).unwrap_or_else(Qualifier::constant_false)
        }
        UpdateKind::InsertAsFirst
        | UpdateKind::InsertAsLast
        | UpdateKind::InsertBefore
        | UpdateKind::InsertAfter => {
            let b = op.source_type.as_deref().expect("insert has a source");
            build_updatability(spec, &UpdateType::new(op.kind, b))
        }
        UpdateKind::InsertInto => {
            let b = op.source_type.as_deref().expect("insert has a source");
            let u = build_updatability(spec, &UpdateType::new(UpdateKind::InsertInto, b));
            u.and(build_crp(spec, b).not())
        }
    }
}

/// Rewrites an operation into a safe one by appending the policy's safety
/// qualifier to its target. Pure; runs in time linear in the number of
/// annotations.
pub fn rewrite_update(spec: &UpdateSpec, op: &UpdateOp) -> RewrittenOp {
    let qualifier = safety_qualifier(spec, op);
    RewrittenOp {
        kind: op.kind,
        target: op.target.clone().filter(qualifier),
        source: op.source.clone(),
        source_type: op.source_type.clone(),
    }
}

// ---------------------------------------------------------------------------
// Application
// ---------------------------------------------------------------------------

/// Outcome of applying a rewritten operation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ApplyStatus {
    /// Edits applied and the document still conforms.
    Accepted,
    /// The rewritten target selected no nodes; the document is unchanged.
    AcceptedNoOp,
    /// A dynamic error: multi-node target for a single-node operation, or a
    /// target without the required parent. Document unchanged.
    DynamicError(String),
    /// The edited document no longer conformed to the schema and the
    /// update was rolled back.
    RejectedInvalid(Vec<Violation>),
}

#[derive(Debug, Clone)]
pub struct ApplyReport {
    pub status: ApplyStatus,
    /// Nodes the operation acted on (target nodes in the input tree).
    pub affected: Vec<NodeId>,
    /// Canonical paths of the affected nodes, for display.
    pub affected_paths: Vec<String>,
}

impl ApplyReport {
    pub fn accepted(&self) -> bool {
        matches!(self.status, ApplyStatus::Accepted | ApplyStatus::AcceptedNoOp)
    }
}

/// Evaluates the rewritten target at the document root and applies the
/// operation. Delete accepts any number of target nodes; the other kinds
/// require exactly one. A contained insert resolves to the last-child
/// position, fixing the otherwise implementation-defined placement. After
/// editing, the document is revalidated: on violation the original tree is
/// returned untouched with a rejected report.
pub fn apply_update(dtd: &Dtd, tree: &XmlTree, op: &RewrittenOp) -> (XmlTree, ApplyReport) {
    let targets = eval(&op.target, tree, tree.root());
    let affected_paths = |ids: &[NodeId]| ids.iter().map(|&n| tree.path(n)).collect::<Vec<_>>();

    if targets.is_empty() {
        return (
            tree.clone(),
            ApplyReport {
                status: ApplyStatus::AcceptedNoOp,
                affected: Vec::new(),
                affected_paths: Vec::new(),
            },
        );
    }
    if op.kind != UpdateKind::Delete && targets.len() > 1 {
        return (
            tree.clone(),
            ApplyReport {
                status: ApplyStatus::DynamicError(format!(
                    "{} requires a single target node, found {}",
                    op.kind.name(),
                    targets.len()
                )),
                affected: targets.clone(),
                affected_paths: affected_paths(&targets),
            },
        );
    }

    let edited = match apply_edits(tree, op, &targets) {
        Ok(t) => t,
        Err(msg) => {
            return (
                tree.clone(),
                ApplyReport {
                    status: ApplyStatus::DynamicError(msg),
                    affected: targets.clone(),
                    affected_paths: affected_paths(&targets),
                },
            )
        }
    };

    let report = validate(&edited, dtd);
    if report.conforming() {
        (
            edited,
            ApplyReport {
                status: ApplyStatus::Accepted,
                affected: targets.clone(),
                affected_paths: affected_paths(&targets),
            },
        )
    } else {
        (
            tree.clone(),
            ApplyReport {
                status: ApplyStatus::RejectedInvalid(report.violations().to_vec()),
                affected: targets.clone(),
                affected_paths: affected_paths(&targets),
            },
        )
    }
}

fn apply_edits(tree: &XmlTree, op: &RewrittenOp, targets: &[NodeId]) -> Result<XmlTree, String> {
    match op.kind {
        UpdateKind::Delete => {
            // deleting a node removes its descendants, so drop targets that
            // sit under another target
            let mut current = tree.clone();
            for &target in targets {
                let shadowed = tree
                    .ancestors(target)
                    .into_iter()
                    .any(|a| targets.contains(&a));
                if shadowed {
                    continue;
                }
                current = current
                    .mutate(&TreeEdit::DeleteSubtree(target))
                    .map_err(|e| e.to_string())?;
            }
            Ok(current)
        }
        UpdateKind::Replace => tree
            .mutate(&TreeEdit::ReplaceSubtree(targets[0], op.source.clone()))
            .map_err(|e| e.to_string()),
        UpdateKind::InsertInto | UpdateKind::InsertAsLast => tree
            .mutate(&TreeEdit::InsertChildren(targets[0], op.source.clone(), InsertPos::Last))
            .map_err(|e| e.to_string()),
        UpdateKind::InsertAsFirst => tree
            .mutate(&TreeEdit::InsertChildren(targets[0], op.source.clone(), InsertPos::First))
            .map_err(|e| e.to_string()),
        UpdateKind::InsertBefore => tree
            .mutate(&TreeEdit::InsertSiblings(targets[0], op.source.clone(), SiblingSide::Before))
            .map_err(|e| e.to_string()),
        UpdateKind::InsertAfter => tree
            .mutate(&TreeEdit::InsertSiblings(targets[0], op.source.clone(), SiblingSide::After))
            .map_err(|e| e.to_string()),
    }
}

/// The set a correctly rewritten target must select: target nodes the
/// direct oracle permits. Used by the soundness tests and exposed for
/// callers that want a second opinion.
pub fn oracle_permitted(
    spec: &UpdateSpec,
    tree: &XmlTree,
    op: &UpdateOp,
    targets: &[NodeId],
) -> Vec<NodeId> {
    use crate::policy::{oracle_conflict, oracle_updatable};
    targets
        .iter()
        .copied()
        .filter(|&n| match op.kind {
            UpdateKind::Delete | UpdateKind::Replace => match tree.parent(n) {
                Some(parent) => {
                    let ut = operation_type(op, tree.label(n));
                    oracle_updatable(spec, tree, parent, &ut)
                }
                None => false,
            },
            UpdateKind::InsertInto => {
                let b = op.source_type.as_deref().expect("insert has a source");
                oracle_updatable(spec, tree, n, &operation_type(op, tree.label(n)))
                    && !oracle_conflict(spec, tree, n, b)
            }
            _ => oracle_updatable(spec, tree, n, &operation_type(op, tree.label(n))),
        })
        .collect()
}
