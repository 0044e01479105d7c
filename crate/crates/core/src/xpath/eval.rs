//! Set-valued evaluation of path expressions over a tree.
//!
//! The result of evaluating a path at a context node is an ordered,
//! duplicate-free node sequence: downward axes yield document order,
//! ancestor-family axes yield nearest-first order, and compositions
//! concatenate per context, keeping the first occurrence of a node.
//! Nearest-first ancestor order is what makes `ancestor-or-self::*[…][1]`
//! select the closest matching ancestor, which the compiled policy
//! predicates rely on.
//!
//! Text nodes never appear in results; they are reached only through the
//! `text()='…'` comparison.

use crate::tree::{NodeId, XmlTree};

use super::ast::{Axis, PathExpr, Qualifier};

/// Evaluates `expr` at `context`, returning reachable nodes in order.
/// An empty result is a value, not an error.
pub fn eval(expr: &PathExpr, tree: &XmlTree, context: NodeId) -> Vec<NodeId> {
    let mut out = Vec::new();
    eval_into(expr, tree, context, &mut out);
    out
}

fn push_unique(out: &mut Vec<NodeId>, id: NodeId) {
    if !out.contains(&id) {
        out.push(id);
    }
}

fn eval_into(expr: &PathExpr, tree: &XmlTree, context: NodeId, out: &mut Vec<NodeId>) {
    match expr {
        PathExpr::Step(axis, test) => {
            if tree.is_text(context) {
                return;
            }
            match axis {
                Axis::SelfAxis => {
                    if test.matches(tree.label(context)) {
                        push_unique(out, context);
                    }
                }
                Axis::Child => {
                    for c in tree.element_children(context) {
                        if test.matches(tree.label(c)) {
                            push_unique(out, c);
                        }
                    }
                }
                Axis::Descendant => {
                    for d in tree.descendants(context) {
                        if !tree.is_text(d) && test.matches(tree.label(d)) {
                            push_unique(out, d);
                        }
                    }
                }
                Axis::DescendantOrSelf => {
                    if test.matches(tree.label(context)) {
                        push_unique(out, context);
                    }
                    for d in tree.descendants(context) {
                        if !tree.is_text(d) && test.matches(tree.label(d)) {
                            push_unique(out, d);
                        }
                    }
                }
                Axis::Parent => {
                    if let Some(p) = tree.parent(context) {
                        if test.matches(tree.label(p)) {
                            push_unique(out, p);
                        }
                    }
                }
                Axis::Ancestor => {
                    for a in tree.ancestors(context) {
                        if test.matches(tree.label(a)) {
                            push_unique(out, a);
                        }
                    }
                }
                Axis::AncestorOrSelf => {
                    if test.matches(tree.label(context)) {
                        push_unique(out, context);
                    }
                    for a in tree.ancestors(context) {
                        if test.matches(tree.label(a)) {
                            push_unique(out, a);
                        }
                    }
                }
            }
        }
        PathExpr::Filter(inner, q) => {
            for id in eval(inner, tree, context) {
                if eval_qualifier(q, tree, id) {
                    push_unique(out, id);
                }
            }
        }
        PathExpr::Position(inner, n) => {
            let result = eval(inner, tree, context);
            if let Some(&id) = result.get(n - 1) {
                push_unique(out, id);
            }
        }
        PathExpr::Slash(a, b) => {
            for ctx in eval(a, tree, context) {
                for id in eval(b, tree, ctx) {
                    push_unique(out, id);
                }
            }
        }
        PathExpr::Union(a, b) => {
            for id in eval(a, tree, context) {
                push_unique(out, id);
            }
            for id in eval(b, tree, context) {
                push_unique(out, id);
            }
        }
    }
}

/// Validity of a qualifier at a context node.
pub fn eval_qualifier(q: &Qualifier, tree: &XmlTree, context: NodeId) -> bool {
    match q {
        Qualifier::Path(p) => !eval(p, tree, context).is_empty(),
        Qualifier::TextEquals(p, value) => eval(p, tree, context).into_iter().any(|id| {
            tree.children(id)
                .iter()
                .any(|&c| tree.text(c).map(|t| t == value).unwrap_or(false))
        }),
        Qualifier::And(a, b) => {
            eval_qualifier(a, tree, context) && eval_qualifier(b, tree, context)
        }
        Qualifier::Or(a, b) => {
            eval_qualifier(a, tree, context) || eval_qualifier(b, tree, context)
        }
        Qualifier::Not(inner) => !eval_qualifier(inner, tree, context),
        Qualifier::NodeEquals(p, test) => {
            // Both sides must select exactly the same single node; the right
            // side `self::lab` selects the context when its label matches.
            if tree.is_text(context) || !test.matches(tree.label(context)) {
                return false;
            }
            let result = eval(p, tree, context);
            result.len() == 1 && result[0] == context
        }
    }
}
