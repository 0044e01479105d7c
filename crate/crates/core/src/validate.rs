//! Conformance of a tree against a schema.

use std::fmt;

use crate::dtd::{Dtd, STR_TYPE};
use crate::tree::{NodeId, XmlTree};

/// Why a node violates conformance.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ViolationKind {
    /// The root is not labeled with the schema's root type.
    RootLabel { expected: String, found: String },
    /// A node's label is neither a declared element type nor `str`.
    UnknownLabel { label: String },
    /// The word of child labels is outside the content model's language.
    ContentModel { label: String, word: Vec<String> },
    /// A text node has children.
    TextNotLeaf,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub node: NodeId,
    pub path: String,
    pub kind: ViolationKind,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.kind {
            ViolationKind::RootLabel { expected, found } => {
                write!(f, "{}: root is labeled `{found}`, expected `{expected}`", self.path)
            }
            ViolationKind::UnknownLabel { label } => {
                write!(f, "{}: unknown element type `{label}`", self.path)
            }
            ViolationKind::ContentModel { label, word } => write!(
                f,
                "{}: children [{}] do not match the content model of `{label}`",
                self.path,
                word.join(", ")
            ),
            ViolationKind::TextNotLeaf => {
                write!(f, "{}: text node is not a leaf", self.path)
            }
        }
    }
}

/// Result of validating one tree. Violations carry the offending node.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ValidationReport {
    violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn conforming(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn violations(&self) -> &[Violation] {
        &self.violations
    }
}

/// Checks the four conformance conditions: root label, declared labels,
/// content-model membership of each child word, and text nodes being
/// leaves. Violations are reported per node; nothing is an error.
pub fn validate(tree: &XmlTree, dtd: &Dtd) -> ValidationReport {
    let mut violations = Vec::new();
    let root = tree.root();
    if tree.label(root) != dtd.root() {
        violations.push(Violation {
            node: root,
            path: tree.path(root),
            kind: ViolationKind::RootLabel {
                expected: dtd.root().to_string(),
                found: tree.label(root).to_string(),
            },
        });
    }
    for node in tree.nodes_in_document_order() {
        let label = tree.label(node);
        if label == STR_TYPE {
            if !tree.children(node).is_empty() {
                violations.push(Violation {
                    node,
                    path: tree.path(node),
                    kind: ViolationKind::TextNotLeaf,
                });
            }
            continue;
        }
        if !dtd.has_type(label) {
            violations.push(Violation {
                node,
                path: tree.path(node),
                kind: ViolationKind::UnknownLabel { label: label.to_string() },
            });
            continue;
        }
        let word: Vec<&str> = tree.children(node).iter().map(|&c| tree.label(c)).collect();
        if dtd.accepts(label, &word) != Some(true) {
            violations.push(Violation {
                node,
                path: tree.path(node),
                kind: ViolationKind::ContentModel {
                    label: label.to_string(),
                    word: word.iter().map(|s| s.to_string()).collect(),
                },
            });
        }
    }
    ValidationReport { violations }
}
