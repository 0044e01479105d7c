//! Ordered labeled trees with stable node identities, plus the four edit
//! primitives used by update application.
//!
//! Nodes live in an arena; deleting a subtree tombstones its slots, so a
//! `NodeId` is never reused within one tree's lifetime and surviving nodes
//! keep their identity across edits. Text nodes are leaves labeled `str`
//! carrying a string value.

use std::fmt;

use crate::dtd::STR_TYPE;
use crate::error::XmlError;

/// Opaque, stable node identifier. Valid only for the tree that issued it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct NodeId(u32);

impl NodeId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum NodeKind {
    Element(String),
    Text(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
struct NodeData {
    kind: NodeKind,
    parent: Option<NodeId>,
    children: Vec<NodeId>,
}

/// An ordered, labeled XML tree. Element and text nodes only.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct XmlTree {
    arena: Vec<Option<NodeData>>,
    root: NodeId,
}

/// One edit primitive. Replace and sibling insertion raise a dynamic error
/// when the target is the root.
#[derive(Debug, Clone)]
pub enum TreeEdit {
    DeleteSubtree(NodeId),
    ReplaceSubtree(NodeId, Vec<XmlTree>),
    InsertChildren(NodeId, Vec<XmlTree>, InsertPos),
    InsertSiblings(NodeId, Vec<XmlTree>, SiblingSide),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InsertPos {
    First,
    Last,
    /// 0-based position among the existing children.
    Index(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SiblingSide {
    Before,
    After,
}

impl XmlTree {
    /// A tree with a single element node.
    pub fn new_element_root(label: impl Into<String>) -> XmlTree {
        XmlTree {
            arena: vec![Some(NodeData {
                kind: NodeKind::Element(label.into()),
                parent: None,
                children: Vec::new(),
            })],
            root: NodeId(0),
        }
    }

    pub fn root(&self) -> NodeId {
        self.root
    }

    fn data(&self, id: NodeId) -> Result<&NodeData, XmlError> {
        self.arena
            .get(id.index())
            .and_then(Option::as_ref)
            .ok_or(XmlError::UnknownNode(id))
    }

    fn data_mut(&mut self, id: NodeId) -> Result<&mut NodeData, XmlError> {
        self.arena
            .get_mut(id.index())
            .and_then(Option::as_mut)
            .ok_or(XmlError::UnknownNode(id))
    }

    pub fn contains(&self, id: NodeId) -> bool {
        self.arena.get(id.index()).map(Option::is_some).unwrap_or(false)
    }

    /// Label of a node: its element-type name, or `str` for text nodes.
    pub fn label(&self, id: NodeId) -> &str {
        match &self.data(id).expect("live node").kind {
            NodeKind::Element(name) => name,
            NodeKind::Text(_) => STR_TYPE,
        }
    }

    pub fn is_text(&self, id: NodeId) -> bool {
        matches!(self.data(id).expect("live node").kind, NodeKind::Text(_))
    }

    /// String value of a text node; `None` for elements.
    pub fn text(&self, id: NodeId) -> Option<&str> {
        match &self.data(id).expect("live node").kind {
            NodeKind::Text(value) => Some(value),
            NodeKind::Element(_) => None,
        }
    }

    pub fn parent(&self, id: NodeId) -> Option<NodeId> {
        self.data(id).expect("live node").parent
    }

    pub fn children(&self, id: NodeId) -> &[NodeId] {
        &self.data(id).expect("live node").children
    }

    /// Child element nodes only (text leaves skipped).
    pub fn element_children(&self, id: NodeId) -> Vec<NodeId> {
        self.children(id).iter().copied().filter(|&c| !self.is_text(c)).collect()
    }

    /// Ancestors of a node, nearest first, root last.
    pub fn ancestors(&self, id: NodeId) -> Vec<NodeId> {
        let mut out = Vec::new();
        let mut current = self.parent(id);
        while let Some(p) = current {
            out.push(p);
            current = self.parent(p);
        }
        out
    }

    /// All live nodes in document order.
    pub fn nodes_in_document_order(&self) -> Vec<NodeId> {
        let mut out = Vec::new();
        self.collect_preorder(self.root, &mut out);
        out
    }

    fn collect_preorder(&self, id: NodeId, out: &mut Vec<NodeId>) {
        out.push(id);
        for &c in self.children(id) {
            self.collect_preorder(c, out);
        }
    }

    /// Descendants of a node in document order, excluding the node itself.
    pub fn descendants(&self, id: NodeId) -> Vec<NodeId> {
        let mut out = Vec::new();
        for &c in self.children(id) {
            self.collect_preorder(c, &mut out);
        }
        out
    }

    pub fn node_count(&self) -> usize {
        self.arena.iter().filter(|slot| slot.is_some()).count()
    }

    /// Canonical path of a node: `/label[i]/label[j]/…` where the ordinal
    /// counts same-labeled preceding siblings.
    pub fn path(&self, id: NodeId) -> String {
        let mut segments = Vec::new();
        let mut current = id;
        loop {
            let label = self.label(current).to_string();
            match self.parent(current) {
                None => {
                    segments.push(format!("/{label}"));
                    break;
                }
                Some(p) => {
                    let ordinal = self
                        .children(p)
                        .iter()
                        .take_while(|&&c| c != current)
                        .filter(|&&c| self.label(c) == label)
                        .count()
                        + 1;
                    segments.push(format!("/{label}[{ordinal}]"));
                    current = p;
                }
            }
        }
        segments.reverse();
        segments.concat()
    }

    // -----------------------------------------------------------------
    // Editing
    // -----------------------------------------------------------------

    /// Applies one edit, returning the edited tree. The receiver is left
    /// untouched, so a failed edit costs nothing: the caller still holds
    /// the original.
    pub fn mutate(&self, edit: &TreeEdit) -> Result<XmlTree, XmlError> {
        let mut next = self.clone();
        next.apply_edit(edit)?;
        Ok(next)
    }

    fn apply_edit(&mut self, edit: &TreeEdit) -> Result<(), XmlError> {
        match edit {
            TreeEdit::DeleteSubtree(target) => {
                self.check_live(*target)?;
                if *target == self.root {
                    return Err(XmlError::Dynamic("cannot delete the root node".into()));
                }
                self.detach_and_tombstone(*target);
                Ok(())
            }
            TreeEdit::ReplaceSubtree(target, fragments) => {
                self.check_live(*target)?;
                let Some(parent) = self.parent(*target) else {
                    return Err(XmlError::Dynamic(
                        "replace target must have a parent node".into(),
                    ));
                };
                let position = self.child_position(parent, *target);
                self.detach_and_tombstone(*target);
                self.graft_all(parent, fragments, position)?;
                Ok(())
            }
            TreeEdit::InsertChildren(target, fragments, pos) => {
                self.check_live(*target)?;
                if self.is_text(*target) {
                    return Err(XmlError::Dynamic("cannot insert under a text node".into()));
                }
                let len = self.children(*target).len();
                let position = match pos {
                    InsertPos::First => 0,
                    InsertPos::Last => len,
                    InsertPos::Index(k) => {
                        if *k > len {
                            return Err(XmlError::Dynamic(format!(
                                "insert index {k} out of bounds (len {len})"
                            )));
                        }
                        *k
                    }
                };
                self.graft_all(*target, fragments, position)
            }
            TreeEdit::InsertSiblings(target, fragments, side) => {
                self.check_live(*target)?;
                let Some(parent) = self.parent(*target) else {
                    return Err(XmlError::Dynamic(
                        "sibling-insert target must have a parent node".into(),
                    ));
                };
                let position = self.child_position(parent, *target)
                    + match side {
                        SiblingSide::Before => 0,
                        SiblingSide::After => 1,
                    };
                self.graft_all(parent, fragments, position)
            }
        }
    }

    fn check_live(&self, id: NodeId) -> Result<(), XmlError> {
        self.data(id).map(|_| ())
    }

    fn child_position(&self, parent: NodeId, child: NodeId) -> usize {
        self.children(parent).iter().position(|&c| c == child).expect("child of parent")
    }

    fn detach_and_tombstone(&mut self, target: NodeId) {
        if let Some(parent) = self.parent(target) {
            let data = self.data_mut(parent).expect("live parent");
            data.children.retain(|&c| c != target);
        }
        let mut stack = vec![target];
        while let Some(id) = stack.pop() {
            if let Some(data) = self.arena[id.index()].take() {
                stack.extend(data.children);
            }
        }
    }

    /// Copies each fragment under `parent` starting at `position`,
    /// preserving fragment order. Fresh ids are allocated for every copied
    /// node.
    fn graft_all(
        &mut self,
        parent: NodeId,
        fragments: &[XmlTree],
        position: usize,
    ) -> Result<(), XmlError> {
        let mut inserted = Vec::with_capacity(fragments.len());
        for fragment in fragments {
            inserted.push(self.graft(parent, fragment, fragment.root)?);
        }
        let data = self.data_mut(parent)?;
        for (offset, id) in inserted.into_iter().enumerate() {
            data.children.insert(position + offset, id);
        }
        Ok(())
    }

    fn graft(
        &mut self,
        parent: NodeId,
        source: &XmlTree,
        node: NodeId,
    ) -> Result<NodeId, XmlError> {
        let kind = source.data(node)?.kind.clone();
        let fresh = NodeId(self.arena.len() as u32);
        self.arena.push(Some(NodeData { kind, parent: Some(parent), children: Vec::new() }));
        let mut children = Vec::new();
        for &c in source.children(node) {
            children.push(self.graft(fresh, source, c)?);
        }
        self.data_mut(fresh)?.children = children;
        Ok(fresh)
    }

    // -----------------------------------------------------------------
    // Building
    // -----------------------------------------------------------------

    /// Appends a fresh element child and returns its id.
    pub fn add_element(&mut self, parent: NodeId, label: impl Into<String>) -> NodeId {
        let fresh = NodeId(self.arena.len() as u32);
        self.arena.push(Some(NodeData {
            kind: NodeKind::Element(label.into()),
            parent: Some(parent),
            children: Vec::new(),
        }));
        self.data_mut(parent).expect("live parent").children.push(fresh);
        fresh
    }

    /// Appends a fresh text child and returns its id.
    pub fn add_text(&mut self, parent: NodeId, value: impl Into<String>) -> NodeId {
        let fresh = NodeId(self.arena.len() as u32);
        self.arena.push(Some(NodeData {
            kind: NodeKind::Text(value.into()),
            parent: Some(parent),
            children: Vec::new(),
        }));
        self.data_mut(parent).expect("live parent").children.push(fresh);
        fresh
    }

    /// Structural equality ignoring node identities: same labels, texts and
    /// child order.
    pub fn structurally_equal(&self, other: &XmlTree) -> bool {
        fn eq(a: &XmlTree, an: NodeId, b: &XmlTree, bn: NodeId) -> bool {
            if a.label(an) != b.label(bn) || a.text(an) != b.text(bn) {
                return false;
            }
            let ac = a.children(an);
            let bc = b.children(bn);
            ac.len() == bc.len()
                && ac.iter().zip(bc.iter()).all(|(&x, &y)| eq(a, x, b, y))
        }
        eq(self, self.root, other, other.root)
    }
}

// ---------------------------------------------------------------------------
// XML text format
// ---------------------------------------------------------------------------

/// Parses a well-formed XML document with element and text nodes only.
///
/// Attributes, comments, and processing instructions are rejected with a
/// clear error; a single leading `<?xml …?>` declaration is skipped.
/// Whitespace-only text between child elements is ignored; any other text
/// mixed with elements is an error.
pub fn parse_xml(input: &str) -> Result<XmlTree, XmlError> {
    let mut parser = XmlParser { input, pos: 0 };
    parser.skip_ws();
    parser.skip_declaration()?;
    parser.skip_ws();
    let (label, content) = parser.parse_element()?;
    parser.skip_ws();
    if parser.pos != parser.input.len() {
        return Err(parser.err("trailing content after the document element"));
    }
    let mut tree = XmlTree::new_element_root(label);
    let root = tree.root();
    attach_content(&mut tree, root, content);
    Ok(tree)
}

enum Content {
    Text(String),
    Elements(Vec<(String, Content)>),
    Empty,
}

fn attach_content(tree: &mut XmlTree, parent: NodeId, content: Content) {
    match content {
        Content::Empty => {}
        Content::Text(value) => {
            tree.add_text(parent, value);
        }
        Content::Elements(children) => {
            for (label, inner) in children {
                let id = tree.add_element(parent, label);
                attach_content(tree, id, inner);
            }
        }
    }
}

struct XmlParser<'a> {
    input: &'a str,
    pos: usize,
}

impl<'a> XmlParser<'a> {
    fn err(&self, msg: &str) -> XmlError {
        XmlError::Syntax { offset: self.pos, msg: msg.to_string() }
    }

    fn rest(&self) -> &'a str {
        &self.input[self.pos..]
    }

    fn skip_ws(&mut self) {
        let trimmed = self.rest().trim_start();
        self.pos = self.input.len() - trimmed.len();
    }

    fn skip_declaration(&mut self) -> Result<(), XmlError> {
        if self.rest().starts_with("<?xml") {
            match self.rest().find("?>") {
                Some(end) => self.pos += end + 2,
                None => return Err(self.err("unterminated XML declaration")),
            }
        }
        Ok(())
    }

    fn parse_name(&mut self) -> Result<String, XmlError> {
        let rest = self.rest();
        let end = rest
            .find(|c: char| !(c.is_ascii_alphanumeric() || c == '_' || c == '-' || c == '.'))
            .unwrap_or(rest.len());
        if end == 0 {
            return Err(self.err("expected an element name"));
        }
        let name = &rest[..end];
        self.pos += end;
        Ok(name.to_string())
    }

    fn parse_element(&mut self) -> Result<(String, Content), XmlError> {
        if !self.rest().starts_with('<') {
            return Err(self.err("expected `<`"));
        }
        if self.rest().starts_with("<!--") {
            return Err(XmlError::Comment);
        }
        if self.rest().starts_with("<?") {
            return Err(XmlError::ProcessingInstruction);
        }
        self.pos += 1;
        let name = self.parse_name()?;
        self.skip_ws();
        match self.rest().chars().next() {
            Some('/') => {
                if !self.rest().starts_with("/>") {
                    return Err(self.err("expected `/>`"));
                }
                self.pos += 2;
                Ok((name, Content::Empty))
            }
            Some('>') => {
                self.pos += 1;
                let content = self.parse_content(&name)?;
                // </name>
                if !self.rest().starts_with("</") {
                    return Err(self.err(&format!("expected `</{name}>`")));
                }
                self.pos += 2;
                let close = self.parse_name()?;
                if close != name {
                    return Err(self.err(&format!(
                        "mismatched end tag: expected `</{name}>`, found `</{close}>`"
                    )));
                }
                self.skip_ws();
                if !self.rest().starts_with('>') {
                    return Err(self.err("expected `>`"));
                }
                self.pos += 1;
                Ok((name, content))
            }
            _ => Err(XmlError::Attribute(name)),
        }
    }

    fn parse_content(&mut self, parent: &str) -> Result<Content, XmlError> {
        let mut text = String::new();
        let mut elements: Vec<(String, Content)> = Vec::new();
        loop {
            let rest = self.rest();
            if rest.starts_with("</") {
                break;
            }
            if rest.starts_with("<!--") {
                return Err(XmlError::Comment);
            }
            if rest.starts_with("<?") {
                return Err(XmlError::ProcessingInstruction);
            }
            if rest.starts_with('<') {
                elements.push(self.parse_element()?);
                continue;
            }
            if rest.is_empty() {
                return Err(self.err(&format!("unterminated element `{parent}`")));
            }
            let chunk_end = rest.find('<').unwrap_or(rest.len());
            text.push_str(&unescape(&rest[..chunk_end], self.pos)?);
            self.pos += chunk_end;
        }
        if elements.is_empty() {
            if text.is_empty() {
                Ok(Content::Empty)
            } else {
                Ok(Content::Text(text))
            }
        } else if text.trim().is_empty() {
            Ok(Content::Elements(elements))
        } else {
            Err(XmlError::MixedContent(parent.to_string()))
        }
    }
}

fn unescape(raw: &str, offset: usize) -> Result<String, XmlError> {
    let mut out = String::with_capacity(raw.len());
    let mut rest = raw;
    while let Some(idx) = rest.find('&') {
        out.push_str(&rest[..idx]);
        rest = &rest[idx..];
        let semicolon = rest.find(';').ok_or(XmlError::Syntax {
            offset,
            msg: "unterminated entity reference".into(),
        })?;
        let entity = &rest[1..semicolon];
        out.push(match entity {
            "lt" => '<',
            "gt" => '>',
            "amp" => '&',
            "apos" => '\'',
            "quot" => '"',
            other => {
                return Err(XmlError::Syntax {
                    offset,
                    msg: format!("unsupported entity `&{other};`"),
                })
            }
        });
        rest = &rest[semicolon + 1..];
    }
    out.push_str(rest);
    Ok(out)
}

fn escape(raw: &str) -> String {
    let mut out = String::with_capacity(raw.len());
    for ch in raw.chars() {
        match ch {
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '&' => out.push_str("&amp;"),
            _ => out.push(ch),
        }
    }
    out
}

/// Deterministic serialization: two-space indent, text-only elements
/// inlined, no attributes. Equal trees serialize to equal bytes.
pub fn serialize_xml(tree: &XmlTree) -> String {
    let mut out = String::new();
    write_node(tree, tree.root(), 0, &mut out);
    out
}

/// Single-line serialization, used when printing update-operation sources.
pub fn serialize_xml_compact(tree: &XmlTree) -> String {
    let mut out = String::new();
    write_node_compact(tree, tree.root(), &mut out);
    out
}

fn write_node(tree: &XmlTree, id: NodeId, depth: usize, out: &mut String) {
    let indent = "  ".repeat(depth);
    let label = tree.label(id);
    let children = tree.children(id);
    if children.is_empty() {
        out.push_str(&format!("{indent}<{label}/>\n"));
    } else if children.len() == 1 && tree.is_text(children[0]) {
        let text = escape(tree.text(children[0]).unwrap());
        out.push_str(&format!("{indent}<{label}>{text}</{label}>\n"));
    } else {
        out.push_str(&format!("{indent}<{label}>\n"));
        for &c in children {
            write_node(tree, c, depth + 1, out);
        }
        out.push_str(&format!("{indent}</{label}>\n"));
    }
}

fn write_node_compact(tree: &XmlTree, id: NodeId, out: &mut String) {
    let label = tree.label(id);
    let children = tree.children(id);
    if children.is_empty() {
        out.push_str(&format!("<{label}/>"));
    } else if children.len() == 1 && tree.is_text(children[0]) {
        let text = escape(tree.text(children[0]).unwrap());
        out.push_str(&format!("<{label}>{text}</{label}>"));
    } else {
        out.push_str(&format!("<{label}>"));
        for &c in children {
            write_node_compact(tree, c, out);
        }
        out.push_str(&format!("</{label}>"));
    }
}

impl fmt::Display for XmlTree {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&serialize_xml(self))
    }
}
