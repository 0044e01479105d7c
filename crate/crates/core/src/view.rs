//! Read-access control: access specifications, virtual views, query
//! rewriting from the view to the original document, and the two-step
//! secure-update pipeline.
//!
//! An access specification annotates (parent type, child type) pairs with
//! the same five values used for update rights. The root is axiomatically
//! accessible; an unannotated child inherits its parent's accessibility;
//! annotated children override it, except below an invalid downward-closed
//! annotation, where nothing is accessible. Conditional values are
//! evaluated at the child node.
//!
//! The virtual view of a document keeps exactly the accessible nodes, each
//! reattached under its nearest accessible ancestor. Queries a user writes
//! against the view are rewritten into expressions over the original
//! document; updates over the view are rewritten first for read rights,
//! then for update rights, so a denied read can never be probed through an
//! update.
//!
//! Access files are UTF-8 lines
//!
//! ```text
//! access hospital/dept = [child::dname/text()='cardiology']h
//! access dept/clinical = Nh
//! access patients/patient = [child::categ/text()='A']
//! ```

use std::collections::BTreeMap;
use std::sync::Arc;

use indexmap::IndexMap;

use crate::dtd::{ContentModel, Dtd};
use crate::error::{PolicyError, RewriteQueryError};
use crate::policy::{parse_annotation_value, AnnotationValue, UpdateSpec};
use crate::rewrite::{safety_qualifier, RewrittenOp, UpdateOp};
use crate::tree::{NodeId, XmlTree};
use crate::xpath::{Axis, Fragment, NameTest, PathExpr, Qualifier};

/// A read-access specification: a schema plus a partial map from
/// (parent type, child type) to annotation values, in declaration order.
#[derive(Debug, Clone)]
pub struct AccessSpec {
    dtd: Arc<Dtd>,
    ann: IndexMap<(String, String), AnnotationValue>,
}

impl AccessSpec {
    pub fn empty(dtd: Arc<Dtd>) -> AccessSpec {
        AccessSpec { dtd, ann: IndexMap::new() }
    }

    pub fn dtd(&self) -> &Arc<Dtd> {
        &self.dtd
    }

    /// Adds one annotation. The child type must occur in the parent's
    /// content model; qualifiers stay in the downward fragment.
    pub fn annotate(
        &mut self,
        parent: impl Into<String>,
        child: impl Into<String>,
        value: AnnotationValue,
    ) -> Result<(), PolicyError> {
        let parent = parent.into();
        let child = child.into();
        if !self.dtd.has_type(&parent) {
            return Err(PolicyError::UnknownType(parent));
        }
        if !self.dtd.has_type(&child) {
            return Err(PolicyError::UnknownType(child));
        }
        if !self.dtd.child_types(&parent).contains(&child) {
            return Err(PolicyError::NotAChildType { parent, child });
        }
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
        let key = (parent, child);
        if self.ann.contains_key(&key) {
            return Err(PolicyError::DuplicateKey(key.0, key.1));
        }
        self.ann.insert(key, value);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.ann.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ann.is_empty()
    }

    pub fn get(&self, parent: &str, child: &str) -> Option<&AnnotationValue> {
        self.ann.get(&(parent.to_string(), child.to_string()))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &str, &AnnotationValue)> {
        self.ann.iter().map(|((p, c), v)| (p.as_str(), c.as_str(), v))
    }
}

/// Parses `access <ParentType>/<ChildType> = <value>` lines.
pub fn parse_access(text: &str, dtd: Arc<Dtd>) -> Result<AccessSpec, PolicyError> {
    let mut spec = AccessSpec::empty(dtd);
    for (idx, raw_line) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = strip_comment(raw_line).trim();
        if line.is_empty() {
            continue;
        }
        let Some(rest) = line.strip_prefix("access ") else {
            return Err(PolicyError::Syntax {
                line: line_no,
                msg: format!("expected `access …`, found `{line}`"),
            });
        };
        let Some((pair_text, value_text)) = split_top_level_eq(rest) else {
            return Err(PolicyError::Syntax { line: line_no, msg: "expected `=`".into() });
        };
        let pair_text = pair_text.trim();
        let Some((parent, child)) = pair_text.split_once('/') else {
            return Err(PolicyError::Syntax {
                line: line_no,
                msg: format!("expected `<Parent>/<Child>`, found `{pair_text}`"),
            });
        };
        let value = parse_annotation_value(value_text.trim(), line_no)?;
        spec.annotate(parent.trim(), child.trim(), value)?;
    }
    Ok(spec)
}

fn strip_comment(line: &str) -> &str {
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

// ---------------------------------------------------------------------------
// Accessibility: recursive oracle and compiled predicate
// ---------------------------------------------------------------------------

/// Direct recursive accessibility: the root is accessible; a node inherits
/// its parent's accessibility when its (parent type, own type) pair is
/// unannotated, else takes the annotation's validity at the node itself;
/// below an invalid downward-closed annotation nothing is accessible.
pub fn oracle_accessible(spec: &AccessSpec, tree: &XmlTree, n: NodeId) -> bool {
    let mut chain = tree.ancestors(n);
    chain.reverse(); // root first
    chain.push(n);
    let mut accessible = true;
    let mut blocked = false;
    for window in chain.windows(2) {
        let (parent, node) = (window[0], window[1]);
        if blocked {
            return false;
        }
        let value = if tree.is_text(node) {
            None
        } else {
            spec.get(tree.label(parent), tree.label(node))
        };
        if let Some(v) = value {
            accessible = v.valid_at(tree, node);
            if v.is_downward_closed() && !accessible {
                blocked = true;
            }
        }
        // unannotated pairs inherit, so `accessible` carries over
    }
    accessible
}

fn pair_self_test(parent: &str, child: &str, extra: Option<&Qualifier>) -> Qualifier {
    // self::child[parent::parent], optionally with the annotation qualifier
    let mut path = PathExpr::self_named(child).filter(Qualifier::Path(PathExpr::step(
        Axis::Parent,
        NameTest::Name(parent.into()),
    )));
    if let Some(q) = extra {
        path = path.filter(q.clone());
    }
    Qualifier::Path(path)
}

/// Compiled accessibility predicate: a node is accessible iff this
/// qualifier holds at it. Mirrors the updatability construction, keyed on
/// (parent type, child type) pairs, with one twist: a node with no
/// annotated pair anywhere in its ancestor-or-self chain inherits the
/// root's accessibility and passes. Constant-true when the specification
/// is empty.
pub fn build_accessibility(spec: &AccessSpec) -> Qualifier {
    if spec.is_empty() {
        return Qualifier::constant_true();
    }
    let concerned = Qualifier::any_of(
        spec.iter().map(|(p, c, _)| pair_self_test(p, c, None)).collect(),
    )
    .expect("nonempty");

    let mut valid = Vec::new();
    for (p, c, v) in spec.iter() {
        if matches!(v, AnnotationValue::Yes) {
            valid.push(pair_self_test(p, c, None));
        }
    }
    for (p, c, v) in spec.iter() {
        if let Some(q) = v.qualifier() {
            valid.push(pair_self_test(p, c, Some(q)));
        }
    }
    let valid = Qualifier::any_of(valid).unwrap_or_else(Qualifier::constant_false);

    let search = PathExpr::step(Axis::AncestorOrSelf, NameTest::Any).filter(concerned);
    let unconcerned = Qualifier::Path(search.clone()).not();
    let nearest_valid = Qualifier::Path(search.position(1).filter(valid));
    let a1 = unconcerned.or(nearest_valid);

    let mut closed = Vec::new();
    for (p, c, v) in spec.iter() {
        let pair_hit = || {
            PathExpr::step(Axis::Ancestor, NameTest::Name(c.to_string())).filter(
                Qualifier::Path(PathExpr::step(Axis::Parent, NameTest::Name(p.to_string()))),
            )
        };
        match v {
            AnnotationValue::NoClosed => closed.push(Qualifier::Path(pair_hit()).not()),
            AnnotationValue::CondClosed(q) => {
                closed.push(Qualifier::Path(pair_hit().filter(q.clone().not())).not())
            }
            _ => {}
        }
    }
    match Qualifier::all_of(closed) {
        Some(a2) => a1.and(a2),
        None => a1,
    }
}

/// `ancestor::*[accessible]`: all accessible ancestors, nearest first, so
/// position 1 selects the node's view parent.
pub fn accessible_ancestors(spec: &AccessSpec) -> PathExpr {
    PathExpr::step(Axis::Ancestor, NameTest::Any).filter(build_accessibility(spec))
}

// ---------------------------------------------------------------------------
// Security view and materialization
// ---------------------------------------------------------------------------

/// A security view: the schema of visible data plus the access
/// specification that induces it.
#[derive(Debug, Clone)]
pub struct SecurityView {
    dtd_view: Arc<Dtd>,
    spec: AccessSpec,
}

impl SecurityView {
    /// Derives the view schema from an access specification.
    ///
    /// Element types whose every occurrence is unconditionally hidden
    /// (each (parent, type) edge annotated deny or closed-deny) are
    /// dropped; remaining content models are widened to `(visible
    /// reachable types)*`, since hiding can splice arbitrary visible
    /// descendants into a parent's child list. Widening can accept more
    /// than the exact view language, never less, so materialized views
    /// always conform.
    pub fn derive(spec: AccessSpec) -> SecurityView {
        let dtd = spec.dtd().clone();
        let root = dtd.root().to_string();
        let mut hidden: Vec<String> = Vec::new();
        for ty in dtd.element_types() {
            if ty == root {
                continue;
            }
            let parents: Vec<&str> = dtd
                .element_types()
                .filter(|p| dtd.child_types(p).contains(ty))
                .collect();
            if parents.is_empty() {
                continue;
            }
            let all_denied = parents.iter().all(|p| {
                matches!(
                    spec.get(p, ty),
                    Some(AnnotationValue::No) | Some(AnnotationValue::NoClosed)
                )
            });
            if all_denied {
                hidden.push(ty.to_string());
            }
        }
        let visible = |ty: &str| !hidden.iter().any(|h| h == ty);

        let mut kept: Vec<String> = vec![root.clone()];
        for ty in dtd.element_types() {
            if visible(ty) && !kept.iter().any(|k| k == ty) {
                kept.push(ty.to_string());
            }
        }

        let mut productions = Vec::new();
        for ty in &kept {
            let original = dtd.content_model(ty).expect("declared type");
            let model = if *original == ContentModel::Str {
                ContentModel::Str
            } else {
                let mut child_types: Vec<String> = dtd
                    .reachable_from(ty)
                    .into_iter()
                    .filter(|t| kept.contains(t))
                    .collect();
                child_types.sort();
                let mut alts: Vec<ContentModel> =
                    child_types.into_iter().map(ContentModel::Name).collect();
                if model_mentions_str(original) {
                    alts.push(ContentModel::Str);
                }
                match alts
                    .into_iter()
                    .reduce(|a, b| ContentModel::Alt(Box::new(a), Box::new(b)))
                {
                    Some(alt) => ContentModel::Star(Box::new(alt)),
                    None => ContentModel::Epsilon,
                }
            };
            productions.push((ty.clone(), model));
        }
        let dtd_view =
            Arc::new(Dtd::new(root, productions).expect("derived schema is well formed"));
        SecurityView { dtd_view, spec }
    }

    pub fn dtd_view(&self) -> &Arc<Dtd> {
        &self.dtd_view
    }

    pub fn spec(&self) -> &AccessSpec {
        &self.spec
    }

    pub fn is_visible_type(&self, ty: &str) -> bool {
        self.dtd_view.has_type(ty)
    }
}

fn model_mentions_str(model: &ContentModel) -> bool {
    match model {
        ContentModel::Str => true,
        ContentModel::Epsilon | ContentModel::Name(_) => false,
        ContentModel::Seq(a, b) | ContentModel::Alt(a, b) => {
            model_mentions_str(a) || model_mentions_str(b)
        }
        ContentModel::Star(a) => model_mentions_str(a),
    }
}

/// Correspondence between a document and its materialized view.
#[derive(Debug, Clone)]
pub struct ViewMapping {
    accessible: Vec<NodeId>,
    /// Nearest accessible strict ancestor of each accessible non-root node
    /// (original ids on both sides).
    view_parent: BTreeMap<NodeId, NodeId>,
    view_to_orig: BTreeMap<NodeId, NodeId>,
    orig_to_view: BTreeMap<NodeId, NodeId>,
}

impl ViewMapping {
    /// Accessible nodes of the original document, in document order.
    pub fn accessible(&self) -> &[NodeId] {
        &self.accessible
    }

    pub fn is_accessible(&self, original: NodeId) -> bool {
        self.orig_to_view.contains_key(&original)
    }

    /// Nearest accessible strict ancestor (original ids).
    pub fn view_parent(&self, original: NodeId) -> Option<NodeId> {
        self.view_parent.get(&original).copied()
    }

    pub fn to_original(&self, view_node: NodeId) -> Option<NodeId> {
        self.view_to_orig.get(&view_node).copied()
    }

    pub fn to_view(&self, original: NodeId) -> Option<NodeId> {
        self.orig_to_view.get(&original).copied()
    }
}

/// Materializes the virtual view: exactly the accessible nodes, each
/// reattached under its nearest accessible ancestor, preserving relative
/// document order.
pub fn extract_view(spec: &AccessSpec, tree: &XmlTree) -> (XmlTree, ViewMapping) {
    let root = tree.root();
    let mut view = XmlTree::new_element_root(tree.label(root));
    let mut mapping = ViewMapping {
        accessible: vec![root],
        view_parent: BTreeMap::new(),
        view_to_orig: BTreeMap::new(),
        orig_to_view: BTreeMap::new(),
    };
    let view_root = view.root();
    mapping.view_to_orig.insert(view_root, root);
    mapping.orig_to_view.insert(root, view_root);
    walk_view(spec, tree, &mut view, &mut mapping, root, true, false, root, view_root);
    (view, mapping)
}

#[allow(clippy::too_many_arguments)]
fn walk_view(
    spec: &AccessSpec,
    tree: &XmlTree,
    view: &mut XmlTree,
    mapping: &mut ViewMapping,
    node: NodeId,
    parent_accessible: bool,
    blocked: bool,
    anchor_orig: NodeId,
    anchor_view: NodeId,
) {
    for &child in tree.children(node) {
        let value = if tree.is_text(child) {
            None
        } else {
            spec.get(tree.label(node), tree.label(child))
        };
        let accessible = if blocked {
            false
        } else {
            match value {
                None => parent_accessible,
                Some(v) => v.valid_at(tree, child),
            }
        };
        let child_blocked = blocked
            || value
                .map(|v| v.is_downward_closed() && !v.valid_at(tree, child))
                .unwrap_or(false);
        if accessible {
            let view_id = if tree.is_text(child) {
                view.add_text(anchor_view, tree.text(child).unwrap())
            } else {
                view.add_element(anchor_view, tree.label(child))
            };
            mapping.accessible.push(child);
            mapping.view_parent.insert(child, anchor_orig);
            mapping.view_to_orig.insert(view_id, child);
            mapping.orig_to_view.insert(child, view_id);
            walk_view(spec, tree, view, mapping, child, true, child_blocked, child, view_id);
        } else {
            walk_view(
                spec,
                tree,
                view,
                mapping,
                child,
                false,
                child_blocked,
                anchor_orig,
                anchor_view,
            );
        }
    }
}

// ---------------------------------------------------------------------------
// Query rewriting: view → original document
// ---------------------------------------------------------------------------

/// Rewrites a downward query formulated against the view schema into an
/// equivalent expression over the original document, evaluated at the
/// document root.
///
/// The spine is rewritten bottom-up: the final step becomes a
/// descendant-or-self search guarded by the accessibility predicate, and
/// each earlier step becomes a condition on the candidate's
/// accessible-ancestor chain. A view child step on the spine pins the
/// candidate's nearest accessible ancestor, a deterministic node, and is
/// exact. Inside qualifiers a child step is existential; it is encoded as
/// a direct accessible child, or else a skipping descendant anchored to
/// the context through the single-node comparison. That comparison
/// collapses the candidate set, so when several skipping candidates
/// reattach to different nodes the qualifier can under-report; the
/// equivalence tests verify this is the only divergence.
pub fn rewrite_query(view: &SecurityView, query: &PathExpr) -> Result<PathExpr, RewriteQueryError> {
    check_view_labels_path(view, query)?;
    let rewriter = Rewriter { access: build_accessibility(view.spec()), view };
    rewriter.rewrite_root(query)
}

struct Rewriter<'v> {
    view: &'v SecurityView,
    access: Qualifier,
}

#[derive(Debug, Clone)]
struct ChainStep {
    axis: Axis,
    test: NameTest,
    quals: Vec<Qualifier>,
}

/// Constraints contributed by leading self steps; they pin the chain's
/// start node (the evaluation context).
#[derive(Debug, Clone, Default)]
struct LeadConstraint {
    test: Option<String>,
    dead: bool,
    quals: Vec<Qualifier>,
}

impl LeadConstraint {
    fn merge_test(&mut self, test: &NameTest) {
        if let NameTest::Name(name) = test {
            match &self.test {
                None => self.test = Some(name.clone()),
                Some(existing) if existing != name => self.dead = true,
                _ => {}
            }
        }
    }

    fn is_trivial(&self) -> bool {
        !self.dead && self.test.is_none() && self.quals.is_empty()
    }
}

impl Rewriter<'_> {
    fn acc(&self) -> Qualifier {
        self.access.clone()
    }

    /// `ancestor::*[accessible][1]`: the view parent of the context.
    fn view_parent_path(&self) -> PathExpr {
        PathExpr::step(Axis::Ancestor, NameTest::Any).filter(self.acc()).position(1)
    }

    fn rewrite_root(&self, query: &PathExpr) -> Result<PathExpr, RewriteQueryError> {
        let chains = flatten(query)?;
        let mut rewritten = Vec::new();
        for chain in chains {
            if let Some(expr) = self.rewrite_chain(&chain)? {
                rewritten.push(expr);
            }
        }
        Ok(match rewritten.into_iter().reduce(|a, b| a.union(b)) {
            Some(expr) => expr,
            None => PathExpr::self_any().filter(Qualifier::constant_false()),
        })
    }

    /// One chain, evaluated at the document root. `None` for chains that
    /// cannot match (contradictory self steps).
    fn rewrite_chain(&self, raw: &[ChainStep]) -> Result<Option<PathExpr>, RewriteQueryError> {
        let (lead, steps) = fold_self_steps(raw);
        if lead.dead {
            return Ok(None);
        }
        if steps.is_empty() {
            // root-only query, e.g. `self::hospital`
            let root_label = self.view.dtd_view().root().to_string();
            let test = match &lead.test {
                Some(name) => NameTest::Name(name.clone()),
                None => NameTest::Any,
            };
            let mut expr = PathExpr::step(Axis::SelfAxis, test).filter(self.acc());
            for q in &lead.quals {
                expr = expr.filter(self.rewrite_qualifier(q, &NameTest::Name(root_label.clone()))?);
            }
            return Ok(Some(expr));
        }
        let (last, prefix) = steps.split_last().expect("nonempty");
        let mut expr =
            PathExpr::step(Axis::DescendantOrSelf, last.test.clone()).filter(self.acc());
        for q in &last.view_quals {
            expr = expr.filter(self.rewrite_qualifier(q, &last.test)?);
        }
        if let Some(up) = self.up_condition(prefix, last.axis, &lead)? {
            expr = expr.filter(up);
        }
        Ok(Some(expr))
    }

    /// Condition at a candidate node asserting that its accessible-ancestor
    /// chain realizes the chain prefix; `rel` is how the candidate relates
    /// in the view to the previous step's node.
    fn up_condition(
        &self,
        prefix: &[RewStep],
        rel: Axis,
        lead: &LeadConstraint,
    ) -> Result<Option<Qualifier>, RewriteQueryError> {
        let Some((step, rest)) = prefix.split_last() else {
            return self.root_condition(rel, lead);
        };
        match rel {
            Axis::Child => {
                // the view parent must realize the previous step
                let mut parent = self.view_parent_path();
                if let NameTest::Name(name) = &step.test {
                    parent = parent.filter(Qualifier::Path(PathExpr::self_named(name)));
                }
                for q in &step.view_quals {
                    parent = parent.filter(self.rewrite_qualifier(q, &step.test)?);
                }
                if let Some(up) = self.up_condition(rest, step.axis, lead)? {
                    parent = parent.filter(up);
                }
                Ok(Some(Qualifier::Path(parent)))
            }
            Axis::Descendant | Axis::DescendantOrSelf => {
                // some accessible (proper) ancestor realizes the previous step
                let axis =
                    if rel == Axis::Descendant { Axis::Ancestor } else { Axis::AncestorOrSelf };
                let mut ancestor = PathExpr::step(axis, step.test.clone()).filter(self.acc());
                for q in &step.view_quals {
                    ancestor = ancestor.filter(self.rewrite_qualifier(q, &step.test)?);
                }
                if let Some(up) = self.up_condition(rest, step.axis, lead)? {
                    ancestor = ancestor.filter(up);
                }
                Ok(Some(Qualifier::Path(ancestor)))
            }
            other => Err(RewriteQueryError::Unsupported(format!(
                "axis `{}` in a view query",
                other.name()
            ))),
        }
    }

    /// Base of the upward chain: the first step relates directly to the
    /// document root.
    fn root_condition(
        &self,
        rel: Axis,
        lead: &LeadConstraint,
    ) -> Result<Option<Qualifier>, RewriteQueryError> {
        let root_label = self.view.dtd_view().root().to_string();
        if let Some(test) = &lead.test {
            if *test != root_label {
                return Ok(Some(Qualifier::constant_false()));
            }
        }
        let lead_quals: Vec<Qualifier> = lead
            .quals
            .iter()
            .map(|q| self.rewrite_qualifier(q, &NameTest::Name(root_label.clone())))
            .collect::<Result<_, _>>()?;
        match rel {
            Axis::Child => {
                // view parent is the root itself
                let mut parent = self.view_parent_path().filter(no_parent());
                for q in lead_quals {
                    parent = parent.filter(q);
                }
                Ok(Some(Qualifier::Path(parent)))
            }
            Axis::Descendant => {
                // any non-root node has the root among its proper ancestors
                let mut ancestor =
                    PathExpr::step(Axis::Ancestor, NameTest::Name(root_label));
                if !lead.is_trivial() {
                    ancestor = ancestor.filter(no_parent());
                    for q in lead_quals {
                        ancestor = ancestor.filter(q);
                    }
                }
                Ok(Some(Qualifier::Path(ancestor)))
            }
            Axis::DescendantOrSelf => {
                if lead.is_trivial() {
                    return Ok(None); // every accessible node qualifies
                }
                let mut root_node =
                    PathExpr::step(Axis::AncestorOrSelf, NameTest::Name(root_label))
                        .filter(no_parent());
                for q in lead_quals {
                    root_node = root_node.filter(q);
                }
                Ok(Some(Qualifier::Path(root_node)))
            }
            other => Err(RewriteQueryError::Unsupported(format!(
                "axis `{}` in a view query",
                other.name()
            ))),
        }
    }

    /// Rewrites a view qualifier evaluated at a node whose label is
    /// statically `ctx`.
    fn rewrite_qualifier(
        &self,
        q: &Qualifier,
        ctx: &NameTest,
    ) -> Result<Qualifier, RewriteQueryError> {
        match q {
            Qualifier::And(a, b) => {
                Ok(self.rewrite_qualifier(a, ctx)?.and(self.rewrite_qualifier(b, ctx)?))
            }
            Qualifier::Or(a, b) => {
                Ok(self.rewrite_qualifier(a, ctx)?.or(self.rewrite_qualifier(b, ctx)?))
            }
            Qualifier::Not(inner) => Ok(self.rewrite_qualifier(inner, ctx)?.not()),
            Qualifier::Path(p) => self.rewrite_qualifier_path(p, ctx, None),
            Qualifier::TextEquals(p, value) => {
                // anchor the text test on the final step's node
                let terminal = Qualifier::TextEquals(PathExpr::self_any(), value.clone());
                self.rewrite_qualifier_path(p, ctx, Some(terminal))
            }
            Qualifier::NodeEquals(..) => Err(RewriteQueryError::Unsupported(
                "node comparison in a view query".into(),
            )),
        }
    }

    /// Existential rewriting of a qualifier path: true iff some view node
    /// is reachable. `terminal` is an extra condition on the final node,
    /// already in original-document form.
    fn rewrite_qualifier_path(
        &self,
        p: &PathExpr,
        ctx: &NameTest,
        terminal: Option<Qualifier>,
    ) -> Result<Qualifier, RewriteQueryError> {
        let chains = flatten(p)?;
        let mut disjuncts = Vec::new();
        for chain in chains {
            let (lead, mut steps) = fold_self_steps(&chain);
            if lead.dead {
                continue;
            }
            // leading self constraints apply to the context node itself
            let mut conjuncts: Vec<Qualifier> = Vec::new();
            let mut ctx_here = ctx.clone();
            if let Some(name) = &lead.test {
                match ctx {
                    NameTest::Name(c) if c != name => continue, // cannot match
                    NameTest::Name(_) => {}
                    NameTest::Any => {
                        conjuncts.push(Qualifier::Path(PathExpr::self_named(name)));
                        ctx_here = NameTest::Name(name.clone());
                    }
                }
            }
            for q in &lead.quals {
                conjuncts.push(self.rewrite_qualifier(q, &ctx_here)?);
            }
            if steps.is_empty() {
                if let Some(t) = &terminal {
                    conjuncts.push(t.clone());
                }
                disjuncts.push(
                    Qualifier::all_of(conjuncts).unwrap_or_else(Qualifier::constant_true),
                );
                continue;
            }
            if let Some(t) = &terminal {
                steps.last_mut().expect("nonempty").raw_quals.push(t.clone());
            }
            conjuncts.push(self.rewrite_step_chain(&steps, &ctx_here)?);
            disjuncts.push(Qualifier::all_of(conjuncts).expect("nonempty"));
        }
        Ok(Qualifier::any_of(disjuncts).unwrap_or_else(Qualifier::constant_false))
    }

    /// Nested single-step reduction: `S₁/S₂/…` holds iff some node matches
    /// `S₁` whose own qualifiers assert the rest.
    fn rewrite_step_chain(
        &self,
        steps: &[RewStep],
        ctx: &NameTest,
    ) -> Result<Qualifier, RewriteQueryError> {
        let (first, rest) = steps.split_first().expect("nonempty");
        let mut quals: Vec<Qualifier> = Vec::new();
        for q in &first.view_quals {
            quals.push(self.rewrite_qualifier(q, &first.test)?);
        }
        quals.extend(first.raw_quals.iter().cloned());
        if !rest.is_empty() {
            quals.push(self.rewrite_step_chain(rest, &first.test)?);
        }
        match first.axis {
            Axis::Descendant | Axis::DescendantOrSelf => {
                let mut path = PathExpr::step(first.axis, first.test.clone()).filter(self.acc());
                for q in quals {
                    path = path.filter(q);
                }
                Ok(Qualifier::Path(path))
            }
            Axis::Child => {
                // direct accessible child: exact
                let mut direct =
                    PathExpr::step(Axis::Child, first.test.clone()).filter(self.acc());
                for q in &quals {
                    direct = direct.filter(q.clone());
                }
                // skipping candidate: inaccessible parent, reattached here
                let mut skipping =
                    PathExpr::step(Axis::Descendant, first.test.clone()).filter(self.acc());
                for q in &quals {
                    skipping = skipping.filter(q.clone());
                }
                skipping = skipping.filter(Qualifier::Path(
                    PathExpr::step(Axis::Parent, NameTest::Any).filter(self.acc().not()),
                ));
                if let NameTest::Name(c) = ctx {
                    skipping = skipping.filter(Qualifier::Path(
                        self.view_parent_path().filter(Qualifier::Path(PathExpr::self_named(c))),
                    ));
                }
                let anchored =
                    Qualifier::NodeEquals(skipping.slash(self.view_parent_path()), ctx.clone());
                Ok(Qualifier::Path(direct).or(anchored))
            }
            other => Err(RewriteQueryError::Unsupported(format!(
                "axis `{}` in a view qualifier",
                other.name()
            ))),
        }
    }
}

fn no_parent() -> Qualifier {
    Qualifier::Path(PathExpr::step(Axis::Parent, NameTest::Any)).not()
}

/// A chain step after self-step folding: view qualifiers still to be
/// rewritten, plus raw qualifiers already in original-document form.
#[derive(Debug, Clone)]
struct RewStep {
    axis: Axis,
    test: NameTest,
    view_quals: Vec<Qualifier>,
    raw_quals: Vec<Qualifier>,
}

/// Splits a downward path into union-free chains of steps, pushing filters
/// onto the step they follow.
fn flatten(p: &PathExpr) -> Result<Vec<Vec<ChainStep>>, RewriteQueryError> {
    match p {
        PathExpr::Step(axis, test) => {
            if !axis.is_downward() {
                return Err(RewriteQueryError::Unsupported(format!(
                    "axis `{}` in a view query",
                    axis.name()
                )));
            }
            Ok(vec![vec![ChainStep { axis: *axis, test: test.clone(), quals: Vec::new() }]])
        }
        PathExpr::Filter(inner, q) => {
            let mut chains = flatten(inner)?;
            for chain in &mut chains {
                chain.last_mut().expect("chains are nonempty").quals.push((**q).clone());
            }
            Ok(chains)
        }
        PathExpr::Slash(a, b) => {
            let left = flatten(a)?;
            let right = flatten(b)?;
            let mut out = Vec::new();
            for l in &left {
                for r in &right {
                    let mut chain = l.clone();
                    chain.extend(r.iter().cloned());
                    out.push(chain);
                }
            }
            Ok(out)
        }
        PathExpr::Union(a, b) => {
            let mut out = flatten(a)?;
            out.extend(flatten(b)?);
            Ok(out)
        }
        PathExpr::Position(..) => {
            Err(RewriteQueryError::Unsupported("position predicate in a view query".into()))
        }
    }
}

/// Folds self steps into the chain: leading ones constrain the context,
/// later ones become label tests and qualifiers on the preceding step.
fn fold_self_steps(chain: &[ChainStep]) -> (LeadConstraint, Vec<RewStep>) {
    let mut lead = LeadConstraint::default();
    let mut steps: Vec<RewStep> = Vec::new();
    for step in chain {
        if step.axis == Axis::SelfAxis {
            match steps.last_mut() {
                None => {
                    lead.merge_test(&step.test);
                    lead.quals.extend(step.quals.iter().cloned());
                }
                Some(last) => {
                    if let NameTest::Name(name) = &step.test {
                        match &last.test {
                            NameTest::Any => {
                                last.view_quals
                                    .push(Qualifier::Path(PathExpr::self_named(name)));
                            }
                            NameTest::Name(existing) if existing != name => {
                                last.view_quals.push(Qualifier::constant_false());
                            }
                            _ => {}
                        }
                    }
                    last.view_quals.extend(step.quals.iter().cloned());
                }
            }
        } else {
            steps.push(RewStep {
                axis: step.axis,
                test: step.test.clone(),
                view_quals: step.quals.clone(),
                raw_quals: Vec::new(),
            });
        }
    }
    (lead, steps)
}

fn check_view_labels_path(view: &SecurityView, p: &PathExpr) -> Result<(), RewriteQueryError> {
    let mut labels = Vec::new();
    collect_path_labels(p, &mut labels);
    for label in labels {
        if !view.is_visible_type(&label) {
            return Err(RewriteQueryError::InvisibleType(label));
        }
    }
    Ok(())
}

fn collect_path_labels(p: &PathExpr, out: &mut Vec<String>) {
    match p {
        PathExpr::Step(_, NameTest::Name(n)) => out.push(n.clone()),
        PathExpr::Step(_, NameTest::Any) => {}
        PathExpr::Filter(inner, q) => {
            collect_path_labels(inner, out);
            collect_qualifier_labels(q, out);
        }
        PathExpr::Position(inner, _) => collect_path_labels(inner, out),
        PathExpr::Slash(a, b) | PathExpr::Union(a, b) => {
            collect_path_labels(a, out);
            collect_path_labels(b, out);
        }
    }
}

fn collect_qualifier_labels(q: &Qualifier, out: &mut Vec<String>) {
    match q {
        Qualifier::Path(p) => collect_path_labels(p, out),
        Qualifier::TextEquals(p, _) => collect_path_labels(p, out),
        Qualifier::And(a, b) | Qualifier::Or(a, b) => {
            collect_qualifier_labels(a, out);
            collect_qualifier_labels(b, out);
        }
        Qualifier::Not(inner) => collect_qualifier_labels(inner, out),
        Qualifier::NodeEquals(p, test) => {
            collect_path_labels(p, out);
            if let NameTest::Name(n) = test {
                out.push(n.clone());
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Two-step secure updates
// ---------------------------------------------------------------------------

/// Secures an update operation formulated over the view: the target is
/// first rewritten for read rights, then the update-safety qualifier is
/// appended, so the operation can be evaluated over the original document
/// without disclosing hidden data. The update specification must be keyed
/// on view-visible element types, including inside its qualifiers.
pub fn secure_update(
    view: &SecurityView,
    upd: &UpdateSpec,
    op: &UpdateOp,
) -> Result<RewrittenOp, RewriteQueryError> {
    check_update_spec_visibility(view, upd)?;
    let read_safe = rewrite_query(view, &op.target)?;
    let safety = safety_qualifier(upd, op);
    Ok(RewrittenOp {
        kind: op.kind,
        target: read_safe.filter(safety),
        source: op.source.clone(),
        source_type: op.source_type.clone(),
    })
}

fn check_update_spec_visibility(
    view: &SecurityView,
    upd: &UpdateSpec,
) -> Result<(), RewriteQueryError> {
    for (ty, ut, value) in upd.iter() {
        if !view.is_visible_type(ty) {
            return Err(RewriteQueryError::InvisibleAnnotation(ty.to_string()));
        }
        if !view.is_visible_type(&ut.subject) {
            return Err(RewriteQueryError::InvisibleAnnotation(ut.subject.clone()));
        }
        if let Some(r) = &ut.replacement {
            if !view.is_visible_type(r) {
                return Err(RewriteQueryError::InvisibleAnnotation(r.clone()));
            }
        }
        if let Some(q) = value.qualifier() {
            let mut labels = Vec::new();
            collect_qualifier_labels(q, &mut labels);
            for label in labels {
                if !view.is_visible_type(&label) {
                    return Err(RewriteQueryError::InvisibleAnnotation(label));
                }
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dtd::parse_dtd;
    use crate::tree::parse_xml;
    use crate::xpath::{eval, eval_qualifier, parse_path};

    fn dtd() -> Arc<Dtd> {
        Arc::new(
            parse_dtd(
                "root r; r -> (a)*; a -> tag, (b)*; b -> (a | EPSILON); tag -> STR;",
            )
            .unwrap(),
        )
    }

    fn sample_tree() -> XmlTree {
        parse_xml(
            "<r><a><tag>x</tag><b><a><tag>y</tag></a></b><b/></a><a><tag>y</tag></a></r>",
        )
        .unwrap()
    }

    #[test]
    fn empty_spec_everything_accessible() {
        let spec = AccessSpec::empty(dtd());
        let tree = sample_tree();
        for n in tree.nodes_in_document_order() {
            assert!(oracle_accessible(&spec, &tree, n));
        }
        assert_eq!(build_accessibility(&spec), Qualifier::constant_true());
        let (view, _) = extract_view(&spec, &tree);
        assert!(view.structurally_equal(&tree));
    }

    #[test]
    fn predicate_matches_oracle_on_sample() {
        let mut spec = AccessSpec::empty(dtd());
        spec.annotate(
            "r",
            "a",
            AnnotationValue::Cond(
                crate::xpath::parse_qualifier("child::tag/text()='x'", Fragment::Downward)
                    .unwrap(),
            ),
        )
        .unwrap();
        spec.annotate("b", "a", AnnotationValue::Yes).unwrap();
        let tree = sample_tree();
        let acc = build_accessibility(&spec);
        for n in tree.nodes_in_document_order() {
            if tree.is_text(n) {
                continue;
            }
            assert_eq!(
                eval_qualifier(&acc, &tree, n),
                oracle_accessible(&spec, &tree, n),
                "disagreement at {}",
                tree.path(n)
            );
        }
    }

    #[test]
    fn closed_deny_blocks_overriding() {
        let mut spec = AccessSpec::empty(dtd());
        spec.annotate("r", "a", AnnotationValue::NoClosed).unwrap();
        spec.annotate("b", "a", AnnotationValue::Yes).unwrap();
        let tree = sample_tree();
        // the nested a under b would override, but the closed deny wins
        let acc = build_accessibility(&spec);
        for n in tree.nodes_in_document_order() {
            if tree.is_text(n) {
                continue;
            }
            let expected = n == tree.root();
            assert_eq!(oracle_accessible(&spec, &tree, n), expected, "{}", tree.path(n));
            assert_eq!(eval_qualifier(&acc, &tree, n), expected, "{}", tree.path(n));
        }
    }

    #[test]
    fn view_reattaches_to_nearest_accessible_ancestor() {
        let mut spec = AccessSpec::empty(dtd());
        spec.annotate("a", "b", AnnotationValue::No).unwrap();
        spec.annotate("b", "a", AnnotationValue::Yes).unwrap();
        let tree = sample_tree();
        let (view, mapping) = extract_view(&spec, &tree);
        // the nested a (under a hidden b) hangs directly under the outer a
        let outer_a = tree.children(tree.root())[0];
        let hidden_b = tree.element_children(outer_a)[1];
        let nested_a = tree.element_children(hidden_b)[0];
        assert!(!mapping.is_accessible(hidden_b));
        assert!(mapping.is_accessible(nested_a));
        assert_eq!(mapping.view_parent(nested_a), Some(outer_a));
        let view_outer = mapping.to_view(outer_a).unwrap();
        let view_nested = mapping.to_view(nested_a).unwrap();
        assert_eq!(view.parent(view_nested), Some(view_outer));
    }

    #[test]
    fn view_conforms_to_derived_schema() {
        let mut spec = AccessSpec::empty(dtd());
        spec.annotate("a", "b", AnnotationValue::No).unwrap();
        spec.annotate("b", "a", AnnotationValue::Yes).unwrap();
        let tree = sample_tree();
        let view_schema = SecurityView::derive(spec.clone());
        let (view, _) = extract_view(&spec, &tree);
        let report = crate::validate::validate(&view, view_schema.dtd_view());
        assert!(report.conforming(), "{:?}", report.violations());
        // b is hidden on every edge, so it leaves the view schema
        assert!(!view_schema.is_visible_type("b"));
        assert!(view_schema.is_visible_type("a"));
    }

    #[test]
    fn rewrite_query_round_trips_through_view() {
        let mut spec = AccessSpec::empty(dtd());
        spec.annotate("a", "b", AnnotationValue::No).unwrap();
        spec.annotate("b", "a", AnnotationValue::Yes).unwrap();
        let tree = sample_tree();
        let view_schema = SecurityView::derive(spec.clone());
        let (view, mapping) = extract_view(&spec, &tree);
        for query_text in [
            "descendant::a",
            "child::a/child::a",
            "descendant::a[child::tag/text()='y']",
            "self::r",
            "child::a[child::a]",
            "descendant-or-self::*",
        ] {
            let query = parse_path(query_text, Fragment::Downward).unwrap();
            let rewritten = rewrite_query(&view_schema, &query).unwrap();
            let over_view: std::collections::BTreeSet<NodeId> = eval(&query, &view, view.root())
                .into_iter()
                .map(|v| mapping.to_original(v).unwrap())
                .collect();
            let over_orig: std::collections::BTreeSet<NodeId> =
                eval(&rewritten, &tree, tree.root()).into_iter().collect();
            assert_eq!(over_view, over_orig, "query `{query_text}`");
        }
    }

    #[test]
    fn rewrite_query_rejects_invisible_labels() {
        let mut spec = AccessSpec::empty(dtd());
        spec.annotate("a", "b", AnnotationValue::No).unwrap();
        let view_schema = SecurityView::derive(spec);
        let query = parse_path("descendant::b", Fragment::Downward).unwrap();
        assert!(matches!(
            rewrite_query(&view_schema, &query),
            Err(RewriteQueryError::InvisibleType(_))
        ));
    }

    #[test]
    fn parse_access_validates_pairs() {
        let err = parse_access("access r/b = Y\n", dtd()).unwrap_err();
        assert!(matches!(err, PolicyError::NotAChildType { .. }));
        let ok = parse_access("access r/a = [child::tag/text()='x']h\n", dtd()).unwrap();
        assert_eq!(ok.len(), 1);
    }

    #[test]
    fn accessible_ancestors_orders_nearest_first() {
        let mut spec = AccessSpec::empty(dtd());
        spec.annotate("a", "b", AnnotationValue::No).unwrap();
        spec.annotate("b", "a", AnnotationValue::Yes).unwrap();
        let tree = sample_tree();
        let outer_a = tree.children(tree.root())[0];
        let hidden_b = tree.element_children(outer_a)[1];
        let nested_a = tree.element_children(hidden_b)[0];
        let nested_tag = tree.element_children(nested_a)[0];
        let a_plus = accessible_ancestors(&spec);
        let result = eval(&a_plus, &tree, nested_tag);
        assert_eq!(result, vec![nested_a, outer_a, tree.root()]);
        let first = eval(&a_plus.position(1), &tree, nested_tag);
        assert_eq!(first, vec![nested_a]);
    }
}
