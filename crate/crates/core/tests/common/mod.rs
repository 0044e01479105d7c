//! Shared test helpers: fixture loading, independent reference
//! interpreters, and seeded random generators for schemas, trees, policies
//! and queries.
//!
//! The reference interpreters here are deliberately written against the
//! raw tree relations rather than the engine's evaluator, so the test
//! suite exercises two independent routes to every answer.

#![allow(dead_code)]

use std::collections::BTreeSet;
use std::sync::Arc;

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use xuguard::dtd::{parse_dtd, ContentModel, Dtd, STR_TYPE};
use xuguard::policy::{AnnotationValue, UpdateKind, UpdateSpec, UpdateType};
use xuguard::tree::{parse_xml, NodeId, XmlTree};
use xuguard::view::{AccessSpec, SecurityView, ViewMapping};
use xuguard::xpath::{Axis, NameTest, PathExpr, Qualifier};

pub const HOSPITAL_DTD: &str = include_str!("../../../../fixtures/hospital.dtd");
pub const HOSPITAL_XML: &str = include_str!("../../../../fixtures/hospital.xml");
pub const DELETE_TREATMENTS_POLICY: &str = include_str!("../../../../fixtures/delete-treatments.policy");
pub const CARDIOLOGY_INSERT_POLICY: &str = include_str!("../../../../fixtures/cardiology-insert.policy");
pub const INSERT_RESULTS_POLICY: &str = include_str!("../../../../fixtures/insert-results.policy");
pub const DELETE_RESULTS_POLICY: &str = include_str!("../../../../fixtures/delete-results.policy");
pub const CATEGORY_A_ACCESS: &str = include_str!("../../../../fixtures/category-a.access");
pub const DELETE_ALL_TREATMENTS_OP: &str = include_str!("../../../../fixtures/delete-all-treatments.op");
pub const INSERT_BIOTHERAPY_RESULT_OP: &str = include_str!("../../../../fixtures/insert-biotherapy-result.op");
pub const PROBE_NATHANIEL_OP: &str = include_str!("../../../../fixtures/probe-nathaniel.op");
pub const PROBE_MARGARET_OP: &str = include_str!("../../../../fixtures/probe-margaret.op");

pub fn hospital_dtd() -> Arc<Dtd> {
    Arc::new(parse_dtd(HOSPITAL_DTD).expect("hospital schema parses"))
}

pub fn hospital_tree() -> XmlTree {
    parse_xml(HOSPITAL_XML).expect("hospital document parses")
}

/// Finds the unique element node whose `descp` child holds `text`.
pub fn treatment_by_descp(tree: &XmlTree, text: &str) -> NodeId {
    find_one(tree, |t, n| {
        t.label(n) == "treatment"
            && t.element_children(n)
                .iter()
                .any(|&c| t.label(c) == "descp" && child_text(t, c) == Some(text))
    })
}

/// Finds the unique patient node with the given name.
pub fn patient_by_name(tree: &XmlTree, name: &str) -> NodeId {
    find_one(tree, |t, n| {
        t.label(n) == "patient"
            && t.element_children(n)
                .iter()
                .any(|&c| t.label(c) == "pname" && child_text(t, c) == Some(name))
    })
}

pub fn child_text(tree: &XmlTree, element: NodeId) -> Option<&str> {
    tree.children(element).iter().find_map(|&c| tree.text(c))
}

pub fn find_one(tree: &XmlTree, pred: impl Fn(&XmlTree, NodeId) -> bool) -> NodeId {
    let hits: Vec<NodeId> = tree
        .nodes_in_document_order()
        .into_iter()
        .filter(|&n| !tree.is_text(n) && pred(tree, n))
        .collect();
    assert_eq!(hits.len(), 1, "expected exactly one matching node, found {}", hits.len());
    hits[0]
}

pub fn find_all(tree: &XmlTree, pred: impl Fn(&XmlTree, NodeId) -> bool) -> Vec<NodeId> {
    tree.nodes_in_document_order()
        .into_iter()
        .filter(|&n| !tree.is_text(n) && pred(tree, n))
        .collect()
}

// ---------------------------------------------------------------------------
// Independent path-expression interpreter
// ---------------------------------------------------------------------------

/// Reference evaluator with explicit relation checks and rank-based
/// ordering. Downward axes sort by document rank, ancestor axes by depth
/// (nearest first); compositions concatenate keeping first occurrences.
pub fn naive_eval(expr: &PathExpr, tree: &XmlTree, ctx: NodeId) -> Vec<NodeId> {
    let ranks: Vec<NodeId> = tree.nodes_in_document_order();
    let rank_of = |n: NodeId| ranks.iter().position(|&x| x == n).unwrap();
    naive_eval_inner(expr, tree, ctx, &rank_of)
}

fn is_strict_ancestor(tree: &XmlTree, a: NodeId, n: NodeId) -> bool {
    tree.ancestors(n).contains(&a)
}

fn matches(tree: &XmlTree, n: NodeId, test: &NameTest) -> bool {
    if tree.is_text(n) {
        return false;
    }
    match test {
        NameTest::Any => true,
        NameTest::Name(name) => tree.label(n) == name,
    }
}

fn naive_eval_inner(
    expr: &PathExpr,
    tree: &XmlTree,
    ctx: NodeId,
    rank_of: &dyn Fn(NodeId) -> usize,
) -> Vec<NodeId> {
    match expr {
        PathExpr::Step(axis, test) => {
            if tree.is_text(ctx) {
                return Vec::new();
            }
            let all = tree.nodes_in_document_order();
            let related: Vec<NodeId> = match axis {
                Axis::SelfAxis => vec![ctx],
                Axis::Child => all
                    .into_iter()
                    .filter(|&n| tree.parent(n) == Some(ctx))
                    .collect(),
                Axis::Descendant => all
                    .into_iter()
                    .filter(|&n| is_strict_ancestor(tree, ctx, n))
                    .collect(),
                Axis::DescendantOrSelf => all
                    .into_iter()
                    .filter(|&n| n == ctx || is_strict_ancestor(tree, ctx, n))
                    .collect(),
                Axis::Parent => tree.parent(ctx).into_iter().collect(),
                Axis::Ancestor => {
                    // nearest first: sort by decreasing depth
                    let mut anc: Vec<NodeId> = tree
                        .nodes_in_document_order()
                        .into_iter()
                        .filter(|&n| is_strict_ancestor(tree, n, ctx))
                        .collect();
                    anc.sort_by_key(|&n| std::cmp::Reverse(tree.ancestors(n).len()));
                    anc
                }
                Axis::AncestorOrSelf => {
                    let mut anc: Vec<NodeId> = tree
                        .nodes_in_document_order()
                        .into_iter()
                        .filter(|&n| n == ctx || is_strict_ancestor(tree, n, ctx))
                        .collect();
                    anc.sort_by_key(|&n| std::cmp::Reverse(tree.ancestors(n).len()));
                    anc
                }
            };
            let mut out: Vec<NodeId> =
                related.into_iter().filter(|&n| matches(tree, n, test)).collect();
            if matches!(
                axis,
                Axis::SelfAxis | Axis::Child | Axis::Descendant | Axis::DescendantOrSelf
            ) {
                out.sort_by_key(|&n| rank_of(n));
            }
            out
        }
        PathExpr::Filter(inner, q) => naive_eval_inner(inner, tree, ctx, rank_of)
            .into_iter()
            .filter(|&n| naive_qualifier(q, tree, n, rank_of))
            .collect(),
        PathExpr::Position(inner, k) => {
            let result = naive_eval_inner(inner, tree, ctx, rank_of);
            result.get(k - 1).copied().into_iter().collect()
        }
        PathExpr::Slash(a, b) => {
            let mut out = Vec::new();
            for c in naive_eval_inner(a, tree, ctx, rank_of) {
                for n in naive_eval_inner(b, tree, c, rank_of) {
                    if !out.contains(&n) {
                        out.push(n);
                    }
                }
            }
            out
        }
        PathExpr::Union(a, b) => {
            let mut out = naive_eval_inner(a, tree, ctx, rank_of);
            for n in naive_eval_inner(b, tree, ctx, rank_of) {
                if !out.contains(&n) {
                    out.push(n);
                }
            }
            out
        }
    }
}

pub fn naive_eval_qualifier(q: &Qualifier, tree: &XmlTree, ctx: NodeId) -> bool {
    let ranks: Vec<NodeId> = tree.nodes_in_document_order();
    let rank_of = |n: NodeId| ranks.iter().position(|&x| x == n).unwrap();
    naive_qualifier(q, tree, ctx, &rank_of)
}

fn naive_qualifier(
    q: &Qualifier,
    tree: &XmlTree,
    ctx: NodeId,
    rank_of: &dyn Fn(NodeId) -> usize,
) -> bool {
    match q {
        Qualifier::Path(p) => !naive_eval_inner(p, tree, ctx, rank_of).is_empty(),
        Qualifier::TextEquals(p, c) => naive_eval_inner(p, tree, ctx, rank_of)
            .into_iter()
            .any(|n| tree.children(n).iter().any(|&t| tree.text(t) == Some(c.as_str()))),
        Qualifier::And(a, b) => {
            naive_qualifier(a, tree, ctx, rank_of) && naive_qualifier(b, tree, ctx, rank_of)
        }
        Qualifier::Or(a, b) => {
            naive_qualifier(a, tree, ctx, rank_of) || naive_qualifier(b, tree, ctx, rank_of)
        }
        Qualifier::Not(inner) => !naive_qualifier(inner, tree, ctx, rank_of),
        Qualifier::NodeEquals(p, test) => {
            let left = naive_eval_inner(p, tree, ctx, rank_of);
            left.len() == 1 && left[0] == ctx && matches(tree, ctx, test)
        }
    }
}

// ---------------------------------------------------------------------------
// Independent regular-expression matcher (content-model oracle)
// ---------------------------------------------------------------------------

/// Backtracking membership test, structurally unrelated to the compiled
/// automaton route.
pub fn regex_matches(model: &ContentModel, word: &[&str]) -> bool {
    fn go<'w>(model: &ContentModel, word: &'w [&'w str]) -> Vec<&'w [&'w str]> {
        // returns all possible remainders after consuming a prefix
        match model {
            ContentModel::Epsilon => vec![word],
            ContentModel::Str => match word.first() {
                Some(&s) if s == STR_TYPE => vec![&word[1..]],
                _ => vec![],
            },
            ContentModel::Name(n) => match word.first() {
                Some(&s) if s == n => vec![&word[1..]],
                _ => vec![],
            },
            ContentModel::Seq(a, b) => {
                let mut out = Vec::new();
                for rest in go(a, word) {
                    out.extend(go(b, rest));
                }
                out
            }
            ContentModel::Alt(a, b) => {
                let mut out = go(a, word);
                out.extend(go(b, word));
                out
            }
            ContentModel::Star(a) => {
                let mut seen: Vec<&[&str]> = vec![word];
                let mut frontier = vec![word];
                while let Some(current) = frontier.pop() {
                    for rest in go(a, current) {
                        if rest.len() < current.len() && !seen.contains(&rest) {
                            seen.push(rest);
                            frontier.push(rest);
                        }
                    }
                }
                seen
            }
        }
    }
    go(model, word).iter().any(|rest| rest.is_empty())
}

// ---------------------------------------------------------------------------
// Random generation
// ---------------------------------------------------------------------------

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

const TEXTS: [&str; 4] = ["alpha", "beta", "gamma", "delta"];

/// Random schema over `n_types` element types, optionally required to be
/// recursive. Every type is guaranteed a finite derivation.
pub fn gen_dtd(rng: &mut ChaCha8Rng, n_types: usize, require_recursive: bool) -> Arc<Dtd> {
    loop {
        let names: Vec<String> = (0..n_types).map(|i| format!("t{i}")).collect();
        let mut productions = Vec::new();
        for name in &names {
            let model = gen_model(rng, &names, 0);
            productions.push((name.clone(), model));
        }
        let Ok(dtd) = Dtd::new(names[0].clone(), productions) else {
            continue;
        };
        if !all_types_finite(&dtd) {
            continue;
        }
        if require_recursive && !dtd.is_recursive() {
            continue;
        }
        return Arc::new(dtd);
    }
}

fn gen_model(rng: &mut ChaCha8Rng, names: &[String], depth: usize) -> ContentModel {
    let pick_name = |rng: &mut ChaCha8Rng| {
        ContentModel::Name(names[rng.random_range(0..names.len())].clone())
    };
    if depth >= 2 {
        return match rng.random_range(0..3) {
            0 => ContentModel::Epsilon,
            1 => ContentModel::Str,
            _ => pick_name(rng),
        };
    }
    match rng.random_range(0..100) {
        0..20 => ContentModel::Epsilon,
        20..35 => ContentModel::Str,
        35..55 => {
            // optional or starred single type
            let inner = pick_name(rng);
            if rng.random_bool(0.5) {
                ContentModel::Star(Box::new(inner))
            } else {
                ContentModel::Alt(Box::new(inner), Box::new(ContentModel::Epsilon))
            }
        }
        55..75 => ContentModel::Star(Box::new(gen_model(rng, names, depth + 1))),
        75..90 => ContentModel::Seq(
            Box::new(gen_model(rng, names, depth + 1)),
            Box::new(gen_model(rng, names, depth + 1)),
        ),
        _ => ContentModel::Alt(
            Box::new(gen_model(rng, names, depth + 1)),
            Box::new(gen_model(rng, names, depth + 1)),
        ),
    }
}

/// Least-fixpoint minimal subtree cost per type; `None` while unknown.
fn min_costs(dtd: &Dtd) -> std::collections::BTreeMap<String, usize> {
    let mut costs: std::collections::BTreeMap<String, usize> = Default::default();
    loop {
        let mut changed = false;
        for ty in dtd.element_types() {
            let model = dtd.content_model(ty).unwrap();
            if let Some(word_cost) = min_word_cost(model, &costs) {
                let total = 1 + word_cost;
                let better = costs.get(ty).map(|&c| total < c).unwrap_or(true);
                if better {
                    costs.insert(ty.to_string(), total);
                    changed = true;
                }
            }
        }
        if !changed {
            return costs;
        }
    }
}

fn min_word_cost(
    model: &ContentModel,
    costs: &std::collections::BTreeMap<String, usize>,
) -> Option<usize> {
    match model {
        ContentModel::Epsilon => Some(0),
        ContentModel::Str => Some(1),
        ContentModel::Name(n) => costs.get(n).copied(),
        ContentModel::Seq(a, b) => Some(min_word_cost(a, costs)? + min_word_cost(b, costs)?),
        ContentModel::Alt(a, b) => match (min_word_cost(a, costs), min_word_cost(b, costs)) {
            (Some(x), Some(y)) => Some(x.min(y)),
            (Some(x), None) | (None, Some(x)) => Some(x),
            (None, None) => None,
        },
        ContentModel::Star(_) => Some(0),
    }
}

fn all_types_finite(dtd: &Dtd) -> bool {
    let costs = min_costs(dtd);
    dtd.element_types().all(|ty| costs.contains_key(ty))
}

/// Random conforming instance with roughly `max_nodes` nodes.
pub fn gen_tree(dtd: &Dtd, rng: &mut ChaCha8Rng, max_nodes: usize) -> XmlTree {
    let costs = min_costs(dtd);
    let mut tree = XmlTree::new_element_root(dtd.root());
    let mut budget = max_nodes as i64;
    let root = tree.root();
    expand(dtd, &costs, rng, &mut tree, root, &mut budget);
    tree
}

fn expand(
    dtd: &Dtd,
    costs: &std::collections::BTreeMap<String, usize>,
    rng: &mut ChaCha8Rng,
    tree: &mut XmlTree,
    node: NodeId,
    budget: &mut i64,
) {
    let label = tree.label(node).to_string();
    let model = dtd.content_model(&label).unwrap().clone();
    let frugal = *budget <= 0;
    let word = sample_word(&model, costs, rng, frugal);
    for symbol in word {
        if symbol == STR_TYPE {
            let value = TEXTS[rng.random_range(0..TEXTS.len())];
            tree.add_text(node, value);
            *budget -= 1;
        } else {
            let child = tree.add_element(node, &symbol);
            *budget -= 1;
            expand(dtd, costs, rng, tree, child, budget);
        }
    }
}

fn sample_word(
    model: &ContentModel,
    costs: &std::collections::BTreeMap<String, usize>,
    rng: &mut ChaCha8Rng,
    frugal: bool,
) -> Vec<String> {
    match model {
        ContentModel::Epsilon => Vec::new(),
        ContentModel::Str => vec![STR_TYPE.to_string()],
        ContentModel::Name(n) => vec![n.clone()],
        ContentModel::Seq(a, b) => {
            let mut out = sample_word(a, costs, rng, frugal);
            out.extend(sample_word(b, costs, rng, frugal));
            out
        }
        ContentModel::Alt(a, b) => {
            let ca = min_word_cost(a, costs);
            let cb = min_word_cost(b, costs);
            let choose_a = match (ca, cb) {
                (None, _) => false,
                (_, None) => true,
                (Some(x), Some(y)) => {
                    if frugal {
                        x <= y
                    } else {
                        rng.random_bool(0.5)
                    }
                }
            };
            if choose_a {
                sample_word(a, costs, rng, frugal)
            } else {
                sample_word(b, costs, rng, frugal)
            }
        }
        ContentModel::Star(a) => {
            let reps = if frugal { 0 } else { rng.random_range(0..3) };
            let mut out = Vec::new();
            for _ in 0..reps {
                out.extend(sample_word(a, costs, rng, frugal));
            }
            out
        }
    }
}

/// Random downward path over the schema's labels.
pub fn gen_path(labels: &[String], rng: &mut ChaCha8Rng, depth: usize) -> PathExpr {
    let n_steps = rng.random_range(1..=2.max(depth));
    let mut expr: Option<PathExpr> = None;
    for _ in 0..n_steps {
        let axis = match rng.random_range(0..8) {
            0 => Axis::SelfAxis,
            1..=4 => Axis::Child,
            5 | 6 => Axis::Descendant,
            _ => Axis::DescendantOrSelf,
        };
        let test = if rng.random_bool(0.25) {
            NameTest::Any
        } else {
            NameTest::Name(labels[rng.random_range(0..labels.len())].clone())
        };
        let mut step = PathExpr::step(axis, test);
        if depth > 0 && rng.random_bool(0.4) {
            step = step.filter(gen_qualifier(labels, rng, depth - 1));
        }
        expr = Some(match expr {
            None => step,
            Some(prev) => prev.slash(step),
        });
    }
    let expr = expr.unwrap();
    if depth > 0 && rng.random_bool(0.15) {
        expr.union(gen_path(labels, rng, depth - 1))
    } else {
        expr
    }
}

/// Random downward-fragment qualifier.
pub fn gen_qualifier(labels: &[String], rng: &mut ChaCha8Rng, depth: usize) -> Qualifier {
    if depth == 0 {
        return Qualifier::Path(gen_path(labels, rng, 0));
    }
    match rng.random_range(0..10) {
        0..4 => Qualifier::Path(gen_path(labels, rng, depth - 1)),
        4 | 5 => Qualifier::TextEquals(
            gen_path(labels, rng, depth - 1),
            TEXTS[rng.random_range(0..TEXTS.len())].to_string(),
        ),
        6 => gen_qualifier(labels, rng, depth - 1).and(gen_qualifier(labels, rng, depth - 1)),
        7 => gen_qualifier(labels, rng, depth - 1).or(gen_qualifier(labels, rng, depth - 1)),
        _ => gen_qualifier(labels, rng, depth - 1).not(),
    }
}

pub fn labels_of(dtd: &Dtd) -> Vec<String> {
    dtd.element_types().map(str::to_string).collect()
}

pub fn gen_update_type(dtd: &Dtd, rng: &mut ChaCha8Rng) -> UpdateType {
    let labels = labels_of(dtd);
    let subject = labels[rng.random_range(0..labels.len())].clone();
    match rng.random_range(0..7) {
        0 => UpdateType::new(UpdateKind::InsertInto, subject),
        1 => UpdateType::new(UpdateKind::InsertAsFirst, subject),
        2 => UpdateType::new(UpdateKind::InsertAsLast, subject),
        3 => UpdateType::new(UpdateKind::InsertBefore, subject),
        4 => UpdateType::new(UpdateKind::InsertAfter, subject),
        5 => UpdateType::new(UpdateKind::Delete, subject),
        _ => {
            let replacement = labels[rng.random_range(0..labels.len())].clone();
            UpdateType::replace(subject, replacement)
        }
    }
}

pub fn gen_annotation_value(labels: &[String], rng: &mut ChaCha8Rng) -> AnnotationValue {
    match rng.random_range(0..10) {
        0..3 => AnnotationValue::Yes,
        3 | 4 => AnnotationValue::No,
        5 | 6 => AnnotationValue::NoClosed,
        7 | 8 => AnnotationValue::Cond(gen_qualifier(labels, rng, 1)),
        _ => AnnotationValue::CondClosed(gen_qualifier(labels, rng, 1)),
    }
}

/// Random update specification with up to `max_annotations` entries.
pub fn gen_update_spec(
    dtd: &Arc<Dtd>,
    rng: &mut ChaCha8Rng,
    max_annotations: usize,
) -> UpdateSpec {
    let labels = labels_of(dtd);
    let mut spec = UpdateSpec::empty(dtd.clone());
    let n = rng.random_range(0..=max_annotations);
    for _ in 0..n {
        let ty = labels[rng.random_range(0..labels.len())].clone();
        let ut = gen_update_type(dtd, rng);
        let value = gen_annotation_value(&labels, rng);
        let _ = spec.annotate(ty, ut, value); // duplicates silently skipped
    }
    spec
}

/// Random access specification over valid (parent, child) edges.
pub fn gen_access_spec(dtd: &Arc<Dtd>, rng: &mut ChaCha8Rng, max_annotations: usize) -> AccessSpec {
    let labels = labels_of(dtd);
    let mut edges = Vec::new();
    for parent in &labels {
        for child in dtd.child_types(parent) {
            edges.push((parent.clone(), child));
        }
    }
    let mut spec = AccessSpec::empty(dtd.clone());
    if edges.is_empty() {
        return spec;
    }
    let n = rng.random_range(0..=max_annotations);
    for _ in 0..n {
        let (parent, child) = edges[rng.random_range(0..edges.len())].clone();
        let value = gen_annotation_value(&labels, rng);
        let _ = spec.annotate(parent, child, value);
    }
    spec
}

/// Minimal conforming fragment whose root has the given type.
pub fn minimal_fragment(dtd: &Dtd, ty: &str, rng: &mut ChaCha8Rng) -> XmlTree {
    let costs = min_costs(dtd);
    let mut tree = XmlTree::new_element_root(ty);
    let mut budget = 0i64; // frugal expansion everywhere
    let root = tree.root();
    expand(dtd, &costs, rng, &mut tree, root, &mut budget);
    tree
}

/// Random update operation over the schema, with minimal conforming source
/// fragments.
pub fn gen_update_op(dtd: &Dtd, rng: &mut ChaCha8Rng) -> xuguard::rewrite::UpdateOp {
    use xuguard::rewrite::UpdateOp;
    let labels = labels_of(dtd);
    let target = gen_path(&labels, rng, 2);
    let kind = match rng.random_range(0..7) {
        0 => UpdateKind::InsertInto,
        1 => UpdateKind::InsertAsFirst,
        2 => UpdateKind::InsertAsLast,
        3 => UpdateKind::InsertBefore,
        4 => UpdateKind::InsertAfter,
        5 => UpdateKind::Delete,
        _ => UpdateKind::Replace,
    };
    if kind == UpdateKind::Delete {
        return UpdateOp { kind, target, source: Vec::new(), source_type: None };
    }
    let source_type = labels[rng.random_range(0..labels.len())].clone();
    let n_fragments = rng.random_range(1..=2);
    let source =
        (0..n_fragments).map(|_| minimal_fragment(dtd, &source_type, rng)).collect();
    UpdateOp { kind, target, source, source_type: Some(source_type) }
}

/// Asserts the structural tree invariants: unique root, consistent parent
/// links, total sibling order, text nodes as leaves, no id reuse.
pub fn assert_tree_shape(tree: &XmlTree) {
    let nodes = tree.nodes_in_document_order();
    let mut seen = std::collections::BTreeSet::new();
    for &n in &nodes {
        assert!(seen.insert(n), "node {n:?} reached twice");
        match tree.parent(n) {
            None => assert_eq!(n, tree.root(), "non-root node without a parent"),
            Some(p) => assert!(
                tree.children(p).iter().filter(|&&c| c == n).count() == 1,
                "parent link not mirrored exactly once"
            ),
        }
        for &c in tree.children(n) {
            assert_eq!(tree.parent(c), Some(n), "child link not mirrored");
        }
        if tree.is_text(n) {
            assert!(tree.children(n).is_empty(), "text node with children");
        }
    }
    assert_eq!(nodes.len(), tree.node_count(), "unreachable live nodes");
}

/// Random tree with arbitrary labels, not tied to any schema. Used where
/// only evaluation semantics matter.
pub fn gen_any_tree(rng: &mut ChaCha8Rng, max_nodes: usize, labels: &[&str]) -> XmlTree {
    let mut tree = XmlTree::new_element_root(labels[rng.random_range(0..labels.len())]);
    let mut nodes = vec![tree.root()];
    let target = rng.random_range(1..=max_nodes.max(1));
    while nodes.len() < target {
        let parent = nodes[rng.random_range(0..nodes.len())];
        if rng.random_bool(0.2) {
            tree.add_text(parent, TEXTS[rng.random_range(0..TEXTS.len())]);
        } else {
            let label = labels[rng.random_range(0..labels.len())];
            nodes.push(tree.add_element(parent, label));
        }
    }
    tree
}

// ---------------------------------------------------------------------------
// Reference interpreter for view queries
// ---------------------------------------------------------------------------

/// Plain view-semantics evaluation: runs the query over the materialized
/// view and maps results back to original nodes.
pub fn view_truth(
    query: &PathExpr,
    view_tree: &XmlTree,
    mapping: &ViewMapping,
) -> BTreeSet<NodeId> {
    xuguard::xpath::eval(query, view_tree, view_tree.root())
        .into_iter()
        .map(|v| mapping.to_original(v).expect("view node maps back"))
        .collect()
}

/// Reference interpreter mirroring the engine's documented encoding of
/// view child steps inside qualifiers: a direct accessible child is exact,
/// while skipping candidates (hidden parent) are accepted only when every
/// such candidate reattaches to the context node. Everything else follows
/// plain view semantics. Implemented directly over tree relations and the
/// view mapping, independent of both the evaluator and the rewriter.
pub struct CollapseRef<'a> {
    pub tree: &'a XmlTree,
    pub mapping: &'a ViewMapping,
}

impl CollapseRef<'_> {
    fn accessible(&self, n: NodeId) -> bool {
        self.mapping.is_accessible(n)
    }

    fn view_children(&self, n: NodeId) -> Vec<NodeId> {
        self.tree
            .descendants(n)
            .into_iter()
            .filter(|&m| !self.tree.is_text(m) && self.mapping.view_parent(m) == Some(n))
            .collect()
    }

    fn view_descendants(&self, n: NodeId) -> Vec<NodeId> {
        self.tree
            .descendants(n)
            .into_iter()
            .filter(|&m| !self.tree.is_text(m) && self.accessible(m))
            .collect()
    }

    /// Spine evaluation: exact view semantics chain by chain, tracking the
    /// static labels the rewriter would know.
    pub fn eval_spine(&self, query: &PathExpr) -> BTreeSet<NodeId> {
        let root = self.tree.root();
        let root_static = NameTest::Name(self.tree.label(root).to_string());
        let mut out = BTreeSet::new();
        for chain in flatten_chains(query) {
            let (lead, steps) = ref_fold(chain);
            if lead.dead {
                continue;
            }
            if let Some(name) = &lead.test {
                if self.tree.label(root) != name {
                    continue;
                }
            }
            if !lead.quals.iter().all(|q| self.eval_qual(q, root, &root_static)) {
                continue;
            }
            if steps.is_empty() {
                out.insert(root);
                continue;
            }
            self.walk_spine(&steps, root, &mut out);
        }
        out
    }

    fn walk_spine(&self, steps: &[RefStep], ctx: NodeId, out: &mut BTreeSet<NodeId>) {
        let (first, rest) = steps.split_first().expect("nonempty");
        let candidates = match first.axis {
            Axis::Child => self.view_children(ctx),
            Axis::Descendant => self.view_descendants(ctx),
            Axis::DescendantOrSelf => {
                let mut v = vec![ctx];
                v.extend(self.view_descendants(ctx));
                v
            }
            other => panic!("axis {} on a folded spine", other.name()),
        };
        for m in candidates {
            if !matches(self.tree, m, &first.test) {
                continue;
            }
            if !first.quals.iter().all(|q| self.eval_qual(q, m, &first.test)) {
                continue;
            }
            if rest.is_empty() {
                out.insert(m);
            } else {
                self.walk_spine(rest, m, out);
            }
        }
    }

    /// Qualifier truth under the collapse encoding. `ctx_static` is the
    /// label the rewriter would know statically for this context.
    pub fn eval_qual(&self, q: &Qualifier, ctx: NodeId, ctx_static: &NameTest) -> bool {
        match q {
            Qualifier::And(a, b) => {
                self.eval_qual(a, ctx, ctx_static) && self.eval_qual(b, ctx, ctx_static)
            }
            Qualifier::Or(a, b) => {
                self.eval_qual(a, ctx, ctx_static) || self.eval_qual(b, ctx, ctx_static)
            }
            Qualifier::Not(inner) => !self.eval_qual(inner, ctx, ctx_static),
            Qualifier::Path(p) => self.exists_path(p, ctx, ctx_static, &|_| true),
            Qualifier::TextEquals(p, c) => self.exists_path(p, ctx, ctx_static, &|n| {
                self.tree.children(n).iter().any(|&t| self.tree.text(t) == Some(c.as_str()))
            }),
            Qualifier::NodeEquals(..) => panic!("node comparison in a view query"),
        }
    }

    /// Existential path truth with the collapse rule on child steps.
    fn exists_path(
        &self,
        p: &PathExpr,
        ctx: NodeId,
        ctx_static: &NameTest,
        terminal: &dyn Fn(NodeId) -> bool,
    ) -> bool {
        for chain in flatten_chains(p) {
            let (lead, steps) = ref_fold(chain);
            if lead.dead {
                continue;
            }
            let mut ctx_here = ctx_static.clone();
            if let Some(name) = &lead.test {
                match ctx_static {
                    NameTest::Name(c) if c != name => continue,
                    NameTest::Name(_) => {}
                    NameTest::Any => {
                        if self.tree.is_text(ctx) || self.tree.label(ctx) != name {
                            continue;
                        }
                        ctx_here = NameTest::Name(name.clone());
                    }
                }
            }
            if !lead.quals.iter().all(|q| self.eval_qual(q, ctx, &ctx_here)) {
                continue;
            }
            if steps.is_empty() {
                if terminal(ctx) {
                    return true;
                }
                continue;
            }
            if self.exists_steps(&steps, ctx, &ctx_here, terminal) {
                return true;
            }
        }
        false
    }

    fn exists_steps(
        &self,
        steps: &[RefStep],
        ctx: NodeId,
        ctx_static: &NameTest,
        terminal: &dyn Fn(NodeId) -> bool,
    ) -> bool {
        let (first, rest) = steps.split_first().expect("nonempty");
        let ok = |m: NodeId| {
            matches(self.tree, m, &first.test)
                && first.quals.iter().all(|q| self.eval_qual(q, m, &first.test))
                && if rest.is_empty() {
                    terminal(m)
                } else {
                    self.exists_steps(rest, m, &first.test, terminal)
                }
        };
        match first.axis {
            Axis::Descendant => self.view_descendants(ctx).into_iter().any(ok),
            Axis::DescendantOrSelf => {
                (self.accessible(ctx) && ok(ctx))
                    || self.view_descendants(ctx).into_iter().any(ok)
            }
            Axis::Child => {
                // direct accessible children: exact
                let direct = self
                    .tree
                    .element_children(ctx)
                    .into_iter()
                    .any(|c| self.accessible(c) && ok(c));
                if direct {
                    return true;
                }
                // skipping candidates with the collapse rule
                let skipping: Vec<NodeId> = self
                    .view_descendants(ctx)
                    .into_iter()
                    .filter(|&m| {
                        let parent_hidden = self
                            .tree
                            .parent(m)
                            .map(|par| !self.accessible(par))
                            .unwrap_or(false);
                        let label_guard = match ctx_static {
                            NameTest::Name(c) => self
                                .mapping
                                .view_parent(m)
                                .map(|vp| self.tree.label(vp) == c)
                                .unwrap_or(false),
                            NameTest::Any => true,
                        };
                        parent_hidden && label_guard && ok(m)
                    })
                    .collect();
                if skipping.is_empty() {
                    return false;
                }
                let parents: BTreeSet<NodeId> =
                    skipping.iter().filter_map(|&m| self.mapping.view_parent(m)).collect();
                parents.len() == 1
                    && parents.first() == Some(&ctx)
                    && matches(self.tree, ctx, ctx_static)
            }
            other => panic!("axis {} on a folded chain", other.name()),
        }
    }
}

#[derive(Debug, Clone)]
struct RefStep {
    axis: Axis,
    test: NameTest,
    quals: Vec<Qualifier>,
}

#[derive(Debug, Clone, Default)]
struct RefLead {
    test: Option<String>,
    dead: bool,
    quals: Vec<Qualifier>,
}

/// Mirrors the rewriter's self-step folding: leading self steps constrain
/// the context, later ones become label tests and qualifiers on the
/// preceding step.
fn ref_fold(chain: Vec<RefStep>) -> (RefLead, Vec<RefStep>) {
    let mut lead = RefLead::default();
    let mut steps: Vec<RefStep> = Vec::new();
    for step in chain {
        if step.axis == Axis::SelfAxis {
            match steps.last_mut() {
                None => {
                    if let NameTest::Name(name) = &step.test {
                        match &lead.test {
                            None => lead.test = Some(name.clone()),
                            Some(existing) if existing != name => lead.dead = true,
                            _ => {}
                        }
                    }
                    lead.quals.extend(step.quals);
                }
                Some(last) => {
                    if let NameTest::Name(name) = &step.test {
                        match &last.test {
                            NameTest::Any => last
                                .quals
                                .push(Qualifier::Path(PathExpr::self_named(name.clone()))),
                            NameTest::Name(existing) if existing != name => {
                                last.quals.push(Qualifier::constant_false())
                            }
                            _ => {}
                        }
                    }
                    last.quals.extend(step.quals);
                }
            }
        } else {
            steps.push(step);
        }
    }
    (lead, steps)
}

fn flatten_chains(p: &PathExpr) -> Vec<Vec<RefStep>> {
    match p {
        PathExpr::Step(axis, test) => {
            vec![vec![RefStep { axis: *axis, test: test.clone(), quals: Vec::new() }]]
        }
        PathExpr::Filter(inner, q) => {
            let mut chains = flatten_chains(inner);
            for chain in &mut chains {
                chain.last_mut().unwrap().quals.push((**q).clone());
            }
            chains
        }
        PathExpr::Slash(a, b) => {
            let left = flatten_chains(a);
            let right = flatten_chains(b);
            let mut out = Vec::new();
            for l in &left {
                for r in &right {
                    let mut chain = l.clone();
                    chain.extend(r.iter().cloned());
                    out.push(chain);
                }
            }
            out
        }
        PathExpr::Union(a, b) => {
            let mut out = flatten_chains(a);
            out.extend(flatten_chains(b));
            out
        }
        PathExpr::Position(..) => panic!("position in a view query"),
    }
}

/// Random fragment-X query over view-visible labels, child steps allowed
/// both on the spine and inside qualifiers.
pub fn gen_view_query(view: &SecurityView, rng: &mut ChaCha8Rng) -> PathExpr {
    let labels = labels_of(view.dtd_view());
    gen_path(&labels, rng, 3)
}
