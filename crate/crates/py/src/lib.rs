//! Python bindings: schemas, documents, policies, and the rewriting and
//! view pipelines, exposed as a small set of classes and functions.
//!
//! ```python
//! import xuguard_py as xg
//!
//! schema = xg.Schema(open("hospital.dtd").read())
//! doc = xg.Document(open("hospital.xml").read())
//! assert doc.validate(schema) == []
//!
//! policy = xg.UpdatePolicy(open("delete-treatments.policy").read(), schema)
//! print(xg.rewrite_update("delete descendant::treatment", policy, schema))
//! edited, report = xg.apply_update(doc, "delete descendant::treatment", policy, schema)
//! ```

use std::sync::Arc;

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use pyo3::types::PyDict;

use xuguard::dtd::{parse_dtd, Dtd};
use xuguard::policy::{parse_policy, UpdateSpec};
use xuguard::rewrite::{self, ApplyStatus};
use xuguard::tree::{parse_xml, serialize_xml, XmlTree};
use xuguard::validate::validate;
use xuguard::view::{self, AccessSpec, SecurityView};
use xuguard::xpath::{eval, parse_path, Fragment};

fn value_error(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

/// A schema: element types with content models and a root type.
#[pyclass(frozen)]
struct Schema {
    dtd: Arc<Dtd>,
}

#[pymethods]
impl Schema {
    #[new]
    fn new(text: &str) -> PyResult<Self> {
        Ok(Schema { dtd: Arc::new(parse_dtd(text).map_err(value_error)?) })
    }

    fn root(&self) -> String {
        self.dtd.root().to_string()
    }

    fn element_types(&self) -> Vec<String> {
        self.dtd.element_types().map(str::to_string).collect()
    }

    fn is_recursive(&self) -> bool {
        self.dtd.is_recursive()
    }

    fn __str__(&self) -> String {
        self.dtd.to_string()
    }
}

/// An XML document (element and text nodes only).
#[pyclass(frozen)]
struct Document {
    tree: XmlTree,
}

#[pymethods]
impl Document {
    #[new]
    fn new(text: &str) -> PyResult<Self> {
        Ok(Document { tree: parse_xml(text).map_err(value_error)? })
    }

    fn serialize(&self) -> String {
        serialize_xml(&self.tree)
    }

    fn node_count(&self) -> usize {
        self.tree.node_count()
    }

    /// Violation descriptions; an empty list means the document conforms.
    fn validate(&self, schema: &Schema) -> Vec<String> {
        validate(&self.tree, &schema.dtd)
            .violations()
            .iter()
            .map(|v| v.to_string())
            .collect()
    }

    /// Evaluates a path expression at the root and returns the canonical
    /// paths of the selected nodes.
    fn select(&self, xpath: &str) -> PyResult<Vec<String>> {
        let expr = parse_path(xpath, Fragment::UpwardPosEq).map_err(value_error)?;
        Ok(eval(&expr, &self.tree, self.tree.root())
            .into_iter()
            .map(|n| self.tree.path(n))
            .collect())
    }

    fn __str__(&self) -> String {
        self.serialize()
    }
}

/// Update rights: annotations on (element type, update type) pairs.
#[pyclass(frozen)]
struct UpdatePolicy {
    spec: UpdateSpec,
}

#[pymethods]
impl UpdatePolicy {
    #[new]
    fn new(text: &str, schema: &Schema) -> PyResult<Self> {
        Ok(UpdatePolicy { spec: parse_policy(text, schema.dtd.clone()).map_err(value_error)? })
    }

    fn __len__(&self) -> usize {
        self.spec.len()
    }
}

/// Read rights: annotations on (parent type, child type) pairs.
#[pyclass(frozen)]
struct AccessPolicy {
    spec: AccessSpec,
}

#[pymethods]
impl AccessPolicy {
    #[new]
    fn new(text: &str, schema: &Schema) -> PyResult<Self> {
        Ok(AccessPolicy {
            spec: view::parse_access(text, schema.dtd.clone()).map_err(value_error)?,
        })
    }

    fn __len__(&self) -> usize {
        self.spec.len()
    }
}

fn rewritten_op(
    op_text: &str,
    policy: &UpdatePolicy,
    access: Option<&AccessPolicy>,
) -> PyResult<rewrite::RewrittenOp> {
    let op = rewrite::parse_update(op_text).map_err(value_error)?;
    match access {
        None => Ok(rewrite::rewrite_update(&policy.spec, &op)),
        Some(access) => {
            let view = SecurityView::derive(access.spec.clone());
            view::secure_update(&view, &policy.spec, &op).map_err(value_error)
        }
    }
}

/// Rewrites an update operation into its safe form and returns its text.
/// With an access policy the two-step pipeline is used: read rights first,
/// then update rights.
#[pyfunction]
#[pyo3(signature = (op, policy, access=None))]
fn rewrite_update(op: &str, policy: &UpdatePolicy, access: Option<&AccessPolicy>) -> PyResult<String> {
    Ok(rewritten_op(op, policy, access)?.to_string())
}

/// Rewrites and applies an update operation. Returns the resulting
/// document (unchanged unless the update was accepted) and a report dict
/// with `status`, `affected` paths, and an optional `reason`.
#[pyfunction]
#[pyo3(signature = (doc, op, policy, schema, access=None))]
fn apply_update<'py>(
    py: Python<'py>,
    doc: &Document,
    op: &str,
    policy: &UpdatePolicy,
    schema: &Schema,
    access: Option<&AccessPolicy>,
) -> PyResult<(Document, Bound<'py, PyDict>)> {
    let rewritten = rewritten_op(op, policy, access)?;
    let (tree, report) = rewrite::apply_update(&schema.dtd, &doc.tree, &rewritten);
    let dict = PyDict::new(py);
    let (status, reason) = match &report.status {
        ApplyStatus::Accepted => ("accepted", None),
        ApplyStatus::AcceptedNoOp => ("accepted-no-op", None),
        ApplyStatus::DynamicError(msg) => ("dynamic-error", Some(msg.clone())),
        ApplyStatus::RejectedInvalid(violations) => (
            "rejected-invalid",
            Some(violations.iter().map(|v| v.to_string()).collect::<Vec<_>>().join("; ")),
        ),
    };
    dict.set_item("status", status)?;
    dict.set_item("affected", report.affected_paths.clone())?;
    dict.set_item("reason", reason)?;
    Ok((Document { tree }, dict))
}

/// Materializes the security view of a document: accessible nodes only,
/// each reattached under its nearest accessible ancestor.
#[pyfunction]
fn extract_view(doc: &Document, access: &AccessPolicy) -> Document {
    let (view, _mapping) = view::extract_view(&access.spec, &doc.tree);
    Document { tree: view }
}

/// Rewrites a downward query over the view schema into an expression over
/// the original document, returned as text.
#[pyfunction]
fn rewrite_query(query: &str, access: &AccessPolicy) -> PyResult<String> {
    let parsed = parse_path(query, Fragment::Downward).map_err(value_error)?;
    let view = SecurityView::derive(access.spec.clone());
    Ok(view::rewrite_query(&view, &parsed).map_err(value_error)?.to_string())
}

#[pymodule]
fn xuguard_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Schema>()?;
    m.add_class::<Document>()?;
    m.add_class::<UpdatePolicy>()?;
    m.add_class::<AccessPolicy>()?;
    m.add_function(wrap_pyfunction!(rewrite_update, m)?)?;
    m.add_function(wrap_pyfunction!(apply_update, m)?)?;
    m.add_function(wrap_pyfunction!(extract_view, m)?)?;
    m.add_function(wrap_pyfunction!(rewrite_query, m)?)?;
    Ok(())
}
