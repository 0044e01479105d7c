//! Access-controlled XML updating.
//!
//! The engine enforces fine-grained update and read access-control policies
//! on XML documents governed by (possibly recursive) schemas. Policies are
//! annotations on element types; enforcement compiles them into path
//! predicates and rewrites update operations and queries into safe
//! equivalents before anything touches the document.
//!
//! Module map:
//!
//! - [`dtd`]: schemas with regular-expression content models.
//! - [`tree`]: ordered labeled trees, XML text format, edit primitives.
//! - [`validate`]: conformance checking.
//! - [`xpath`]: the path-expression fragments, evaluator and printer.
//! - [`policy`]: update specifications and the compiled updatability,
//!   prohibition, and conflict-resolution predicates.
//! - [`rewrite`]: update-operation parsing, safety rewriting, application.
//! - [`view`]: read-access specifications, virtual views, query rewriting,
//!   and the two-step secure-update pipeline.
//!
//! Schemas, policies, compiled predicates and reports are immutable after
//! construction and freely shareable across threads; tree edits build new
//! trees rather than mutating shared state.

pub mod dtd;
pub mod error;
pub mod policy;
pub mod rewrite;
pub mod tree;
pub mod validate;
pub mod view;
pub mod xpath;

pub use dtd::{parse_dtd, ContentModel, Dtd};
pub use tree::{parse_xml, serialize_xml, NodeId, XmlTree};
pub use validate::{validate, ValidationReport};
