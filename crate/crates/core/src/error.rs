//! Error types shared across the engine.

use thiserror::Error;

/// Errors raised while parsing or checking a DTD.
#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum DtdError {
    #[error("DTD syntax error at line {line}, column {col}: {msg}")]
    Syntax { line: usize, col: usize, msg: String },
    #[error("unknown element type `{0}` referenced in a content model")]
    UnknownType(String),
    #[error("duplicate production for element type `{0}`")]
    DuplicateProduction(String),
    #[error("missing `root <name>;` declaration")]
    MissingRoot,
    #[error("root type `{0}` has no production")]
    UndefinedRoot(String),
}

/// Errors raised while parsing or editing XML documents.
#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum XmlError {
    #[error("XML syntax error at offset {offset}: {msg}")]
    Syntax { offset: usize, msg: String },
    #[error("attributes are not supported (element `{0}`)")]
    Attribute(String),
    #[error("comments are not supported")]
    Comment,
    #[error("processing instructions are not supported")]
    ProcessingInstruction,
    #[error("mixed content (text next to child elements) is not supported, under `{0}`")]
    MixedContent(String),
    #[error("unknown node id {0:?}")]
    UnknownNode(crate::tree::NodeId),
    #[error("dynamic error: {0}")]
    Dynamic(String),
}

/// Errors raised by the XPath parser and fragment checker.
#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum XPathError {
    #[error("XPath syntax error at offset {offset}: {msg}")]
    Syntax { offset: usize, msg: String },
    #[error("expression lies in fragment {found} which exceeds the allowed fragment {allowed}")]
    FragmentViolation { found: String, allowed: String },
}

/// Errors raised while parsing update or access policies.
#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum PolicyError {
    #[error("policy syntax error at line {line}: {msg}")]
    Syntax { line: usize, msg: String },
    #[error("unknown element type `{0}`")]
    UnknownType(String),
    #[error("unknown update kind `{0}`")]
    UnknownKind(String),
    #[error("duplicate annotation for ({0}, {1})")]
    DuplicateKey(String, String),
    #[error("`{child}` does not occur in the content model of `{parent}`")]
    NotAChildType { parent: String, child: String },
    #[error("annotation qualifier: {0}")]
    Qualifier(#[from] XPathError),
}

/// Errors raised while parsing or rewriting update operations.
#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum UpdateError {
    #[error("update syntax error: {0}")]
    Syntax(String),
    #[error("source fragments have mixed root types: `{0}` and `{1}`")]
    MixedSource(String, String),
    #[error("{0} requires at least one source fragment")]
    EmptySource(String),
    #[error("target expression: {0}")]
    Target(#[from] XPathError),
    #[error("source fragment: {0}")]
    Source(#[from] XmlError),
}

/// Errors raised by the view-side query rewriter.
#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum RewriteQueryError {
    #[error("unsupported construct in view query: {0}")]
    Unsupported(String),
    #[error("query references element type `{0}` which is not visible in the view schema")]
    InvisibleType(String),
    #[error("update annotation references element type `{0}` which is not visible in the view schema")]
    InvisibleAnnotation(String),
}
