//! Path-expression language: AST, parser, printer, evaluator.

mod ast;
mod eval;
mod parse;

pub use ast::{Axis, Fragment, NameTest, PathExpr, Qualifier};
pub use eval::{eval, eval_qualifier};
pub use parse::{parse_path, parse_qualifier};
