//! The federated query language.
//!
//! ```text
//! FROM <entity> [AS v] {col = "x", col ~ "re"}
//! MATCH (v[:kind] {attr = "x" | attr ~ "re" | attr = $sample}) -[*]-> (w) ...
//! OBJECTS characterization = "XRD" [AS v]
//! RETURN v.attr, w.attr
//! ```
//!
//! Each of the first three clauses is optional and at most one of each may
//! appear, in that order. Plans run left to right: the tabular step narrows
//! the sample scope handed to the graph step, whose surviving samples scope
//! the object step. Everything is filtered to the samples the principal may
//! read before it crosses a store boundary.

mod ast;
mod exec;
mod navigate;
mod parser;
mod plan;

use alloc::format;
use alloc::string::{String, ToString};

pub use ast::{FromClause, MatchClause, ObjectsClause, Projection, QFilter, QNode, QValue, Query};
pub use exec::{execute_query, run_query, QueryResult};
pub use navigate::{related_items, RelatedItem};
pub use parser::parse_query;
pub use plan::{plan_query, FederatedPlan, ObjectScope, PlanStep};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum QueryError {
    #[error("SYNTAX_ERROR at {line}:{col}: expected {expected}, found {found}")]
    Syntax {
        line: usize,
        col: usize,
        expected: String,
        found: String,
    },
    #[error("UNPLANNABLE: {0}")]
    Unplannable(String),
    #[error("step {step} failed: {code}: {message}")]
    Step { step: usize, code: String, message: String },
    #[error("UNKNOWN_ID: {0}")]
    UnknownId(String),
}

impl QueryError {
    pub(crate) fn syntax(line: usize, col: usize, expected: &str, found: &str) -> Self {
        QueryError::Syntax {
            line,
            col,
            expected: expected.to_string(),
            found: found.to_string(),
        }
    }

    pub(crate) fn step(step: usize, code: &str, message: impl core::fmt::Display) -> Self {
        QueryError::Step {
            step,
            code: code.to_string(),
            message: format!("{message}"),
        }
    }

    pub fn code(&self) -> &str {
        match self {
            QueryError::Syntax { .. } => "SYNTAX_ERROR",
            QueryError::Unplannable(_) => "UNPLANNABLE",
            QueryError::Step { code, .. } => code,
            QueryError::UnknownId(_) => "UNKNOWN_ID",
        }
    }
}
