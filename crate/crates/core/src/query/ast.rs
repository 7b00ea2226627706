use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use serde::{Deserialize, Serialize};

use crate::gemd::NodeKind;
use crate::graph_store::{Direction, FilterOp, Hop};
use crate::tabular::RowFilter;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Query {
    pub from: Option<FromClause>,
    pub graph: Option<MatchClause>,
    pub objects: Option<ObjectsClause>,
    pub ret: Vec<Projection>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FromClause {
    pub entity: String,
    pub var: String,
    pub filters: Vec<RowFilter>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MatchClause {
    pub nodes: Vec<QNode>,
    pub hops: Vec<Hop>,
    pub direction: Direction,
}

impl MatchClause {
    pub fn uses_sample_param(&self) -> bool {
        self.nodes
            .iter()
            .flat_map(|n| &n.filters)
            .any(|f| f.value == QValue::Sample)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QNode {
    pub var: String,
    pub kind: Option<NodeKind>,
    pub filters: Vec<QFilter>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QFilter {
    pub attribute: String,
    pub op: FilterOp,
    pub value: QValue,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum QValue {
    Literal(String),
    /// The sample ids produced by the FROM clause.
    Sample,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ObjectsClause {
    pub characterization: String,
    pub var: String,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Projection {
    pub var: String,
    pub attr: String,
}

impl fmt::Display for Projection {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.{}", self.var, self.attr)
    }
}

fn op_str(op: FilterOp) -> &'static str {
    match op {
        FilterOp::Equals => "=",
        FilterOp::Regex => "~",
    }
}

fn quoted(f: &mut fmt::Formatter<'_>, s: &str) -> fmt::Result {
    f.write_str("\"")?;
    for c in s.chars() {
        match c {
            '"' => f.write_str("\\\"")?,
            '\\' => f.write_str("\\\\")?,
            c => write!(f, "{c}")?,
        }
    }
    f.write_str("\"")
}

fn filters<T>(f: &mut fmt::Formatter<'_>, items: &[T], mut one: impl FnMut(&mut fmt::Formatter<'_>, &T) -> fmt::Result) -> fmt::Result {
    if items.is_empty() {
        return Ok(());
    }
    f.write_str(" {")?;
    for (i, item) in items.iter().enumerate() {
        if i > 0 {
            f.write_str(", ")?;
        }
        one(f, item)?;
    }
    f.write_str("}")
}

impl fmt::Display for FromClause {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "FROM {}", self.entity)?;
        if self.var != self.entity {
            write!(f, " AS {}", self.var)?;
        }
        filters(f, &self.filters, |f, r| {
            write!(f, "{} {} ", r.column, op_str(r.op))?;
            quoted(f, &r.operand)
        })
    }
}

impl fmt::Display for QNode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}", self.var)?;
        if let Some(k) = self.kind {
            write!(f, ":{k}")?;
        }
        filters(f, &self.filters, |f, q| {
            write!(f, "{} {} ", q.attribute, op_str(q.op))?;
            match &q.value {
                QValue::Literal(s) => quoted(f, s),
                QValue::Sample => f.write_str("$sample"),
            }
        })?;
        f.write_str(")")
    }
}

impl fmt::Display for MatchClause {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.nodes[0])?;
        for (hop, node) in self.hops.iter().zip(&self.nodes[1..]) {
            let arrow = match (self.direction, hop) {
                (Direction::Forward, Hop::Reachable) => "-[*]->",
                (Direction::Forward, Hop::Direct) => "-->",
                (Direction::Reverse, Hop::Reachable) => "<-[*]-",
                (Direction::Reverse, Hop::Direct) => "<--",
            };
            write!(f, " {arrow} {node}")?;
        }
        Ok(())
    }
}

impl fmt::Display for Query {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if let Some(from) = &self.from {
            write!(f, "{from} ")?;
        }
        if let Some(m) = &self.graph {
            write!(f, "MATCH {m} ")?;
        }
        if let Some(o) = &self.objects {
            f.write_str("OBJECTS characterization = ")?;
            quoted(f, &o.characterization)?;
            if o.var != "obj" {
                write!(f, " AS {}", o.var)?;
            }
            f.write_str(" ")?;
        }
        f.write_str("RETURN ")?;
        for (i, p) in self.ret.iter().enumerate() {
            if i > 0 {
                f.write_str(", ")?;
            }
            write!(f, "{p}")?;
        }
        Ok(())
    }
}
