//! Versioned property-graph store holding one synthesis graph per sample,
//! with label- and attribute-filtered path matching over flows_to edges.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::{String, ToString};
use alloc::sync::Arc;
use alloc::vec::Vec;
use core::fmt;

use serde::{Deserialize, Serialize};

use crate::gemd::{validate_graph, EdgeLabel, GemdEdge, GemdGraph, GemdNode, NodeKind, ValidationReport};
use crate::matcher::{FullMatch, RegexError};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum GraphStoreError {
    #[error("INVALID_GRAPH: {} violation(s)", .0.violations.len())]
    InvalidGraph(ValidationReport),
    #[error("ID_COLLISION: node {node_id} belongs to sample {owner}")]
    IdCollision { node_id: String, owner: String },
    #[error("SAMPLE_MISMATCH: graph is for {graph}, upsert targets {target}")]
    SampleMismatch { graph: String, target: String },
    #[error("UNKNOWN_NODE: {0}")]
    UnknownNode(String),
    #[error("UNKNOWN_SAMPLE: {0}")]
    UnknownSample(String),
    #[error("UNKNOWN_VERSION: {sample_id} v{version}")]
    UnknownVersion { sample_id: String, version: usize },
    #[error("BAD_REGEX: {0}")]
    BadRegex(#[from] RegexError),
    #[error("INVALID_PATTERN: {0}")]
    InvalidPattern(String),
}

impl GraphStoreError {
    pub fn code(&self) -> &'static str {
        match self {
            GraphStoreError::InvalidGraph(_) => "INVALID_GRAPH",
            GraphStoreError::IdCollision { .. } => "ID_COLLISION",
            GraphStoreError::SampleMismatch { .. } => "SAMPLE_MISMATCH",
            GraphStoreError::UnknownNode(_) => "UNKNOWN_NODE",
            GraphStoreError::UnknownSample(_) => "UNKNOWN_SAMPLE",
            GraphStoreError::UnknownVersion { .. } => "UNKNOWN_VERSION",
            GraphStoreError::BadRegex(_) => "BAD_REGEX",
            GraphStoreError::InvalidPattern(_) => "INVALID_PATTERN",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GraphReceipt {
    pub sample_id: String,
    pub version: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FilterOp {
    Equals,
    Regex,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Operand {
    Literal(String),
    /// Matches if the field matches any member (used for `$sample`).
    OneOf(Vec<String>),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttrFilter {
    pub attribute: String,
    pub op: FilterOp,
    pub operand: Operand,
}

impl AttrFilter {
    pub fn equals(attribute: impl Into<String>, value: impl Into<String>) -> Self {
        AttrFilter {
            attribute: attribute.into(),
            op: FilterOp::Equals,
            operand: Operand::Literal(value.into()),
        }
    }

    pub fn regex(attribute: impl Into<String>, pattern: impl Into<String>) -> Self {
        AttrFilter {
            attribute: attribute.into(),
            op: FilterOp::Regex,
            operand: Operand::Literal(pattern.into()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NodePredicate {
    pub variable: String,
    pub kind: Option<NodeKind>,
    pub filters: Vec<AttrFilter>,
}

impl NodePredicate {
    pub fn new(variable: impl Into<String>, kind: Option<NodeKind>) -> Self {
        NodePredicate {
            variable: variable.into(),
            kind,
            filters: Vec::new(),
        }
    }

    pub fn filter(mut self, f: AttrFilter) -> Self {
        self.filters.push(f);
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Hop {
    /// Exactly one flows_to edge.
    Direct,
    /// One or more flows_to edges.
    Reachable,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    Forward,
    Reverse,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PathPattern {
    pub nodes: Vec<NodePredicate>,
    /// `hops[i]` connects `nodes[i]` to `nodes[i + 1]`.
    pub hops: Vec<Hop>,
    pub direction: Direction,
}

impl PathPattern {
    pub fn single(node: NodePredicate) -> Self {
        PathPattern {
            nodes: alloc::vec![node],
            hops: Vec::new(),
            direction: Direction::Forward,
        }
    }

    pub fn then(mut self, hop: Hop, node: NodePredicate) -> Self {
        self.hops.push(hop);
        self.nodes.push(node);
        self
    }

    pub fn reversed(mut self) -> Self {
        self.direction = Direction::Reverse;
        self
    }

    pub fn variables(&self) -> impl Iterator<Item = &str> {
        self.nodes.iter().map(|n| n.variable.as_str())
    }

    fn check(&self) -> Result<(), GraphStoreError> {
        if self.nodes.is_empty() {
            return Err(GraphStoreError::InvalidPattern("pattern has no node predicates".into()));
        }
        if self.hops.len() + 1 != self.nodes.len() {
            return Err(GraphStoreError::InvalidPattern("hop count must be one less than node count".into()));
        }
        let mut seen = BTreeSet::new();
        for n in &self.nodes {
            if n.variable.is_empty() {
                return Err(GraphStoreError::InvalidPattern("empty variable name".into()));
            }
            if !seen.insert(n.variable.as_str()) {
                return Err(GraphStoreError::InvalidPattern(alloc::format!(
                    "variable {} bound twice",
                    n.variable
                )));
            }
        }
        Ok(())
    }
}

/// One match: pattern variables (in pattern order) bound to node ids.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Binding {
    pub sample_id: String,
    pub entries: Vec<(String, String)>,
}

impl Binding {
    pub fn get(&self, variable: &str) -> Option<&str> {
        self.entries
            .iter()
            .find(|(v, _)| v == variable)
            .map(|(_, id)| id.as_str())
    }

    pub fn node_ids(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|(_, id)| id.as_str())
    }
}

impl fmt::Display for Binding {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut first = true;
        for (v, id) in &self.entries {
            if !first {
                f.write_str(", ")?;
            }
            first = false;
            write!(f, "{v}={id}")?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NeighborDirection {
    Forward,
    Reverse,
    Both,
}

struct CompiledFilter {
    attribute: String,
    operand: CompiledOperand,
}

enum CompiledOperand {
    Equals(Vec<String>),
    Regex(Vec<FullMatch>),
}

struct CompiledPredicate {
    kind: Option<NodeKind>,
    filters: Vec<CompiledFilter>,
}

impl CompiledPredicate {
    fn compile(pred: &NodePredicate) -> Result<Self, GraphStoreError> {
        let mut filters = Vec::new();
        for f in &pred.filters {
            let values: Vec<String> = match &f.operand {
                Operand::Literal(v) => alloc::vec![v.clone()],
                Operand::OneOf(vs) => vs.clone(),
            };
            let operand = match f.op {
                FilterOp::Equals => CompiledOperand::Equals(values),
                FilterOp::Regex => CompiledOperand::Regex(
                    values
                        .iter()
                        .map(|v| FullMatch::new(v))
                        .collect::<Result<_, _>>()?,
                ),
            };
            filters.push(CompiledFilter {
                attribute: f.attribute.clone(),
                operand,
            });
        }
        Ok(CompiledPredicate { kind: pred.kind, filters })
    }

    fn accepts(&self, node: &GemdNode) -> bool {
        if let Some(kind) = self.kind {
            if node.kind != kind {
                return false;
            }
        }
        self.filters.iter().all(|f| {
            let value = if f.attribute == "tags" {
                // Tags match if any tag satisfies the operand.
                return node.tags.iter().any(|t| f.operand.accepts(t));
            } else {
                node.field(&f.attribute)
            };
            value.is_some_and(|v| f.operand.accepts(&v))
        })
    }
}

impl CompiledOperand {
    fn accepts(&self, value: &str) -> bool {
        match self {
            CompiledOperand::Equals(vs) => vs.iter().any(|v| v == value),
            CompiledOperand::Regex(rs) => rs.iter().any(|r| r.is_match(value)),
        }
    }
}

/// Per-graph adjacency and reachability over flows_to, oriented by the
/// pattern direction.
struct FlowIndex<'g> {
    nodes: Vec<&'g GemdNode>,
    direct: Vec<BTreeSet<usize>>,
    reach: Vec<Vec<u64>>,
}

impl<'g> FlowIndex<'g> {
    fn build(graph: &'g GemdGraph, direction: Direction) -> Self {
        let nodes: Vec<&GemdNode> = graph.nodes().collect();
        let index: BTreeMap<&str, usize> = nodes.iter().enumerate().map(|(i, n)| (n.node_id.as_str(), i)).collect();
        let n = nodes.len();
        let mut direct = alloc::vec![BTreeSet::new(); n];
        for e in graph.edges().iter().filter(|e| e.label == EdgeLabel::FlowsTo) {
            if let (Some(&s), Some(&d)) = (index.get(e.src.as_str()), index.get(e.dst.as_str())) {
                match direction {
                    Direction::Forward => direct[s].insert(d),
                    Direction::Reverse => direct[d].insert(s),
                };
            }
        }
        let words = n.div_ceil(64);
        let mut reach = alloc::vec![alloc::vec![0u64; words]; n];
        match topological_order(&direct) {
            Some(order) => {
                for &u in order.iter().rev() {
                    let mut acc = alloc::vec![0u64; words];
                    for &v in &direct[u] {
                        acc[v / 64] |= 1 << (v % 64);
                        for (a, b) in acc.iter_mut().zip(&reach[v]) {
                            *a |= *b;
                        }
                    }
                    reach[u] = acc;
                }
            }
            None => {
                // Stored graphs are acyclic; this path only serves ad-hoc graphs.
                for (start, row) in reach.iter_mut().enumerate() {
                    let mut stack: Vec<usize> = direct[start].iter().copied().collect();
                    while let Some(v) = stack.pop() {
                        if row[v / 64] & (1 << (v % 64)) == 0 {
                            row[v / 64] |= 1 << (v % 64);
                            stack.extend(direct[v].iter().copied());
                        }
                    }
                }
            }
        }
        FlowIndex { nodes, direct, reach }
    }

    fn connected(&self, hop: Hop, from: usize, to: usize) -> bool {
        match hop {
            Hop::Direct => self.direct[from].contains(&to),
            Hop::Reachable => self.reach[from][to / 64] & (1 << (to % 64)) != 0,
        }
    }
}

fn topological_order(succ: &[BTreeSet<usize>]) -> Option<Vec<usize>> {
    let n = succ.len();
    let mut indegree = alloc::vec![0usize; n];
    for targets in succ {
        for &t in targets {
            indegree[t] += 1;
        }
    }
    let mut ready: Vec<usize> = (0..n).filter(|&i| indegree[i] == 0).collect();
    let mut order = Vec::with_capacity(n);
    while let Some(u) = ready.pop() {
        order.push(u);
        for &v in &succ[u] {
            indegree[v] -= 1;
            if indegree[v] == 0 {
                ready.push(v);
            }
        }
    }
    (order.len() == n).then_some(order)
}

/// Matches a pattern against one graph.
pub fn match_graph(graph: &GemdGraph, pattern: &PathPattern) -> Result<Vec<Binding>, GraphStoreError> {
    pattern.check()?;
    let compiled: Vec<CompiledPredicate> = pattern
        .nodes
        .iter()
        .map(CompiledPredicate::compile)
        .collect::<Result<_, _>>()?;
    Ok(match_compiled(graph, pattern, &compiled))
}

fn match_compiled(graph: &GemdGraph, pattern: &PathPattern, compiled: &[CompiledPredicate]) -> Vec<Binding> {
    let index = FlowIndex::build(graph, pattern.direction);
    let candidates: Vec<Vec<usize>> = compiled
        .iter()
        .map(|p| (0..index.nodes.len()).filter(|&i| p.accepts(index.nodes[i])).collect())
        .collect();
    if candidates.iter().any(Vec::is_empty) {
        return Vec::new();
    }
    let mut partial: Vec<Vec<usize>> = candidates[0].iter().map(|&i| alloc::vec![i]).collect();
    for (step, hop) in pattern.hops.iter().enumerate() {
        let next = &candidates[step + 1];
        let mut extended = Vec::new();
        for chain in &partial {
            let last = *chain.last().expect("non-empty chain");
            for &cand in next {
                if index.connected(*hop, last, cand) {
                    let mut c = chain.clone();
                    c.push(cand);
                    extended.push(c);
                }
            }
        }
        partial = extended;
        if partial.is_empty() {
            break;
        }
    }
    partial
        .into_iter()
        .map(|chain| Binding {
            sample_id: graph.sample_id.clone(),
            entries: pattern
                .nodes
                .iter()
                .zip(chain)
                .map(|(p, i)| (p.variable.clone(), index.nodes[i].node_id.clone()))
                .collect(),
        })
        .collect()
}

/// Stores every version of every sample graph; queries see latest versions.
#[derive(Debug, Clone, Default)]
pub struct GraphStore {
    samples: BTreeMap<String, Vec<Arc<GemdGraph>>>,
    /// node_id -> owning sample, over latest versions only.
    owners: BTreeMap<String, String>,
}

impl GraphStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Checks that `graph` could be stored under `sample_id`.
    pub fn check_upsert(&self, sample_id: &str, graph: &GemdGraph) -> Result<(), GraphStoreError> {
        if graph.sample_id != sample_id {
            return Err(GraphStoreError::SampleMismatch {
                graph: graph.sample_id.clone(),
                target: sample_id.to_string(),
            });
        }
        let report = validate_graph(graph);
        if !report.ok {
            return Err(GraphStoreError::InvalidGraph(report));
        }
        for node in graph.nodes() {
            if let Some(owner) = self.owners.get(&node.node_id) {
                if owner != sample_id {
                    return Err(GraphStoreError::IdCollision {
                        node_id: node.node_id.clone(),
                        owner: owner.clone(),
                    });
                }
            }
        }
        Ok(())
    }

    /// Stores `graph` as the next version of `sample_id`.
    pub fn upsert_sample_graph(&mut self, sample_id: &str, graph: GemdGraph) -> Result<GraphReceipt, GraphStoreError> {
        self.check_upsert(sample_id, &graph)?;
        let versions = self.samples.entry(sample_id.to_string()).or_default();
        if let Some(previous) = versions.last() {
            for node in previous.nodes() {
                self.owners.remove(&node.node_id);
            }
        }
        for node in graph.nodes() {
            self.owners.insert(node.node_id.clone(), sample_id.to_string());
        }
        versions.push(Arc::new(graph));
        Ok(GraphReceipt {
            sample_id: sample_id.to_string(),
            version: versions.len(),
        })
    }

    pub fn latest(&self, sample_id: &str) -> Option<&Arc<GemdGraph>> {
        self.samples.get(sample_id).and_then(|v| v.last())
    }

    /// `version` is 1-based; `None` means latest.
    pub fn graph(&self, sample_id: &str, version: Option<usize>) -> Result<&Arc<GemdGraph>, GraphStoreError> {
        let versions = self
            .samples
            .get(sample_id)
            .ok_or_else(|| GraphStoreError::UnknownSample(sample_id.to_string()))?;
        match version {
            None => Ok(versions.last().expect("stored samples have a version")),
            Some(v) => versions
                .get(v.wrapping_sub(1))
                .ok_or_else(|| GraphStoreError::UnknownVersion {
                    sample_id: sample_id.to_string(),
                    version: v,
                }),
        }
    }

    pub fn version_count(&self, sample_id: &str) -> usize {
        self.samples.get(sample_id).map_or(0, Vec::len)
    }

    pub fn sample_ids(&self) -> impl Iterator<Item = &str> {
        self.samples.keys().map(String::as_str)
    }

    pub fn owner_of(&self, node_id: &str) -> Option<&str> {
        self.owners.get(node_id).map(String::as_str)
    }

    pub fn get_node(&self, node_id: &str) -> Option<&GemdNode> {
        let owner = self.owners.get(node_id)?;
        self.latest(owner)?.node(node_id)
    }

    /// All bindings of `pattern` over the latest graphs, optionally limited to
    /// `scope`, sorted by sample then bound node ids.
    pub fn match_path(&self, pattern: &PathPattern, scope: Option<&BTreeSet<String>>) -> Result<Vec<Binding>, GraphStoreError> {
        pattern.check()?;
        let compiled: Vec<CompiledPredicate> = pattern
            .nodes
            .iter()
            .map(CompiledPredicate::compile)
            .collect::<Result<_, _>>()?;
        let mut out = Vec::new();
        for (sample_id, versions) in &self.samples {
            if scope.is_some_and(|s| !s.contains(sample_id)) {
                continue;
            }
            let graph = versions.last().expect("stored samples have a version");
            out.extend(match_compiled(graph, pattern, &compiled));
        }
        out.sort_by(|a, b| a.node_ids().cmp(b.node_ids()).then_with(|| a.sample_id.cmp(&b.sample_id)));
        Ok(out)
    }

    /// Incident edges of `node_id` (latest version) with their far endpoints.
    /// `labels = None` means every label.
    pub fn neighbors(
        &self,
        node_id: &str,
        direction: NeighborDirection,
        labels: Option<&[EdgeLabel]>,
    ) -> Result<Vec<(GemdEdge, GemdNode)>, GraphStoreError> {
        let owner = self
            .owners
            .get(node_id)
            .ok_or_else(|| GraphStoreError::UnknownNode(node_id.to_string()))?;
        let graph = self.latest(owner).expect("owner index points at stored sample");
        let wanted = |l: EdgeLabel| labels.is_none_or(|ls| ls.contains(&l));
        let mut out = Vec::new();
        for edge in graph.edges() {
            if !wanted(edge.label) {
                continue;
            }
            let forward = edge.src == node_id && matches!(direction, NeighborDirection::Forward | NeighborDirection::Both);
            let reverse = edge.dst == node_id && matches!(direction, NeighborDirection::Reverse | NeighborDirection::Both);
            if forward {
                if let Some(n) = graph.node(&edge.dst) {
                    out.push((edge.clone(), n.clone()));
                }
            }
            if reverse && !(forward && edge.src == edge.dst) {
                if let Some(n) = graph.node(&edge.src) {
                    out.push((edge.clone(), n.clone()));
                }
            }
        }
        Ok(out)
    }
}
