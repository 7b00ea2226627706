//! The GEMD++ synthesis-history graph: node kinds, attribute values, edges,
//! structural validation and material-history extraction.

use alloc::collections::{BTreeMap, BTreeSet, VecDeque};
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NodeKind {
    SampleRoot,
    MaterialSpec,
    MaterialRun,
    IngredientSpec,
    IngredientRun,
    ProcessSpec,
    ProcessRun,
    MeasurementSpec,
    MeasurementRun,
    InstrumentRun,
    Person,
    Organization,
    Project,
    Dataset,
    Report,
    Tool,
    Service,
    Infrastructure,
}

impl NodeKind {
    pub const ALL: [NodeKind; 18] = [
        NodeKind::SampleRoot,
        NodeKind::MaterialSpec,
        NodeKind::MaterialRun,
        NodeKind::IngredientSpec,
        NodeKind::IngredientRun,
        NodeKind::ProcessSpec,
        NodeKind::ProcessRun,
        NodeKind::MeasurementSpec,
        NodeKind::MeasurementRun,
        NodeKind::InstrumentRun,
        NodeKind::Person,
        NodeKind::Organization,
        NodeKind::Project,
        NodeKind::Dataset,
        NodeKind::Report,
        NodeKind::Tool,
        NodeKind::Service,
        NodeKind::Infrastructure,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            NodeKind::SampleRoot => "sample_root",
            NodeKind::MaterialSpec => "material_spec",
            NodeKind::MaterialRun => "material_run",
            NodeKind::IngredientSpec => "ingredient_spec",
            NodeKind::IngredientRun => "ingredient_run",
            NodeKind::ProcessSpec => "process_spec",
            NodeKind::ProcessRun => "process_run",
            NodeKind::MeasurementSpec => "measurement_spec",
            NodeKind::MeasurementRun => "measurement_run",
            NodeKind::InstrumentRun => "instrument_run",
            NodeKind::Person => "person",
            NodeKind::Organization => "organization",
            NodeKind::Project => "project",
            NodeKind::Dataset => "dataset",
            NodeKind::Report => "report",
            NodeKind::Tool => "tool",
            NodeKind::Service => "service",
            NodeKind::Infrastructure => "infrastructure",
        }
    }

    pub fn is_run(self) -> bool {
        self.as_str().ends_with("_run")
    }

    pub fn is_spec(self) -> bool {
        self.as_str().ends_with("_spec")
    }

    /// The spec kind a run of this kind must link to. Instruments only exist
    /// as runs.
    pub fn spec_counterpart(self) -> Option<NodeKind> {
        match self {
            NodeKind::MaterialRun => Some(NodeKind::MaterialSpec),
            NodeKind::IngredientRun => Some(NodeKind::IngredientSpec),
            NodeKind::ProcessRun => Some(NodeKind::ProcessSpec),
            NodeKind::MeasurementRun => Some(NodeKind::MeasurementSpec),
            _ => None,
        }
    }

    /// Kinds that take part in material flow.
    pub fn is_flow(self) -> bool {
        matches!(
            self,
            NodeKind::MaterialRun | NodeKind::IngredientRun | NodeKind::ProcessRun | NodeKind::SampleRoot
        )
    }

    pub fn allows_file_ref(self) -> bool {
        matches!(self, NodeKind::MeasurementRun | NodeKind::Dataset | NodeKind::Report)
    }
}

impl fmt::Display for NodeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("unknown node kind {0:?}")]
pub struct UnknownKind(pub String);

impl FromStr for NodeKind {
    type Err = UnknownKind;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        NodeKind::ALL
            .iter()
            .copied()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| UnknownKind(s.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EdgeLabel {
    HasSpec,
    FlowsTo,
    Uses,
    RoleIn,
    PartOf,
}

impl EdgeLabel {
    pub const ALL: [EdgeLabel; 5] = [
        EdgeLabel::HasSpec,
        EdgeLabel::FlowsTo,
        EdgeLabel::Uses,
        EdgeLabel::RoleIn,
        EdgeLabel::PartOf,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            EdgeLabel::HasSpec => "has_spec",
            EdgeLabel::FlowsTo => "flows_to",
            EdgeLabel::Uses => "uses",
            EdgeLabel::RoleIn => "role_in",
            EdgeLabel::PartOf => "part_of",
        }
    }
}

impl fmt::Display for EdgeLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("unknown edge label {0:?}")]
pub struct UnknownLabel(pub String);

impl FromStr for EdgeLabel {
    type Err = UnknownLabel;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        EdgeLabel::ALL
            .iter()
            .copied()
            .find(|l| l.as_str() == s)
            .ok_or_else(|| UnknownLabel(s.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FractionBasis {
    Mass,
    Volume,
    Absolute,
}

impl FractionBasis {
    pub fn as_str(self) -> &'static str {
        match self {
            FractionBasis::Mass => "mass",
            FractionBasis::Volume => "volume",
            FractionBasis::Absolute => "absolute",
        }
    }
}

/// A typed attribute value. Units are opaque tokens; no unit algebra.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum AttributeValue {
    RealScalar { value: f64, units: String },
    UniformReal { units: String, lower_bound: f64, upper_bound: f64 },
    Integer { value: i64 },
    Categorical { value: String },
    Text { value: String },
    Fraction { basis: FractionBasis, value: f64 },
}

impl AttributeValue {
    pub fn text(value: impl Into<String>) -> Self {
        AttributeValue::Text { value: value.into() }
    }

    pub fn categorical(value: impl Into<String>) -> Self {
        AttributeValue::Categorical { value: value.into() }
    }

    pub fn uniform_real(units: impl Into<String>, lower_bound: f64, upper_bound: f64) -> Self {
        AttributeValue::UniformReal {
            units: units.into(),
            lower_bound,
            upper_bound,
        }
    }

    /// Flat text rendering used by predicates, filters and catalog cells.
    pub fn render(&self) -> String {
        match self {
            AttributeValue::RealScalar { value, units } => format!("{value} {units}"),
            AttributeValue::UniformReal {
                units,
                lower_bound,
                upper_bound,
            } => format!("[{lower_bound}, {upper_bound}] {units}"),
            AttributeValue::Integer { value } => format!("{value}"),
            AttributeValue::Categorical { value } | AttributeValue::Text { value } => value.clone(),
            AttributeValue::Fraction { basis, value } => format!("{value} {}", basis.as_str()),
        }
    }
}

pub type Attributes = BTreeMap<String, AttributeValue>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GemdNode {
    pub node_id: String,
    pub kind: NodeKind,
    pub name: String,
    pub sample_id: String,
    #[serde(default)]
    pub attributes: Attributes,
    #[serde(default)]
    pub tags: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub file_ref: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ontology_ref: Option<String>,
}

impl GemdNode {
    pub fn new(node_id: impl Into<String>, kind: NodeKind, name: impl Into<String>, sample_id: impl Into<String>) -> Self {
        GemdNode {
            node_id: node_id.into(),
            kind,
            name: name.into(),
            sample_id: sample_id.into(),
            attributes: Attributes::new(),
            tags: Vec::new(),
            file_ref: None,
            ontology_ref: None,
        }
    }

    pub fn with_attr(mut self, name: impl Into<String>, value: AttributeValue) -> Self {
        self.attributes.insert(name.into(), value);
        self
    }

    pub fn with_file(mut self, path: impl Into<String>) -> Self {
        self.file_ref = Some(path.into());
        self
    }

    /// Field lookup used by pattern predicates: intrinsic fields first, then
    /// attributes rendered as text.
    pub fn field(&self, name: &str) -> Option<String> {
        match name {
            "node_id" => Some(self.node_id.clone()),
            "name" => Some(self.name.clone()),
            "kind" | "type" => Some(self.kind.as_str().to_string()),
            "sample_id" => Some(self.sample_id.clone()),
            "file_ref" => self.file_ref.clone(),
            "ontology_ref" => self.ontology_ref.clone(),
            _ => self.attributes.get(name).map(AttributeValue::render),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GemdEdge {
    pub src: String,
    pub dst: String,
    pub label: EdgeLabel,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub attributes: Attributes,
}

impl GemdEdge {
    pub fn new(src: impl Into<String>, dst: impl Into<String>, label: EdgeLabel) -> Self {
        GemdEdge {
            src: src.into(),
            dst: dst.into(),
            label,
            attributes: Attributes::new(),
        }
    }

    pub fn key(&self) -> (&str, &str, EdgeLabel) {
        (&self.src, &self.dst, self.label)
    }

    /// Stable identifier used in violation reports.
    pub fn id(&self) -> String {
        format!("{}-[{}]->{}", self.src, self.label, self.dst)
    }
}

/// One sample's synthesis graph. Nodes are keyed by id; edges are a set keyed
/// by `(src, dst, label)` and kept sorted.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GemdGraph {
    pub sample_id: String,
    nodes: BTreeMap<String, GemdNode>,
    edges: Vec<GemdEdge>,
}

impl GemdGraph {
    pub fn new(sample_id: impl Into<String>) -> Self {
        GemdGraph {
            sample_id: sample_id.into(),
            nodes: BTreeMap::new(),
            edges: Vec::new(),
        }
    }

    /// Inserts a node; returns the node it replaced, if any.
    pub fn insert_node(&mut self, node: GemdNode) -> Option<GemdNode> {
        self.nodes.insert(node.node_id.clone(), node)
    }

    /// Inserts an edge, replacing any edge with the same `(src, dst, label)`.
    pub fn insert_edge(&mut self, edge: GemdEdge) {
        match self.edges.binary_search_by(|e| e.key().cmp(&edge.key())) {
            Ok(i) => self.edges[i] = edge,
            Err(i) => self.edges.insert(i, edge),
        }
    }

    pub fn node(&self, node_id: &str) -> Option<&GemdNode> {
        self.nodes.get(node_id)
    }

    pub fn contains(&self, node_id: &str) -> bool {
        self.nodes.contains_key(node_id)
    }

    pub fn nodes(&self) -> impl Iterator<Item = &GemdNode> {
        self.nodes.values()
    }

    pub fn edges(&self) -> &[GemdEdge] {
        &self.edges
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn root(&self) -> Option<&GemdNode> {
        self.nodes.values().find(|n| n.kind == NodeKind::SampleRoot)
    }

    pub fn out_edges<'a>(&'a self, node_id: &'a str) -> impl Iterator<Item = &'a GemdEdge> + 'a {
        self.edges.iter().filter(move |e| e.src == node_id)
    }

    pub fn in_edges<'a>(&'a self, node_id: &'a str) -> impl Iterator<Item = &'a GemdEdge> + 'a {
        self.edges.iter().filter(move |e| e.dst == node_id)
    }

    pub fn count_kind(&self, kind: NodeKind) -> usize {
        self.nodes.values().filter(|n| n.kind == kind).count()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ViolationCode {
    RootCount,
    RootId,
    SampleMismatch,
    FileRefNotAllowed,
    DanglingEdge,
    SelfLoop,
    HasSpecKinds,
    FlowsToKinds,
    FlowCycle,
    UsesKinds,
    RoleInKinds,
    MissingRole,
    MissingSpec,
    MultipleSpec,
    BoundsOrder,
    FractionRange,
    EmptyUnits,
    NonFinite,
}

impl ViolationCode {
    pub fn as_str(self) -> &'static str {
        match self {
            ViolationCode::RootCount => "ROOT_COUNT",
            ViolationCode::RootId => "ROOT_ID",
            ViolationCode::SampleMismatch => "SAMPLE_MISMATCH",
            ViolationCode::FileRefNotAllowed => "FILE_REF_NOT_ALLOWED",
            ViolationCode::DanglingEdge => "DANGLING_EDGE",
            ViolationCode::SelfLoop => "SELF_LOOP",
            ViolationCode::HasSpecKinds => "HAS_SPEC_KINDS",
            ViolationCode::FlowsToKinds => "FLOWS_TO_KINDS",
            ViolationCode::FlowCycle => "FLOW_CYCLE",
            ViolationCode::UsesKinds => "USES_KINDS",
            ViolationCode::RoleInKinds => "ROLE_IN_KINDS",
            ViolationCode::MissingRole => "MISSING_ROLE",
            ViolationCode::MissingSpec => "MISSING_SPEC",
            ViolationCode::MultipleSpec => "MULTIPLE_SPEC",
            ViolationCode::BoundsOrder => "BOUNDS_ORDER",
            ViolationCode::FractionRange => "FRACTION_RANGE",
            ViolationCode::EmptyUnits => "EMPTY_UNITS",
            ViolationCode::NonFinite => "NON_FINITE",
        }
    }
}

impl fmt::Display for ViolationCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Violation {
    pub code: ViolationCode,
    /// Node id, edge id (`src-[label]->dst`), or `<id>#<attribute>`.
    pub target: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ValidationReport {
    pub ok: bool,
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn from_violations(mut violations: Vec<Violation>) -> Self {
        violations.sort();
        violations.dedup();
        ValidationReport {
            ok: violations.is_empty(),
            violations,
        }
    }

    pub fn has(&self, code: ViolationCode) -> bool {
        self.violations.iter().any(|v| v.code == code)
    }

    pub fn codes(&self) -> BTreeSet<ViolationCode> {
        self.violations.iter().map(|v| v.code).collect()
    }
}

fn violation(code: ViolationCode, target: impl Into<String>, message: impl Into<String>) -> Violation {
    Violation {
        code,
        target: target.into(),
        message: message.into(),
    }
}

/// Checks the value-level invariants of one attribute.
pub fn check_attribute(value: &AttributeValue) -> ValidationReport {
    let mut out = Vec::new();
    attribute_violations("", value, &mut out);
    ValidationReport::from_violations(out)
}

fn attribute_violations(target: &str, value: &AttributeValue, out: &mut Vec<Violation>) {
    let units_ok = |units: &str, out: &mut Vec<Violation>| {
        if units.trim().is_empty() || units.chars().any(char::is_whitespace) {
            out.push(violation(ViolationCode::EmptyUnits, target, "units must be a non-empty token"));
        }
    };
    match value {
        AttributeValue::RealScalar { value, units } => {
            if !value.is_finite() {
                out.push(violation(ViolationCode::NonFinite, target, "value is not finite"));
            }
            units_ok(units, out);
        }
        AttributeValue::UniformReal {
            units,
            lower_bound,
            upper_bound,
        } => {
            if !lower_bound.is_finite() || !upper_bound.is_finite() {
                out.push(violation(ViolationCode::NonFinite, target, "bounds are not finite"));
            } else if lower_bound > upper_bound {
                out.push(violation(
                    ViolationCode::BoundsOrder,
                    target,
                    format!("lower_bound {lower_bound} exceeds upper_bound {upper_bound}"),
                ));
            }
            units_ok(units, out);
        }
        AttributeValue::Fraction { basis, value } => {
            if !value.is_finite() {
                out.push(violation(ViolationCode::NonFinite, target, "fraction is not finite"));
            } else if matches!(basis, FractionBasis::Mass | FractionBasis::Volume) && !(0.0..=1.0).contains(value) {
                out.push(violation(
                    ViolationCode::FractionRange,
                    target,
                    format!("{} fraction {value} outside [0, 1]", basis.as_str()),
                ));
            }
        }
        AttributeValue::Integer { .. } | AttributeValue::Categorical { .. } | AttributeValue::Text { .. } => {}
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum RootRule {
    ExactlyOne,
    AtMostOne,
}

/// Validates every invariant of a sample graph. Violations are collected
/// exhaustively and returned sorted, so the report does not depend on input
/// order.
pub fn validate_graph(graph: &GemdGraph) -> ValidationReport {
    validate(graph, RootRule::ExactlyOne)
}

/// Like [`validate_graph`] but for subgraphs cut out of a sample graph,
/// which need not contain the sample root.
pub fn validate_fragment(graph: &GemdGraph) -> ValidationReport {
    validate(graph, RootRule::AtMostOne)
}

fn validate(graph: &GemdGraph, roots: RootRule) -> ValidationReport {
    let mut out = Vec::new();

    let root_ids: Vec<&str> = graph
        .nodes()
        .filter(|n| n.kind == NodeKind::SampleRoot)
        .map(|n| n.node_id.as_str())
        .collect();
    let root_count_ok = match roots {
        RootRule::ExactlyOne => root_ids.len() == 1,
        RootRule::AtMostOne => root_ids.len() <= 1,
    };
    if !root_count_ok {
        out.push(violation(
            ViolationCode::RootCount,
            graph.sample_id.clone(),
            format!("expected exactly one sample_root, found {}", root_ids.len()),
        ));
    }
    for id in &root_ids {
        if *id != graph.sample_id {
            out.push(violation(
                ViolationCode::RootId,
                *id,
                format!("sample_root id must equal sample id {:?}", graph.sample_id),
            ));
        }
    }

    for node in graph.nodes() {
        if node.sample_id != graph.sample_id {
            out.push(violation(
                ViolationCode::SampleMismatch,
                node.node_id.clone(),
                format!("node carries sample {:?}, graph is {:?}", node.sample_id, graph.sample_id),
            ));
        }
        if node.file_ref.is_some() && !node.kind.allows_file_ref() {
            out.push(violation(
                ViolationCode::FileRefNotAllowed,
                node.node_id.clone(),
                format!("{} nodes cannot reference files", node.kind),
            ));
        }
        for (name, value) in &node.attributes {
            attribute_violations(&format!("{}#{}", node.node_id, name), value, &mut out);
        }
    }

    let mut spec_links: BTreeMap<&str, usize> = BTreeMap::new();
    for edge in graph.edges() {
        let (src, dst) = match (graph.node(&edge.src), graph.node(&edge.dst)) {
            (Some(s), Some(d)) => (s, d),
            _ => {
                out.push(violation(ViolationCode::DanglingEdge, edge.id(), "edge endpoint is not a node of this graph"));
                continue;
            }
        };
        for (name, value) in &edge.attributes {
            attribute_violations(&format!("{}#{}", edge.id(), name), value, &mut out);
        }
        if edge.src == edge.dst && edge.label != EdgeLabel::FlowsTo {
            out.push(violation(ViolationCode::SelfLoop, edge.id(), "edge connects a node to itself"));
            continue;
        }
        match edge.label {
            EdgeLabel::HasSpec => {
                if src.kind.spec_counterpart() != Some(dst.kind) {
                    out.push(violation(
                        ViolationCode::HasSpecKinds,
                        edge.id(),
                        format!("has_spec from {} to {}", src.kind, dst.kind),
                    ));
                } else {
                    *spec_links.entry(src.node_id.as_str()).or_default() += 1;
                }
            }
            EdgeLabel::FlowsTo => {
                if !src.kind.is_flow() || !dst.kind.is_flow() {
                    out.push(violation(
                        ViolationCode::FlowsToKinds,
                        edge.id(),
                        format!("flows_to from {} to {}", src.kind, dst.kind),
                    ));
                }
            }
            EdgeLabel::Uses => {
                if src.kind != NodeKind::MeasurementRun || dst.kind != NodeKind::InstrumentRun {
                    out.push(violation(
                        ViolationCode::UsesKinds,
                        edge.id(),
                        format!("uses from {} to {}", src.kind, dst.kind),
                    ));
                }
            }
            EdgeLabel::RoleIn => {
                let src_ok = matches!(src.kind, NodeKind::Person | NodeKind::Organization);
                let dst_ok = matches!(dst.kind, NodeKind::Project | NodeKind::ProcessRun);
                if !src_ok || !dst_ok {
                    out.push(violation(
                        ViolationCode::RoleInKinds,
                        edge.id(),
                        format!("role_in from {} to {}", src.kind, dst.kind),
                    ));
                }
                if !edge.attributes.contains_key("role") {
                    out.push(violation(ViolationCode::MissingRole, edge.id(), "role_in edge lacks a role attribute"));
                }
            }
            EdgeLabel::PartOf => {}
        }
    }

    for node in graph.nodes() {
        if node.kind.spec_counterpart().is_none() {
            continue;
        }
        match spec_links.get(node.node_id.as_str()).copied().unwrap_or(0) {
            0 => out.push(violation(
                ViolationCode::MissingSpec,
                node.node_id.clone(),
                format!("{} has no has_spec edge", node.kind),
            )),
            1 => {}
            n => out.push(violation(
                ViolationCode::MultipleSpec,
                node.node_id.clone(),
                format!("{} has {n} has_spec edges", node.kind),
            )),
        }
    }

    for edge in cyclic_flow_edges(graph) {
        out.push(violation(ViolationCode::FlowCycle, edge.id(), "flows_to edge lies on a cycle"));
    }

    ValidationReport::from_violations(out)
}

/// flows_to edges whose endpoints lie in the same strongly connected
/// component (self-loops included).
fn cyclic_flow_edges(graph: &GemdGraph) -> Vec<&GemdEdge> {
    let ids: Vec<&str> = graph.nodes().map(|n| n.node_id.as_str()).collect();
    let index: BTreeMap<&str, usize> = ids.iter().enumerate().map(|(i, id)| (*id, i)).collect();
    let mut succ: Vec<Vec<usize>> = alloc::vec![Vec::new(); ids.len()];
    let mut flow_edges = Vec::new();
    for edge in graph.edges().iter().filter(|e| e.label == EdgeLabel::FlowsTo) {
        if let (Some(&s), Some(&d)) = (index.get(edge.src.as_str()), index.get(edge.dst.as_str())) {
            succ[s].push(d);
            flow_edges.push((s, d, edge));
        }
    }
    let comp = tarjan_scc(&succ);
    flow_edges
        .into_iter()
        .filter(|(s, d, _)| s == d || comp[*s] == comp[*d])
        .map(|(_, _, e)| e)
        .collect()
}

/// Iterative Tarjan; returns a component id per vertex.
fn tarjan_scc(succ: &[Vec<usize>]) -> Vec<usize> {
    const UNVISITED: usize = usize::MAX;
    let n = succ.len();
    let mut index = alloc::vec![UNVISITED; n];
    let mut low = alloc::vec![0usize; n];
    let mut on_stack = alloc::vec![false; n];
    let mut comp = alloc::vec![UNVISITED; n];
    let mut stack = Vec::new();
    let mut next_index = 0;
    let mut next_comp = 0;

    for start in 0..n {
        if index[start] != UNVISITED {
            continue;
        }
        let mut call: Vec<(usize, usize)> = alloc::vec![(start, 0)];
        index[start] = next_index;
        low[start] = next_index;
        next_index += 1;
        stack.push(start);
        on_stack[start] = true;
        while let Some(&mut (v, ref mut child)) = call.last_mut() {
            if *child < succ[v].len() {
                let w = succ[v][*child];
                *child += 1;
                if index[w] == UNVISITED {
                    index[w] = next_index;
                    low[w] = next_index;
                    next_index += 1;
                    stack.push(w);
                    on_stack[w] = true;
                    call.push((w, 0));
                } else if on_stack[w] {
                    low[v] = low[v].min(index[w]);
                }
            } else {
                call.pop();
                if let Some(&(parent, _)) = call.last() {
                    low[parent] = low[parent].min(low[v]);
                }
                if low[v] == index[v] {
                    while let Some(w) = stack.pop() {
                        on_stack[w] = false;
                        comp[w] = next_comp;
                        if w == v {
                            break;
                        }
                    }
                    next_comp += 1;
                }
            }
        }
    }
    comp
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum HistoryError {
    #[error("UNKNOWN_NODE: {0}")]
    UnknownNode(String),
}

/// Upstream closure of `node_id` along flows_to, plus the specs of the
/// included runs and the instruments they use. The result is the subgraph
/// induced by those nodes.
pub fn material_history(graph: &GemdGraph, node_id: &str) -> Result<GemdGraph, HistoryError> {
    if !graph.contains(node_id) {
        return Err(HistoryError::UnknownNode(node_id.to_string()));
    }
    let mut upstream: BTreeSet<&str> = BTreeSet::new();
    let mut queue = VecDeque::new();
    upstream.insert(node_id);
    queue.push_back(node_id);
    while let Some(current) = queue.pop_front() {
        for edge in graph.in_edges(current).filter(|e| e.label == EdgeLabel::FlowsTo) {
            if upstream.insert(edge.src.as_str()) {
                queue.push_back(edge.src.as_str());
            }
        }
    }

    let mut keep = upstream.clone();
    for id in &upstream {
        for edge in graph.out_edges(id) {
            if matches!(edge.label, EdgeLabel::HasSpec | EdgeLabel::Uses) && graph.contains(&edge.dst) {
                keep.insert(edge.dst.as_str());
            }
        }
    }

    let mut out = GemdGraph::new(graph.sample_id.clone());
    for id in &keep {
        if let Some(node) = graph.node(id) {
            out.insert_node(node.clone());
        }
    }
    for edge in graph.edges() {
        if keep.contains(edge.src.as_str()) && keep.contains(edge.dst.as_str()) {
            out.insert_edge(edge.clone());
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;

    fn run_with_spec(g: &mut GemdGraph, id: &str, kind: NodeKind, name: &str) {
        let spec_kind = kind.spec_counterpart().unwrap();
        let spec_id = format!("{id}-spec");
        g.insert_node(GemdNode::new(id, kind, name, g.sample_id.clone()));
        g.insert_node(GemdNode::new(spec_id.clone(), spec_kind, name, g.sample_id.clone()));
        g.insert_edge(GemdEdge::new(id, spec_id, EdgeLabel::HasSpec));
    }

    fn minimal() -> GemdGraph {
        let mut g = GemdGraph::new("s1");
        g.insert_node(GemdNode::new("s1", NodeKind::SampleRoot, "Sample 1", "s1"));
        g
    }

    #[test]
    fn kind_names_round_trip() {
        for kind in NodeKind::ALL {
            assert_eq!(kind.as_str().parse::<NodeKind>().unwrap(), kind);
        }
        assert!("sample".parse::<NodeKind>().is_err());
        assert_eq!(NodeKind::ALL.iter().filter(|k| k.is_run()).count(), 5);
        assert_eq!(NodeKind::ALL.iter().filter(|k| k.is_spec()).count(), 4);
        assert_eq!(NodeKind::InstrumentRun.spec_counterpart(), None);
    }

    #[test]
    fn minimal_root_only_graph_is_valid() {
        let report = validate_graph(&minimal());
        assert!(report.ok, "{report:?}");
        assert!(report.violations.is_empty());
    }

    #[test]
    fn empty_graph_lacks_root() {
        let report = validate_graph(&GemdGraph::new("s1"));
        assert_eq!(report.codes().into_iter().collect::<Vec<_>>(), [ViolationCode::RootCount]);
        assert!(validate_fragment(&GemdGraph::new("s1")).ok);
    }

    #[test]
    fn process_run_without_spec_is_flagged() {
        let mut g = minimal();
        g.insert_node(GemdNode::new("p1", NodeKind::ProcessRun, "Heating", "s1"));
        g.insert_edge(GemdEdge::new("p1", "s1", EdgeLabel::FlowsTo));
        let report = validate_graph(&g);
        assert!(!report.ok);
        assert_eq!(report.violations.len(), 1);
        assert_eq!(report.violations[0].code, ViolationCode::MissingSpec);
        assert_eq!(report.violations[0].target, "p1");
    }

    #[test]
    fn instrument_runs_need_no_spec() {
        let mut g = minimal();
        run_with_spec(&mut g, "m1", NodeKind::MeasurementRun, "XRD");
        g.insert_node(GemdNode::new("i1", NodeKind::InstrumentRun, "Diffractometer", "s1"));
        g.insert_edge(GemdEdge::new("m1", "i1", EdgeLabel::Uses));
        assert!(validate_graph(&g).ok);
    }

    #[test]
    fn edge_kind_rules() {
        let mut g = minimal();
        run_with_spec(&mut g, "m1", NodeKind::MeasurementRun, "XRD");
        run_with_spec(&mut g, "p1", NodeKind::ProcessRun, "Heating");
        g.insert_node(GemdNode::new("who", NodeKind::Person, "Ada", "s1"));
        // uses must point at an instrument
        g.insert_edge(GemdEdge::new("m1", "p1", EdgeLabel::Uses));
        // measurements do not take part in flow
        g.insert_edge(GemdEdge::new("m1", "s1", EdgeLabel::FlowsTo));
        // has_spec to the wrong spec kind
        g.insert_edge(GemdEdge::new("p1", "m1-spec", EdgeLabel::HasSpec));
        // role_in without a role attribute
        g.insert_edge(GemdEdge::new("who", "p1", EdgeLabel::RoleIn));
        let codes = validate_graph(&g).codes();
        for code in [
            ViolationCode::UsesKinds,
            ViolationCode::FlowsToKinds,
            ViolationCode::HasSpecKinds,
            ViolationCode::MissingRole,
        ] {
            assert!(codes.contains(&code), "missing {code}: {codes:?}");
        }
    }

    #[test]
    fn file_refs_only_on_measurement_dataset_report() {
        let mut g = minimal();
        run_with_spec(&mut g, "p1", NodeKind::ProcessRun, "Heating");
        let p = g.node("p1").unwrap().clone().with_file("a/b.csv");
        g.insert_node(p);
        let report = validate_graph(&g);
        assert_eq!(report.violations.len(), 1);
        assert_eq!(report.violations[0].code, ViolationCode::FileRefNotAllowed);
    }

    #[test]
    fn dangling_and_foreign_nodes() {
        let mut g = minimal();
        g.insert_edge(GemdEdge::new("ghost", "s1", EdgeLabel::FlowsTo));
        g.insert_node(GemdNode::new("x", NodeKind::Project, "Foundry", "other"));
        let codes = validate_graph(&g).codes();
        assert!(codes.contains(&ViolationCode::DanglingEdge));
        assert!(codes.contains(&ViolationCode::SampleMismatch));
    }

    #[test]
    fn root_must_carry_sample_id() {
        let mut g = GemdGraph::new("s1");
        g.insert_node(GemdNode::new("root", NodeKind::SampleRoot, "S", "s1"));
        assert!(validate_graph(&g).has(ViolationCode::RootId));
    }

    #[test]
    fn attribute_checks() {
        assert!(check_attribute(&AttributeValue::uniform_real("celsius", 450.5, 451.5)).ok);
        let bad = check_attribute(&AttributeValue::uniform_real("celsius", 451.5, 450.5));
        assert_eq!(bad.violations.len(), 1);
        assert_eq!(bad.violations[0].code, ViolationCode::BoundsOrder);
        assert!(check_attribute(&AttributeValue::Fraction {
            basis: FractionBasis::Mass,
            value: 0.3
        })
        .ok);
        assert!(check_attribute(&AttributeValue::Fraction {
            basis: FractionBasis::Volume,
            value: 1.5
        })
        .has(ViolationCode::FractionRange));
        assert!(check_attribute(&AttributeValue::Fraction {
            basis: FractionBasis::Absolute,
            value: 12.0
        })
        .ok);
        assert!(check_attribute(&AttributeValue::RealScalar {
            value: 1.0,
            units: String::new()
        })
        .has(ViolationCode::EmptyUnits));
        assert!(check_attribute(&AttributeValue::RealScalar {
            value: f64::NAN,
            units: "K".into()
        })
        .has(ViolationCode::NonFinite));
    }

    #[test]
    fn flow_cycle_flags_cycle_edges_only() {
        let mut g = minimal();
        for id in ["a", "b", "c", "d"] {
            run_with_spec(&mut g, id, NodeKind::ProcessRun, id);
        }
        g.insert_edge(GemdEdge::new("a", "b", EdgeLabel::FlowsTo));
        g.insert_edge(GemdEdge::new("b", "c", EdgeLabel::FlowsTo));
        g.insert_edge(GemdEdge::new("c", "d", EdgeLabel::FlowsTo));
        g.insert_edge(GemdEdge::new("d", "s1", EdgeLabel::FlowsTo));
        g.insert_edge(GemdEdge::new("c", "a", EdgeLabel::FlowsTo));
        let flagged: BTreeSet<String> = validate_graph(&g)
            .violations
            .into_iter()
            .filter(|v| v.code == ViolationCode::FlowCycle)
            .map(|v| v.target)
            .collect();
        let expected: BTreeSet<String> = ["a-[flows_to]->b", "b-[flows_to]->c", "c-[flows_to]->a"]
            .into_iter()
            .map(String::from)
            .collect();
        assert_eq!(flagged, expected);
    }

    #[test]
    fn history_of_source_is_node_plus_spec() {
        let g = fixtures::eus_graph();
        let h = material_history(&g, "eus-mat-sulfur").unwrap();
        let ids: Vec<&str> = h.nodes().map(|n| n.node_id.as_str()).collect();
        assert_eq!(ids, ["eus-mat-sulfur", "eus-mat-sulfur-spec"]);
        assert!(validate_fragment(&h).ok);
    }

    #[test]
    fn history_unknown_node() {
        assert_eq!(
            material_history(&minimal(), "nope"),
            Err(HistoryError::UnknownNode("nope".into()))
        );
    }

    #[test]
    fn eus_history_contains_all_heating_runs() {
        let g = fixtures::eus_graph();
        assert!(validate_graph(&g).ok, "{:?}", validate_graph(&g));
        let h = material_history(&g, fixtures::EUS_SAMPLE_ID).unwrap();
        let heating: BTreeSet<&str> = h
            .nodes()
            .filter(|n| n.kind == NodeKind::ProcessRun && n.name.contains("Heating"))
            .map(|n| n.name.as_str())
            .collect();
        assert_eq!(heating.len(), 6);
    }
}
