//! Canonical GEMD JSON.
//!
//! ```json
//! {
//!   "sample_id": "eus",
//!   "nodes": [{"node_id": "...", "kind": "process_run", "name": "...",
//!              "attributes": {...}, "tags": [], "file_ref": "..."}],
//!   "edges": [{"src": "...", "dst": "...", "label": "flows_to"}]
//! }
//! ```
//!
//! Nodes are written in id order and edges in `(src, dst, label)` order. A
//! node's `sample_id` is written only when it differs from the document's.

use std::collections::{BTreeMap, BTreeSet};

use qdh_core::gemd::Attributes;
use qdh_core::{EdgeLabel, GemdEdge, GemdGraph, GemdNode, NodeKind};
use serde::{Deserialize, Serialize};

use super::CodecError;

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct GraphDoc {
    sample_id: String,
    nodes: Vec<NodeDoc>,
    edges: Vec<EdgeDoc>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub(crate) struct NodeDoc {
    pub node_id: String,
    pub kind: String,
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sample_id: Option<String>,
    #[serde(default)]
    pub attributes: Attributes,
    #[serde(default)]
    pub tags: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub file_ref: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ontology_ref: Option<String>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct EdgeDoc {
    src: String,
    dst: String,
    label: String,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    attributes: Attributes,
}

pub(crate) fn node_to_doc(node: &GemdNode, sample_id: &str) -> NodeDoc {
    NodeDoc {
        node_id: node.node_id.clone(),
        kind: node.kind.as_str().to_string(),
        name: node.name.clone(),
        sample_id: (node.sample_id != sample_id).then(|| node.sample_id.clone()),
        attributes: node.attributes.clone(),
        tags: node.tags.clone(),
        file_ref: node.file_ref.clone(),
        ontology_ref: node.ontology_ref.clone(),
    }
}

pub(crate) fn node_from_doc(doc: NodeDoc, sample_id: &str, location: &str) -> Result<GemdNode, CodecError> {
    let kind: NodeKind = doc.kind.parse().map_err(|_| CodecError::UnknownKind {
        location: location.to_string(),
        kind: doc.kind.clone(),
    })?;
    Ok(GemdNode {
        node_id: doc.node_id,
        kind,
        name: doc.name,
        sample_id: doc.sample_id.unwrap_or_else(|| sample_id.to_string()),
        attributes: doc.attributes,
        tags: doc.tags,
        file_ref: doc.file_ref,
        ontology_ref: doc.ontology_ref,
    })
}

pub(crate) fn parse_label(label: &str, location: &str) -> Result<EdgeLabel, CodecError> {
    label
        .parse()
        .map_err(|e| CodecError::malformed(location, e))
}

/// Adds `edge` after checking both endpoints exist.
pub(crate) fn attach_edge(graph: &mut GemdGraph, edge: GemdEdge) -> Result<(), CodecError> {
    if !graph.contains(&edge.src) || !graph.contains(&edge.dst) {
        return Err(CodecError::DanglingEdge { edge: edge.id() });
    }
    graph.insert_edge(edge);
    Ok(())
}

fn serde_location(e: &serde_json::Error) -> String {
    format!("line {} column {}", e.line(), e.column())
}

pub fn parse_gemd_json(text: &str) -> Result<GemdGraph, CodecError> {
    let doc: GraphDoc = serde_json::from_str(text).map_err(|e| CodecError::malformed(serde_location(&e), e))?;
    let mut graph = GemdGraph::new(doc.sample_id.clone());
    let mut seen = BTreeSet::new();
    for (i, n) in doc.nodes.into_iter().enumerate() {
        if !seen.insert(n.node_id.clone()) {
            return Err(CodecError::DuplicateNodeId(n.node_id));
        }
        graph.insert_node(node_from_doc(n, &doc.sample_id, &format!("nodes[{i}].kind"))?);
    }
    for (i, e) in doc.edges.into_iter().enumerate() {
        let label = parse_label(&e.label, &format!("edges[{i}].label"))?;
        let mut edge = GemdEdge::new(e.src, e.dst, label);
        edge.attributes = e.attributes;
        attach_edge(&mut graph, edge)?;
    }
    Ok(graph)
}

/// Canonical serialization, pretty-printed with a trailing newline.
pub fn to_gemd_json(graph: &GemdGraph) -> String {
    let doc = GraphDoc {
        sample_id: graph.sample_id.clone(),
        nodes: graph.nodes().map(|n| node_to_doc(n, &graph.sample_id)).collect(),
        edges: graph
            .edges()
            .iter()
            .map(|e| EdgeDoc {
                src: e.src.clone(),
                dst: e.dst.clone(),
                label: e.label.as_str().to_string(),
                attributes: e.attributes.clone(),
            })
            .collect(),
    };
    let mut out = serde_json::to_string_pretty(&doc).expect("graph documents always serialize");
    out.push('\n');
    out
}
