//! The graphML subset exchanged with procedure editors.
//!
//! Fixed keys `kind`, `name`, `sample_id`, `tags`, `file_ref`,
//! `ontology_ref` (nodes) and `label` (edges). Every GEMD attribute travels
//! in its own key named `attr:<name>` whose value is the attribute's JSON
//! form. The single `graph` element's id is the sample id. Keys the codec
//! does not know (canvas layout and the like) are ignored.

use std::borrow::Cow;
use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use quick_xml::escape::escape;
use quick_xml::events::{BytesStart, Event};
use quick_xml::{Reader, XmlVersion};
use qdh_core::gemd::{AttributeValue, Attributes};
use qdh_core::{GemdEdge, GemdGraph, GemdNode, NodeKind};

use super::json::{attach_edge, parse_label};
use super::CodecError;

const NAMESPACE: &str = "http://graphml.graphdrawing.org/xmlns";
const ATTR_PREFIX: &str = "attr:";
const NODE_KEYS: [&str; 6] = ["kind", "name", "sample_id", "tags", "file_ref", "ontology_ref"];

pub fn to_graphml(graph: &GemdGraph) -> String {
    let mut attr_keys = BTreeSet::new();
    for n in graph.nodes() {
        attr_keys.extend(n.attributes.keys().cloned());
    }
    for e in graph.edges() {
        attr_keys.extend(e.attributes.keys().cloned());
    }

    let mut out = String::new();
    out.push_str("<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n");
    let _ = writeln!(out, "<graphml xmlns=\"{NAMESPACE}\">");
    for key in NODE_KEYS {
        let target = if key == "sample_id" { "all" } else { "node" };
        let _ = writeln!(out, "  <key id=\"{key}\" for=\"{target}\" attr.name=\"{key}\" attr.type=\"string\"/>");
    }
    out.push_str("  <key id=\"label\" for=\"edge\" attr.name=\"label\" attr.type=\"string\"/>\n");
    for key in &attr_keys {
        let id = escape(format!("{ATTR_PREFIX}{key}")).into_owned();
        let _ = writeln!(out, "  <key id=\"{id}\" for=\"all\" attr.name=\"{id}\" attr.type=\"string\"/>");
    }
    let _ = writeln!(out, "  <graph id=\"{}\" edgedefault=\"directed\">", escape(&graph.sample_id));
    data(&mut out, 4, "sample_id", &graph.sample_id);
    for n in graph.nodes() {
        let _ = writeln!(out, "    <node id=\"{}\">", escape(&n.node_id));
        data(&mut out, 6, "kind", n.kind.as_str());
        data(&mut out, 6, "name", &n.name);
        if n.sample_id != graph.sample_id {
            data(&mut out, 6, "sample_id", &n.sample_id);
        }
        if !n.tags.is_empty() {
            data(&mut out, 6, "tags", &serde_json::to_string(&n.tags).expect("tags serialize"));
        }
        if let Some(f) = &n.file_ref {
            data(&mut out, 6, "file_ref", f);
        }
        if let Some(o) = &n.ontology_ref {
            data(&mut out, 6, "ontology_ref", o);
        }
        attributes(&mut out, &n.attributes);
        out.push_str("    </node>\n");
    }
    for e in graph.edges() {
        let _ = writeln!(out, "    <edge source=\"{}\" target=\"{}\">", escape(&e.src), escape(&e.dst));
        data(&mut out, 6, "label", e.label.as_str());
        attributes(&mut out, &e.attributes);
        out.push_str("    </edge>\n");
    }
    out.push_str("  </graph>\n</graphml>\n");
    out
}

fn data(out: &mut String, indent: usize, key: &str, value: &str) {
    let _ = writeln!(
        out,
        "{:indent$}<data key=\"{}\">{}</data>",
        "",
        escape(key),
        escape(value),
        indent = indent
    );
}

fn attributes(out: &mut String, attrs: &Attributes) {
    for (name, value) in attrs {
        let json = serde_json::to_string(value).expect("attribute values serialize");
        data(out, 6, &format!("{ATTR_PREFIX}{name}"), &json);
    }
}

#[derive(Default)]
struct Element {
    id: Option<String>,
    source: Option<String>,
    target: Option<String>,
    /// key name -> text
    data: Vec<(String, String)>,
    offset: u64,
}

impl Element {
    fn get(&self, key: &str) -> Option<&str> {
        self.data.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }
}

enum Open {
    Node(Element),
    Edge(Element),
}

fn attr(e: &BytesStart<'_>, name: &str, offset: u64) -> Result<Option<String>, CodecError> {
    for a in e.attributes() {
        let a = a.map_err(|err| CodecError::malformed(format!("byte {offset}"), err))?;
        if a.key.as_ref() == name {
            let v = a
                .normalized_value(XmlVersion::Implicit1_0)
                .map_err(|err| CodecError::malformed(format!("byte {offset}"), err))?;
            return Ok(Some(v.into_owned()));
        }
    }
    Ok(None)
}

fn predefined_entity(name: &str) -> Option<&'static str> {
    Some(match name {
        "lt" => "<",
        "gt" => ">",
        "amp" => "&",
        "apos" => "'",
        "quot" => "\"",
        _ => return None,
    })
}

pub fn parse_graphml(text: &str) -> Result<GemdGraph, CodecError> {
    let mut reader = Reader::from_str(text);
    let mut keys: BTreeMap<String, String> = BTreeMap::new();
    let mut graph_id: Option<String> = None;
    let mut graph_data: Vec<(String, String)> = Vec::new();
    let mut graphs = 0usize;
    let mut saw_root = false;
    let mut open: Option<Open> = None;
    // (key name, accumulated text)
    let mut in_data: Option<(String, String)> = None;
    let mut nodes: Vec<Element> = Vec::new();
    let mut edges: Vec<Element> = Vec::new();

    loop {
        let offset = reader.buffer_position();
        let at = || format!("byte {offset}");
        let event = reader.read_event().map_err(|e| CodecError::malformed(at(), e))?;
        match event {
            Event::Eof => break,
            Event::Start(e) | Event::Empty(e) if in_data.is_some() => {
                return Err(CodecError::malformed(at(), format!("unexpected <{}> inside data", e.name().as_ref())));
            }
            ev @ (Event::Start(_) | Event::Empty(_)) => {
                let empty = matches!(ev, Event::Empty(_));
                let (Event::Start(e) | Event::Empty(e)) = ev else { unreachable!() };
                match e.local_name().as_ref() {
                    "graphml" => saw_root = true,
                    "key" => {
                        let id = attr(&e, "id", offset)?.ok_or_else(|| CodecError::malformed(at(), "key without id"))?;
                        let name = attr(&e, "attr.name", offset)?.unwrap_or_else(|| id.clone());
                        keys.insert(id, name);
                    }
                    "graph" => {
                        graphs += 1;
                        if graphs > 1 {
                            return Err(CodecError::malformed(at(), "more than one graph element"));
                        }
                        graph_id = attr(&e, "id", offset)?;
                    }
                    "node" | "edge" => {
                        if open.is_some() {
                            return Err(CodecError::malformed(at(), "nested node or edge"));
                        }
                        let el = Element {
                            id: attr(&e, "id", offset)?,
                            source: attr(&e, "source", offset)?,
                            target: attr(&e, "target", offset)?,
                            data: Vec::new(),
                            offset,
                        };
                        let is_node = e.local_name().as_ref() == "node";
                        if empty {
                            if is_node { nodes.push(el) } else { edges.push(el) }
                        } else {
                            open = Some(if is_node { Open::Node(el) } else { Open::Edge(el) });
                        }
                    }
                    "data" => {
                        let id = attr(&e, "key", offset)?.ok_or_else(|| CodecError::malformed(at(), "data without key"))?;
                        let name = keys.get(&id).cloned().ok_or_else(|| CodecError::MissingKey { key: id.clone(), location: at() })?;
                        if empty {
                            push_data(&mut open, &mut graph_data, name, String::new());
                        } else {
                            in_data = Some((name, String::new()));
                        }
                    }
                    _ => {}
                }
            }
            Event::Text(t) => {
                if let Some((_, buf)) = &mut in_data {
                    buf.push_str(&t.xml_content(XmlVersion::Implicit1_0));
                }
            }
            Event::CData(c) => {
                if let Some((_, buf)) = &mut in_data {
                    buf.push_str(&c.into_inner());
                }
            }
            Event::GeneralRef(r) => {
                if let Some((_, buf)) = &mut in_data {
                    if let Some(ch) = r.resolve_char_ref().map_err(|e| CodecError::malformed(at(), e))? {
                        buf.push(ch);
                    } else {
                        let name: Cow<'_, str> = r.into_inner();
                        let rep = predefined_entity(&name).ok_or_else(|| CodecError::malformed(at(), format!("unknown entity &{name};")))?;
                        buf.push_str(rep);
                    }
                }
            }
            Event::End(e) => match e.local_name().as_ref() {
                "data" => {
                    if let Some((name, value)) = in_data.take() {
                        push_data(&mut open, &mut graph_data, name, value);
                    }
                }
                "node" => match open.take() {
                    Some(Open::Node(el)) => nodes.push(el),
                    _ => return Err(CodecError::malformed(at(), "unbalanced </node>")),
                },
                "edge" => match open.take() {
                    Some(Open::Edge(el)) => edges.push(el),
                    _ => return Err(CodecError::malformed(at(), "unbalanced </edge>")),
                },
                _ => {}
            },
            _ => {}
        }
    }
    if !saw_root {
        return Err(CodecError::malformed("document", "no graphml element"));
    }
    if graphs == 0 {
        return Err(CodecError::malformed("document", "no graph element"));
    }

    let sample_id = graph_data
        .iter()
        .find(|(k, _)| k == "sample_id")
        .map(|(_, v)| v.clone())
        .or(graph_id)
        .ok_or_else(|| CodecError::MissingKey {
            key: "sample_id".into(),
            location: "graph".into(),
        })?;

    let mut graph = GemdGraph::new(sample_id.clone());
    let mut seen = BTreeSet::new();
    for el in nodes {
        let location = format!("byte {}", el.offset);
        let id = el.id.clone().ok_or_else(|| CodecError::malformed(&location, "node without id"))?;
        if !seen.insert(id.clone()) {
            return Err(CodecError::DuplicateNodeId(id));
        }
        let kind_text = el.get("kind").ok_or_else(|| CodecError::MissingKey {
            key: "kind".into(),
            location: format!("node {id}"),
        })?;
        let kind: NodeKind = kind_text.parse().map_err(|_| CodecError::UnknownKind {
            location: format!("node {id}"),
            kind: kind_text.to_string(),
        })?;
        let mut node = GemdNode::new(id.clone(), kind, el.get("name").unwrap_or_default(), el.get("sample_id").unwrap_or(&sample_id));
        if let Some(tags) = el.get("tags") {
            node.tags = serde_json::from_str(tags).map_err(|e| CodecError::malformed(format!("node {id} tags"), e))?;
        }
        node.file_ref = el.get("file_ref").map(String::from);
        node.ontology_ref = el.get("ontology_ref").map(String::from);
        node.attributes = parse_attrs(&el, &format!("node {id}"))?;
        graph.insert_node(node);
    }
    for el in edges {
        let location = format!("byte {}", el.offset);
        let src = el.source.clone().ok_or_else(|| CodecError::malformed(&location, "edge without source"))?;
        let dst = el.target.clone().ok_or_else(|| CodecError::malformed(&location, "edge without target"))?;
        let label = el.get("label").ok_or_else(|| CodecError::MissingKey {
            key: "label".into(),
            location: format!("edge {src}->{dst}"),
        })?;
        let mut edge = GemdEdge::new(src.clone(), dst.clone(), parse_label(label, &location)?);
        edge.attributes = parse_attrs(&el, &format!("edge {src}->{dst}"))?;
        attach_edge(&mut graph, edge)?;
    }
    Ok(graph)
}

fn push_data(open: &mut Option<Open>, graph_data: &mut Vec<(String, String)>, name: String, value: String) {
    match open {
        Some(Open::Node(el)) | Some(Open::Edge(el)) => el.data.push((name, value)),
        None => graph_data.push((name, value)),
    }
}

fn parse_attrs(el: &Element, location: &str) -> Result<Attributes, CodecError> {
    let mut out = Attributes::new();
    for (k, v) in &el.data {
        if let Some(name) = k.strip_prefix(ATTR_PREFIX) {
            let value: AttributeValue = serde_json::from_str(v).map_err(|e| CodecError::malformed(format!("{location} {k}"), e))?;
            out.insert(name.to_string(), value);
        }
    }
    Ok(out)
}
