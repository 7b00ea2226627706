//! Directory-of-JSON encoding.
//!
//! Each node lives in its own top-level `<node_id>.json` file (characters
//! outside `[A-Za-z0-9._-]` percent-encoded) and lists its outgoing edges,
//! whose targets are `{"ref": "<relative path>"}` file references. Files
//! under `files/` are object-store content addressed by the rest of their
//! path. The same tree may arrive zipped, optionally under one top-level
//! folder.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{Cursor, Read, Write};
use std::path::Path;

use qdh_core::gemd::Attributes;
use qdh_core::{EdgeLabel, GemdEdge, GemdGraph, NodeKind};
use serde::{Deserialize, Serialize};

use super::json::{attach_edge, node_from_doc, node_to_doc, parse_label, NodeDoc};
use super::{CodecError, Decoded};

pub const FILES_DIR: &str = "files/";

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DirNode {
    node_id: String,
    kind: String,
    name: String,
    sample_id: String,
    #[serde(default)]
    attributes: Attributes,
    #[serde(default)]
    tags: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    file_ref: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    ontology_ref: Option<String>,
    #[serde(default)]
    edges: Vec<DirEdge>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DirEdge {
    label: String,
    dst: FileRef,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    attributes: Attributes,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileRef {
    #[serde(rename = "ref")]
    path: String,
}

/// File name for a node id.
pub fn node_file_name(node_id: &str) -> String {
    let mut out = String::new();
    for b in node_id.bytes() {
        if b.is_ascii_alphanumeric() || matches!(b, b'.' | b'_' | b'-') {
            out.push(b as char);
        } else {
            out.push_str(&format!("%{b:02X}"));
        }
    }
    out.push_str(".json");
    out
}

/// Explodes a graph (and its files) into directory entries, in path order.
pub fn to_entries(graph: &GemdGraph, files: &[(String, Vec<u8>)]) -> Vec<(String, Vec<u8>)> {
    let mut out: BTreeMap<String, Vec<u8>> = BTreeMap::new();
    for n in graph.nodes() {
        let doc = node_to_doc(n, "");
        let edges = graph
            .out_edges(&n.node_id)
            .map(|e| DirEdge {
                label: e.label.as_str().to_string(),
                dst: FileRef {
                    path: node_file_name(&e.dst),
                },
                attributes: e.attributes.clone(),
            })
            .collect();
        let node = DirNode {
            node_id: doc.node_id,
            kind: doc.kind,
            name: doc.name,
            sample_id: n.sample_id.clone(),
            attributes: doc.attributes,
            tags: doc.tags,
            file_ref: doc.file_ref,
            ontology_ref: doc.ontology_ref,
            edges,
        };
        let mut text = serde_json::to_string_pretty(&node).expect("node documents serialize");
        text.push('\n');
        out.insert(node_file_name(&n.node_id), text.into_bytes());
    }
    for (path, content) in files {
        out.insert(format!("{FILES_DIR}{path}"), content.clone());
    }
    out.into_iter().collect()
}

/// Normalizes a relative path; `None` if it escapes the root.
fn normalize(path: &str) -> Option<String> {
    let mut parts: Vec<&str> = Vec::new();
    for c in path.split(['/', '\\']) {
        match c {
            "" | "." => {}
            ".." => {
                parts.pop()?;
            }
            c => parts.push(c),
        }
    }
    Some(parts.join("/"))
}

/// Assembles a graph from directory entries given as relative paths.
pub fn assemble(entries: Vec<(String, Vec<u8>)>) -> Result<Decoded, CodecError> {
    let mut entries: Vec<(String, Vec<u8>)> = entries
        .into_iter()
        .filter_map(|(p, c)| normalize(&p).filter(|p| !p.is_empty()).map(|p| (p, c)))
        .collect();
    strip_common_folder(&mut entries);

    let mut docs: BTreeMap<String, DirNode> = BTreeMap::new();
    let mut files = Vec::new();
    for (path, content) in entries {
        if let Some(rel) = path.strip_prefix(FILES_DIR) {
            files.push((rel.to_string(), content));
        } else if !path.contains('/') && path.ends_with(".json") {
            let doc: DirNode = serde_json::from_slice(&content)
                .map_err(|e| CodecError::malformed(format!("{path} line {} column {}", e.line(), e.column()), e))?;
            docs.insert(path, doc);
        }
    }
    if docs.is_empty() {
        return Err(CodecError::malformed("directory", "no node documents"));
    }

    let sample_id = {
        let roots: Vec<&DirNode> = docs.values().filter(|d| d.kind == NodeKind::SampleRoot.as_str()).collect();
        match roots.as_slice() {
            [root] => root.sample_id.clone(),
            _ => docs.values().next().map(|d| d.sample_id.clone()).unwrap_or_default(),
        }
    };

    let mut ids: BTreeMap<String, String> = BTreeMap::new();
    let mut graph = GemdGraph::new(sample_id.clone());
    let mut pending = Vec::new();
    for (path, doc) in docs {
        if ids.values().any(|id| *id == doc.node_id) {
            return Err(CodecError::DuplicateNodeId(doc.node_id));
        }
        ids.insert(path.clone(), doc.node_id.clone());
        for (i, e) in doc.edges.into_iter().enumerate() {
            pending.push((path.clone(), doc.node_id.clone(), i, e));
        }
        let node = node_from_doc(
            NodeDoc {
                node_id: doc.node_id,
                kind: doc.kind,
                name: doc.name,
                sample_id: Some(doc.sample_id),
                attributes: doc.attributes,
                tags: doc.tags,
                file_ref: doc.file_ref,
                ontology_ref: doc.ontology_ref,
            },
            &sample_id,
            &format!("{path} kind"),
        )?;
        graph.insert_node(node);
    }

    let mut spec_links: BTreeMap<String, Vec<String>> = BTreeMap::new();
    for (path, src, i, e) in pending {
        let target = normalize(&e.dst.path)
            .and_then(|p| ids.get(&p).cloned())
            .ok_or_else(|| CodecError::BrokenReference {
                path: format!("{path}: edges[{i}] -> {}", e.dst.path),
            })?;
        let label = parse_label(&e.label, &format!("{path} edges[{i}].label"))?;
        if label == EdgeLabel::HasSpec {
            spec_links.entry(src.clone()).or_default().push(target.clone());
        }
        let mut edge = GemdEdge::new(src, target, label);
        edge.attributes = e.attributes;
        attach_edge(&mut graph, edge)?;
    }
    check_spec_cycles(&spec_links)?;
    Ok(Decoded { graph, files })
}

fn strip_common_folder(entries: &mut Vec<(String, Vec<u8>)>) {
    let has_top_level_json = entries.iter().any(|(p, _)| !p.contains('/') && p.ends_with(".json"));
    if has_top_level_json {
        return;
    }
    let firsts: BTreeSet<&str> = entries.iter().map(|(p, _)| p.split('/').next().unwrap_or("")).collect();
    if firsts.len() == 1 {
        let prefix = format!("{}/", firsts.into_iter().next().unwrap_or_default());
        for (p, _) in entries.iter_mut() {
            if let Some(rest) = p.strip_prefix(&prefix) {
                *p = rest.to_string();
            }
        }
        entries.retain(|(p, _)| !p.is_empty());
    }
}

/// Spec linkage must not loop back on itself.
fn check_spec_cycles(links: &BTreeMap<String, Vec<String>>) -> Result<(), CodecError> {
    for start in links.keys() {
        let mut stack: Vec<&String> = links[start].iter().collect();
        let mut seen = BTreeSet::new();
        while let Some(n) = stack.pop() {
            if n == start {
                return Err(CodecError::CyclicReference(start.clone()));
            }
            if seen.insert(n) {
                if let Some(next) = links.get(n) {
                    stack.extend(next);
                }
            }
        }
    }
    Ok(())
}

pub fn parse_json_directory(root: &Path) -> Result<Decoded, CodecError> {
    let mut entries = Vec::new();
    for entry in walkdir::WalkDir::new(root).sort_by_file_name() {
        let entry = entry.map_err(|e| CodecError::Io(e.to_string()))?;
        if !entry.file_type().is_file() {
            continue;
        }
        let rel = entry
            .path()
            .strip_prefix(root)
            .map_err(|e| CodecError::Io(e.to_string()))?
            .to_string_lossy()
            .replace('\\', "/");
        let content = std::fs::read(entry.path()).map_err(|e| CodecError::Io(format!("{rel}: {e}")))?;
        entries.push((rel, content));
    }
    assemble(entries)
}

pub fn write_json_directory(root: &Path, graph: &GemdGraph, files: &[(String, Vec<u8>)]) -> Result<(), CodecError> {
    for (rel, content) in to_entries(graph, files) {
        let path = root.join(&rel);
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent).map_err(|e| CodecError::Io(e.to_string()))?;
        }
        std::fs::write(&path, content).map_err(|e| CodecError::Io(format!("{rel}: {e}")))?;
    }
    Ok(())
}

pub fn parse_zip(bytes: &[u8]) -> Result<Decoded, CodecError> {
    let mut archive = zip::ZipArchive::new(Cursor::new(bytes)).map_err(|e| CodecError::malformed("zip", e))?;
    let mut entries = Vec::new();
    for i in 0..archive.len() {
        let mut file = archive.by_index(i).map_err(|e| CodecError::malformed(format!("zip entry {i}"), e))?;
        if file.is_dir() {
            continue;
        }
        let name = file
            .name()
            .map_err(|e| CodecError::malformed(format!("zip entry {i}"), e))?
            .to_string();
        let mut content = Vec::new();
        file.read_to_end(&mut content)
            .map_err(|e| CodecError::malformed(format!("zip entry {name}"), e))?;
        entries.push((name, content));
    }
    assemble(entries)
}

/// Zips directory entries deterministically (fixed timestamps, path order).
pub fn zip_entries(entries: &[(String, Vec<u8>)]) -> Vec<u8> {
    let mut sorted: Vec<&(String, Vec<u8>)> = entries.iter().collect();
    sorted.sort_by(|a, b| a.0.cmp(&b.0));
    let mut writer = zip::ZipWriter::new(Cursor::new(Vec::new()));
    let options = zip::write::SimpleFileOptions::default()
        .compression_method(zip::CompressionMethod::Deflated)
        .last_modified_time(zip::DateTime::default());
    for (name, content) in sorted {
        writer.start_file(name.as_str(), options).expect("in-memory zip");
        writer.write_all(content).expect("in-memory zip");
    }
    writer.finish().expect("in-memory zip").into_inner()
}

/// Zips a directory tree from disk.
pub fn zip_directory(root: &Path) -> Result<Vec<u8>, CodecError> {
    let mut entries = Vec::new();
    for entry in walkdir::WalkDir::new(root).sort_by_file_name() {
        let entry = entry.map_err(|e| CodecError::Io(e.to_string()))?;
        if entry.file_type().is_file() {
            let rel = entry
                .path()
                .strip_prefix(root)
                .map_err(|e| CodecError::Io(e.to_string()))?
                .to_string_lossy()
                .replace('\\', "/");
            let content = std::fs::read(entry.path()).map_err(|e| CodecError::Io(e.to_string()))?;
            entries.push((rel, content));
        }
    }
    Ok(zip_entries(&entries))
}
