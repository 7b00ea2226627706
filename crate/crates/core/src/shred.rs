//! Projection of a sample graph onto catalog rows.
//!
//! Gaps in the graph become warnings rather than invented values. The only
//! defaults are the ingesting principal as owner, the ingest time as date,
//! and `unknown` as status.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::gemd::{AttributeValue, EdgeLabel, GemdGraph, GemdNode, NodeKind};
use crate::tabular::{
    is_timestamp, InstrumentRow, MaterialPropRow, MaterialRow, MeasurementRow, Row, SampleRow, INSTRUMENTS, MATERIALS,
    MATERIAL_PROP, MEASUREMENTS, SAMPLES,
};

/// Attributes of a material run that map to `materials` columns rather than
/// property rows.
const MATERIAL_COLUMNS: [&str; 3] = ["supplier", "form", "description"];
const INSTRUMENT_COLUMNS: [&str; 5] = ["instr_id", "type", "make", "model", "specification"];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ShredDefaults {
    pub owner: String,
    pub now: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ShreddedRows {
    pub samples: Vec<SampleRow>,
    pub materials: Vec<MaterialRow>,
    pub material_props: Vec<MaterialPropRow>,
    pub measurements: Vec<MeasurementRow>,
    pub instruments: Vec<InstrumentRow>,
}

impl ShreddedRows {
    /// `(table, row)` pairs in foreign-key order: materials, properties,
    /// instruments, samples, measurements.
    pub fn in_insert_order(&self) -> Vec<(&'static str, Row)> {
        let mut out = Vec::new();
        out.extend(self.materials.iter().map(|r| (MATERIALS, r.to_row())));
        out.extend(self.material_props.iter().map(|r| (MATERIAL_PROP, r.to_row())));
        out.extend(self.instruments.iter().map(|r| (INSTRUMENTS, r.to_row())));
        out.extend(self.samples.iter().map(|r| (SAMPLES, r.to_row())));
        out.extend(self.measurements.iter().map(|r| (MEASUREMENTS, r.to_row())));
        out
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ShredReport {
    pub counts: BTreeMap<String, usize>,
    pub warnings: Vec<String>,
}

/// Identity of an instrument row: the `instr_id` attribute when present,
/// else a digest of type, make and model.
pub fn instrument_id(node: &GemdNode) -> String {
    if let Some(id) = node.attributes.get("instr_id") {
        return id.render();
    }
    let part = |k: &str| node.attributes.get(k).map(AttributeValue::render).unwrap_or_default();
    let mut h = Sha256::new();
    h.update(part("type").as_bytes());
    h.update([0]);
    h.update(part("make").as_bytes());
    h.update([0]);
    h.update(part("model").as_bytes());
    let digest = hex::encode(h.finalize());
    format!("instr-{}", &digest[..16])
}

fn attr(node: &GemdNode, name: &str) -> Option<String> {
    node.attributes.get(name).map(AttributeValue::render)
}

fn file_type(path: &str) -> String {
    let base = path.rsplit('/').next().unwrap_or(path);
    match base.rsplit_once('.') {
        Some((stem, ext)) if !stem.is_empty() => ext.to_string(),
        _ => String::new(),
    }
}

/// Expects a graph that passed validation; missing pieces produce warnings.
pub fn shred(graph: &GemdGraph, defaults: &ShredDefaults) -> (ShreddedRows, ShredReport) {
    let mut rows = ShreddedRows::default();
    let mut warnings = Vec::new();
    let sample_id = graph.sample_id.clone();
    let root = graph.root();

    let root_attr = |name: &str| root.and_then(|r| attr(r, name)).filter(|v| !v.is_empty());
    let owner = root_attr("owner").unwrap_or_else(|| {
        warnings.push(format!("MISSING_OWNER: defaulted to {}", defaults.owner));
        defaults.owner.clone()
    });
    let date = match root_attr("date") {
        Some(d) if is_timestamp(&d) => d,
        Some(d) => {
            warnings.push(format!("BAD_DATE: {d:?} replaced by ingest time {}", defaults.now));
            defaults.now.clone()
        }
        None => {
            warnings.push(format!("MISSING_DATE: defaulted to ingest time {}", defaults.now));
            defaults.now.clone()
        }
    };
    let project_id = root_attr("project_id").unwrap_or_else(|| {
        warnings.push("MISSING_PROJECT: project_id left empty".to_string());
        String::new()
    });

    let mut end_candidates: Vec<&str> = match root {
        Some(r) => graph
            .in_edges(&r.node_id)
            .filter(|e| e.label == EdgeLabel::FlowsTo)
            .filter(|e| graph.node(&e.src).is_some_and(|n| n.kind == NodeKind::MaterialRun))
            .map(|e| e.src.as_str())
            .collect(),
        None => Vec::new(),
    };
    end_candidates.sort_unstable();
    end_candidates.dedup();
    let end_material = match end_candidates.as_slice() {
        [] => {
            warnings.push("NO_END_MATERIAL: no material_run flows into the sample root".to_string());
            None
        }
        [one] => Some((*one).to_string()),
        [first, ..] => {
            warnings.push(format!(
                "MULTIPLE_END_MATERIALS: {} flow into the root; using {first}",
                end_candidates.join(", ")
            ));
            Some((*first).to_string())
        }
    };

    let start_material_ids: Vec<String> = graph
        .nodes()
        .filter(|n| n.kind == NodeKind::MaterialRun)
        .filter(|n| !graph.in_edges(&n.node_id).any(|e| e.label == EdgeLabel::FlowsTo))
        .map(|n| n.node_id.clone())
        .collect();

    rows.samples.push(SampleRow {
        sample_id: sample_id.clone(),
        name: root.map(|r| r.name.clone()).unwrap_or_default(),
        project_id,
        owner: owner.clone(),
        date: date.clone(),
        start_material_ids,
        end_material_id: end_material.clone(),
        description: root_attr("description").unwrap_or_default(),
        status: root_attr("status").unwrap_or_else(|| "unknown".to_string()),
    });

    for node in graph.nodes().filter(|n| n.kind == NodeKind::MaterialRun) {
        rows.materials.push(MaterialRow {
            mat_id: node.node_id.clone(),
            name: node.name.clone(),
            supplier: attr(node, "supplier").unwrap_or_default(),
            form: attr(node, "form").unwrap_or_default(),
            description: attr(node, "description").unwrap_or_default(),
        });
        for (name, value) in &node.attributes {
            if MATERIAL_COLUMNS.contains(&name.as_str()) {
                continue;
            }
            rows.material_props.push(MaterialPropRow {
                mat_id: node.node_id.clone(),
                property_name: name.clone(),
                property_value: value.render(),
            });
        }
    }

    let mut instruments: BTreeMap<String, InstrumentRow> = BTreeMap::new();
    let mut instrument_of_node: BTreeMap<&str, String> = BTreeMap::new();
    for node in graph.nodes().filter(|n| n.kind == NodeKind::InstrumentRun) {
        let id = instrument_id(node);
        instrument_of_node.insert(&node.node_id, id.clone());
        let specification = attr(node, "specification").unwrap_or_else(|| {
            node.attributes
                .iter()
                .filter(|(k, _)| !INSTRUMENT_COLUMNS.contains(&k.as_str()))
                .map(|(k, v)| format!("{k}={}", v.render()))
                .collect::<Vec<_>>()
                .join("; ")
        });
        instruments.entry(id.clone()).or_insert(InstrumentRow {
            instr_id: id,
            kind: attr(node, "type").unwrap_or_default(),
            make: attr(node, "make").unwrap_or_default(),
            model: attr(node, "model").unwrap_or_default(),
            specification,
        });
    }
    rows.instruments = instruments.into_values().collect();

    for node in graph.nodes().filter(|n| n.kind == NodeKind::MeasurementRun) {
        let Some(path) = &node.file_ref else { continue };
        let instr = graph
            .out_edges(&node.node_id)
            .filter(|e| e.label == EdgeLabel::Uses)
            .find_map(|e| instrument_of_node.get(e.dst.as_str()));
        let Some(instr_id) = instr else {
            warnings.push(format!("NO_INSTRUMENT: measurement {} has no uses edge; row skipped", node.node_id));
            continue;
        };
        let Some(material_id) = &end_material else {
            warnings.push(format!("NO_END_MATERIAL: measurement {} row skipped", node.node_id));
            continue;
        };
        let measured: BTreeSet<&str> = graph
            .out_edges(&node.node_id)
            .filter(|e| e.label == EdgeLabel::PartOf)
            .map(|e| e.dst.as_str())
            .collect();
        if !measured.is_empty() && !measured.contains(material_id.as_str()) {
            warnings.push(format!(
                "NON_END_MATERIAL: measurement {} is part of {}, recorded against end material {material_id}",
                node.node_id,
                measured.into_iter().collect::<Vec<_>>().join(", ")
            ));
        }
        rows.measurements.push(MeasurementRow {
            measurement_id: node.node_id.clone(),
            sample_id: sample_id.clone(),
            material_id: material_id.clone(),
            instr_id: instr_id.clone(),
            measure_date: attr(node, "date").filter(|d| is_timestamp(d)).unwrap_or_else(|| date.clone()),
            measure_owner: attr(node, "owner").unwrap_or_else(|| owner.clone()),
            measure_type: attr(node, "characterization").unwrap_or_else(|| node.name.clone()),
            description: node.name.clone(),
            file_type: file_type(path),
            file_location_path: path.clone(),
        });
    }

    let mut counts = BTreeMap::new();
    counts.insert(SAMPLES.to_string(), rows.samples.len());
    counts.insert(MATERIALS.to_string(), rows.materials.len());
    counts.insert(MATERIAL_PROP.to_string(), rows.material_props.len());
    counts.insert(MEASUREMENTS.to_string(), rows.measurements.len());
    counts.insert(INSTRUMENTS.to_string(), rows.instruments.len());
    (rows, ShredReport { counts, warnings })
}
