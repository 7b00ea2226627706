//! Procedure-editor support: the node palette, graphML validation and the
//! submission path.

use qdh_core::gemd::{validate_graph, AttributeValue, FractionBasis};
use qdh_core::{EdgeLabel, GemdGraph, NodeKind};
use serde::{Deserialize, Serialize};

use crate::codec::graphml::parse_graphml;

/// A violation as sent to editors. Codec failures appear here too, with the
/// codec's error code.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProcedureViolation {
    pub code: String,
    pub target: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProcedureReport {
    pub ok: bool,
    pub violations: Vec<ProcedureViolation>,
}

/// Parses and validates an editor export. Malformed input becomes a
/// violation rather than an error.
pub fn validate_procedure(graphml: &str) -> (Option<GemdGraph>, ProcedureReport) {
    match parse_graphml(graphml) {
        Err(e) => (
            None,
            ProcedureReport {
                ok: false,
                violations: vec![ProcedureViolation {
                    code: e.code().to_string(),
                    target: "document".into(),
                    message: e.to_string(),
                }],
            },
        ),
        Ok(graph) => {
            let report = validate_graph(&graph);
            let violations = report
                .violations
                .into_iter()
                .map(|v| ProcedureViolation {
                    code: v.code.as_str().to_string(),
                    target: v.target,
                    message: v.message,
                })
                .collect();
            (
                Some(graph),
                ProcedureReport {
                    ok: report.ok,
                    violations,
                },
            )
        }
    }
}

/// Sample metadata entered next to the canvas.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampleMetadata {
    #[serde(default)]
    pub name: Option<String>,
    #[serde(default)]
    pub project_id: Option<String>,
    #[serde(default)]
    pub description: Option<String>,
    #[serde(default)]
    pub status: Option<String>,
}

/// Copies metadata onto the sample root.
pub fn apply_metadata(graph: &mut GemdGraph, meta: &SampleMetadata) {
    let Some(root_id) = graph.root().map(|r| r.node_id.clone()) else {
        return;
    };
    let mut root = graph.node(&root_id).expect("root exists").clone();
    if let Some(name) = &meta.name {
        root.name = name.clone();
    }
    for (key, value) in [("project_id", &meta.project_id), ("description", &meta.description), ("status", &meta.status)] {
        if let Some(v) = value {
            root.attributes.insert(key.to_string(), AttributeValue::text(v.clone()));
        }
    }
    graph.insert_node(root);
}

#[derive(Debug, Clone, Serialize)]
pub struct KindEntry {
    pub kind: &'static str,
    pub mode: &'static str,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub spec: Option<&'static str>,
    pub allows_file_ref: bool,
    pub in_material_flow: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct EdgeEntry {
    pub label: &'static str,
    pub from: Vec<&'static str>,
    pub to: Vec<&'static str>,
}

#[derive(Debug, Clone, Serialize)]
pub struct TemplateNode {
    pub kind: &'static str,
    pub name: &'static str,
    pub attributes: Vec<(&'static str, AttributeValue)>,
}

#[derive(Debug, Clone, Serialize)]
pub struct Template {
    pub name: &'static str,
    pub description: &'static str,
    /// The run node first, then its spec.
    pub nodes: Vec<TemplateNode>,
}

#[derive(Debug, Clone, Serialize)]
pub struct Library {
    pub node_kinds: Vec<KindEntry>,
    pub edge_labels: Vec<EdgeEntry>,
    pub attribute_types: Vec<&'static str>,
    pub templates: Vec<Template>,
}

fn kinds(pred: impl Fn(NodeKind) -> bool) -> Vec<&'static str> {
    NodeKind::ALL.iter().copied().filter(|k| pred(*k)).map(NodeKind::as_str).collect()
}

fn paired(kind: NodeKind, name: &'static str, attributes: Vec<(&'static str, AttributeValue)>) -> Vec<TemplateNode> {
    let mut out = vec![TemplateNode { kind: kind.as_str(), name, attributes }];
    if let Some(spec) = kind.spec_counterpart() {
        out.push(TemplateNode {
            kind: spec.as_str(),
            name,
            attributes: Vec::new(),
        });
    }
    out
}

pub fn library() -> Library {
    let node_kinds = NodeKind::ALL
        .iter()
        .map(|k| KindEntry {
            kind: k.as_str(),
            mode: if k.is_run() {
                "run"
            } else if k.is_spec() {
                "spec"
            } else {
                "entity"
            },
            spec: k.spec_counterpart().map(NodeKind::as_str),
            allows_file_ref: k.allows_file_ref(),
            in_material_flow: k.is_flow(),
        })
        .collect();
    let edge_labels = vec![
        EdgeEntry {
            label: EdgeLabel::HasSpec.as_str(),
            from: kinds(|k| k.spec_counterpart().is_some()),
            to: kinds(NodeKind::is_spec),
        },
        EdgeEntry {
            label: EdgeLabel::FlowsTo.as_str(),
            from: kinds(NodeKind::is_flow),
            to: kinds(NodeKind::is_flow),
        },
        EdgeEntry {
            label: EdgeLabel::Uses.as_str(),
            from: vec![NodeKind::MeasurementRun.as_str()],
            to: vec![NodeKind::InstrumentRun.as_str()],
        },
        EdgeEntry {
            label: EdgeLabel::RoleIn.as_str(),
            from: vec![NodeKind::Person.as_str(), NodeKind::Organization.as_str()],
            to: vec![NodeKind::Project.as_str(), NodeKind::ProcessRun.as_str()],
        },
        EdgeEntry {
            label: EdgeLabel::PartOf.as_str(),
            from: NodeKind::ALL.iter().map(|k| k.as_str()).collect(),
            to: NodeKind::ALL.iter().map(|k| k.as_str()).collect(),
        },
    ];
    let templates = vec![
        Template {
            name: "Heating",
            description: "Furnace step with a temperature window",
            nodes: paired(
                NodeKind::ProcessRun,
                "Heating",
                vec![("temperature", AttributeValue::uniform_real("celsius", 450.5, 451.5))],
            ),
        },
        Template {
            name: "Quenching",
            description: "Rapid cooling step",
            nodes: paired(NodeKind::ProcessRun, "Quenching", vec![("medium", AttributeValue::categorical("water"))]),
        },
        Template {
            name: "Grinding",
            description: "Mechanical grinding of a precursor",
            nodes: paired(NodeKind::ProcessRun, "Grinding", Vec::new()),
        },
        Template {
            name: "Ingredient by mass fraction",
            description: "Portion of a material entering a process",
            nodes: paired(
                NodeKind::IngredientRun,
                "Ingredient",
                vec![(
                    "fraction",
                    AttributeValue::Fraction {
                        basis: FractionBasis::Mass,
                        value: 0.3,
                    },
                )],
            ),
        },
        Template {
            name: "XRD measurement",
            description: "Powder diffraction run; attach the pattern file",
            nodes: paired(NodeKind::MeasurementRun, "XRD pattern", vec![("characterization", AttributeValue::categorical("XRD"))]),
        },
        Template {
            name: "Instrument",
            description: "Shared instrument record (run only)",
            nodes: paired(NodeKind::InstrumentRun, "Instrument", Vec::new()),
        },
    ];
    Library {
        node_kinds,
        edge_labels,
        attribute_types: vec!["real_scalar", "uniform_real", "integer", "categorical", "text", "fraction"],
        templates,
    }
}
