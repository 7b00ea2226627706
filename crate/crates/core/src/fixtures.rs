//! Bundled sample graphs used by the test suites. The hub crate's
//! `fixtures/` directory holds the same data in each upload format.
//!
//! * `eus`: a europium-sulfide based synthesis with six heating steps.
//! * `fb-1` .. `fb-5`: a small collection where four samples heat before
//!   quenching and one (`fb-5`) quenches first.
//! * `ganb4se8`: a polycrystal synthesis as exported by a procedure editor.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use crate::gemd::{AttributeValue, EdgeLabel, FractionBasis, GemdEdge, GemdGraph, GemdNode, NodeKind};
use crate::objects::DictionaryEntry;

pub const EUS_SAMPLE_ID: &str = "eus";
pub const GANB4SE8_SAMPLE_ID: &str = "ganb4se8";

struct Builder {
    graph: GemdGraph,
}

impl Builder {
    fn new(sample_id: &str, name: &str, root_attrs: &[(&str, &str)]) -> Self {
        let mut graph = GemdGraph::new(sample_id);
        let mut root = GemdNode::new(sample_id, NodeKind::SampleRoot, name, sample_id);
        for (k, v) in root_attrs {
            root.attributes.insert((*k).to_string(), AttributeValue::text(*v));
        }
        graph.insert_node(root);
        Builder { graph }
    }

    fn sample(&self) -> String {
        self.graph.sample_id.clone()
    }

    /// Adds a run node together with its spec.
    fn run(&mut self, id: &str, kind: NodeKind, name: &str, attrs: &[(&str, AttributeValue)]) -> &mut Self {
        let spec_kind = kind.spec_counterpart().expect("run kind with a spec");
        let sample = self.sample();
        let mut node = GemdNode::new(id, kind, name, sample.clone());
        for (k, v) in attrs {
            node.attributes.insert((*k).to_string(), v.clone());
        }
        let spec_id = format!("{id}-spec");
        self.graph.insert_node(node);
        self.graph.insert_node(GemdNode::new(spec_id.clone(), spec_kind, name, sample));
        self.graph.insert_edge(GemdEdge::new(id, spec_id, EdgeLabel::HasSpec));
        self
    }

    fn material(&mut self, id: &str, name: &str, supplier: &str, form: &str) -> &mut Self {
        self.run(
            id,
            NodeKind::MaterialRun,
            name,
            &[
                ("supplier", AttributeValue::text(supplier)),
                ("form", AttributeValue::categorical(form)),
            ],
        )
    }

    fn ingredient(&mut self, id: &str, name: &str, mass_fraction: f64) -> &mut Self {
        self.run(
            id,
            NodeKind::IngredientRun,
            name,
            &[(
                "fraction",
                AttributeValue::Fraction {
                    basis: FractionBasis::Mass,
                    value: mass_fraction,
                },
            )],
        )
    }

    fn process(&mut self, id: &str, name: &str) -> &mut Self {
        self.run(id, NodeKind::ProcessRun, name, &[])
    }

    fn heat(&mut self, id: &str, name: &str, lower: f64, upper: f64) -> &mut Self {
        self.run(
            id,
            NodeKind::ProcessRun,
            name,
            &[("temperature", AttributeValue::uniform_real("celsius", lower, upper))],
        )
    }

    fn flow(&mut self, chain: &[&str]) -> &mut Self {
        for pair in chain.windows(2) {
            self.graph.insert_edge(GemdEdge::new(pair[0], pair[1], EdgeLabel::FlowsTo));
        }
        self
    }

    fn instrument(&mut self, id: &str, name: &str, kind: &str, make: &str, model: &str) -> &mut Self {
        let node = GemdNode::new(id, NodeKind::InstrumentRun, name, self.sample())
            .with_attr("type", AttributeValue::categorical(kind))
            .with_attr("make", AttributeValue::text(make))
            .with_attr("model", AttributeValue::text(model));
        self.graph.insert_node(node);
        self
    }

    fn measurement(&mut self, id: &str, name: &str, characterization: &str, file: Option<&str>, of: &str, instrument: Option<&str>) -> &mut Self {
        self.run(
            id,
            NodeKind::MeasurementRun,
            name,
            &[("characterization", AttributeValue::categorical(characterization))],
        );
        if let Some(path) = file {
            let node = self.graph.node(id).cloned().expect("just inserted").with_file(path);
            self.graph.insert_node(node);
        }
        self.graph.insert_edge(GemdEdge::new(id, of, EdgeLabel::PartOf));
        if let Some(inst) = instrument {
            self.graph.insert_edge(GemdEdge::new(id, inst, EdgeLabel::Uses));
        }
        self
    }

    fn finish(self) -> GemdGraph {
        self.graph
    }
}

/// The europium-sulfide synthesis used by the cross-store query example.
pub fn eus_graph() -> GemdGraph {
    let mut b = Builder::new(
        EUS_SAMPLE_ID,
        "Synthesized EuS",
        &[
            ("owner", "alice"),
            ("date", "2024-03-12T10:00:00Z"),
            ("project_id", "quantum-foundry"),
            ("description", "EuS precursor route to EuNb2Se4 single crystals"),
            ("status", "complete"),
        ],
    );
    b.material("eus-mat-europium", "Europium chunks", "Ames Laboratory", "chunk")
        .material("eus-mat-sulfur", "Sulfur powder", "Alfa Aesar", "powder")
        .material("eus-mat-selenium", "Selenium shot", "Alfa Aesar", "shot")
        .material("eus-mat-niobium", "Niobium powder", "Sigma-Aldrich", "powder")
        .material("eus-mat-chunked-eu", "Chunked Europium", "in-house", "chunk")
        .material("eus-mat-ground-s", "Ground Purified Sulfur", "in-house", "powder")
        .material("eus-mat-eus", "EuS powder", "in-house", "powder")
        .material("eus-mat-se", "Purified Selenium", "in-house", "shot")
        .material("eus-mat-nbse-mix", "Ground NbSe2 Mixture", "in-house", "powder")
        .material("eus-mat-nbse2", "NbSe2", "in-house", "powder")
        .material("eus-mat-final", "EuNb2Se4 crystals", "in-house", "single crystal")
        .ingredient("eus-ing-eu", "Chunked Europium ingredient", 0.826)
        .ingredient("eus-ing-s", "Ground Purified Sulfur ingredient", 0.174)
        .ingredient("eus-ing-nb", "Niobium ingredient", 0.37)
        .ingredient("eus-ing-se", "Purified Selenium ingredient", 0.63)
        .ingredient("eus-ing-eus", "EuS ingredient", 0.3)
        .ingredient("eus-ing-nbse2", "NbSe2 ingredient", 0.7)
        .process("eus-proc-chunk-eu", "Chunking Europium")
        .heat("eus-proc-heat-s", "Heating Sulfur", 450.5, 451.5)
        .process("eus-proc-grind-s", "Grinding Sulfur")
        .heat(
            "eus-proc-heat-eus",
            "Heating Chunked Europium,Ground Purified Sulfur",
            600.0,
            610.0,
        )
        .heat("eus-proc-heat-se", "Heating Selenium", 300.0, 305.0)
        .process("eus-proc-mix", "Mixing Nb and Se")
        .process("eus-proc-grind-nbse", "Grinding NbSe2 Mixture")
        .heat("eus-proc-heat-nbse", "Heating Ground NbSe2 Mixture", 700.0, 720.0)
        .process("eus-proc-press", "Pressing EusNb2Se4 pellets")
        .process("eus-proc-seal", "Sealing EusNb2Se4 pellets")
        .heat(
            "eus-proc-heat-pellets",
            "Heating EusNb2Se4 pellets (sealed vessel)",
            900.0,
            950.0,
        )
        .process("eus-proc-cool", "Cooling EusNb2Se4 vessel")
        .heat("eus-proc-heat-vessel", "Heating EusNb2Se4 vessel", 1000.0, 1050.0);

    b.flow(&["eus-mat-europium", "eus-proc-chunk-eu", "eus-mat-chunked-eu", "eus-ing-eu", "eus-proc-heat-eus"])
        .flow(&["eus-mat-sulfur", "eus-proc-heat-s", "eus-proc-grind-s", "eus-mat-ground-s", "eus-ing-s", "eus-proc-heat-eus"])
        .flow(&["eus-proc-heat-eus", "eus-mat-eus", "eus-ing-eus", "eus-proc-press"])
        .flow(&["eus-mat-selenium", "eus-proc-heat-se", "eus-mat-se", "eus-ing-se", "eus-proc-mix"])
        .flow(&["eus-mat-niobium", "eus-ing-nb", "eus-proc-mix"])
        .flow(&["eus-proc-mix", "eus-proc-grind-nbse", "eus-mat-nbse-mix", "eus-proc-heat-nbse", "eus-mat-nbse2", "eus-ing-nbse2", "eus-proc-press"])
        .flow(&[
            "eus-proc-press",
            "eus-proc-seal",
            "eus-proc-heat-pellets",
            "eus-proc-cool",
            "eus-proc-heat-vessel",
            "eus-mat-final",
            EUS_SAMPLE_ID,
        ]);

    b.instrument("eus-inst-xrd", "Powder diffractometer", "XRD", "Panalytical", "Empyrean")
        .instrument("eus-inst-vsm", "Vibrating sample magnetometer", "VSM", "Quantum Design", "PPMS DynaCool")
        .measurement("eus-meas-xrd-1", "XRD of EuNb2Se4 crystal, face 1", "XRD", Some("eus/xrd/scan1.xrdml"), "eus-mat-final", Some("eus-inst-xrd"))
        .measurement("eus-meas-xrd-2", "XRD of EuNb2Se4 crystal, face 2", "XRD", Some("eus/xrd/scan2.xrdml"), "eus-mat-final", Some("eus-inst-xrd"))
        .measurement("eus-meas-vsm", "Magnetic hysteresis at 2 K", "VSM", Some("eus/vsm/hysteresis.csv"), "eus-mat-final", Some("eus-inst-vsm"))
        .measurement("eus-meas-weigh", "Weighing Europium chunks", "mass", None, "eus-mat-europium", None);

    let sample = b.sample();
    b.graph
        .insert_node(GemdNode::new("eus-person-1", NodeKind::Person, "Graduate researcher", sample.clone()));
    b.graph
        .insert_node(GemdNode::new("eus-project", NodeKind::Project, "Quantum Foundry", sample));
    let mut role = GemdEdge::new("eus-person-1", "eus-proc-heat-eus", EdgeLabel::RoleIn);
    role.attributes.insert("role".into(), AttributeValue::categorical("operator"));
    b.graph.insert_edge(role);
    let mut member = GemdEdge::new("eus-person-1", "eus-project", EdgeLabel::RoleIn);
    member.attributes.insert("role".into(), AttributeValue::categorical("member"));
    b.graph.insert_edge(member);
    b.finish()
}

/// Measurement files referenced by [`eus_graph`].
pub fn eus_files() -> Vec<(String, Vec<u8>)> {
    vec![
        ("eus/xrd/scan1.xrdml".into(), synthetic_file("xrd", "eus", 1)),
        ("eus/xrd/scan2.xrdml".into(), synthetic_file("xrd", "eus", 2)),
        ("eus/vsm/hysteresis.csv".into(), synthetic_file("vsm", "eus", 1)),
    ]
}

struct FbSample<'a> {
    id: &'a str,
    material: &'a str,
    /// Process names in flow order.
    processes: &'a [&'a str],
    /// Whether an ingredient feeds the first process.
    ingredient: bool,
    date: &'a str,
}

const FIXTURE_B: [FbSample<'static>; 5] = [
    FbSample {
        id: "fb-1",
        material: "NiV alloy",
        processes: &["Heating Nickel pellets", "Quenching in water", "Grinding ingot", "Annealing ingot"],
        ingredient: true,
        date: "2024-01-05T09:00:00Z",
    },
    FbSample {
        id: "fb-2",
        material: "CrSBr flakes",
        processes: &["Heating CrSBr ampoule", "Quenching ampoule in ice", "Exfoliating crystals", "Annealing flakes"],
        ingredient: true,
        date: "2024-01-19T09:00:00Z",
    },
    FbSample {
        id: "fb-3",
        material: "Fe3GeTe2 crystal",
        processes: &["Arc melting Fe and Ge", "Heating Fe3GeTe2 melt", "Quenching melt", "Polishing crystal"],
        ingredient: true,
        date: "2024-02-02T09:00:00Z",
    },
    FbSample {
        id: "fb-4",
        material: "MnBi2Te4 crystal",
        processes: &["Heating MnBi2Te4 mixture", "Quenching in liquid nitrogen", "Annealing crystal"],
        ingredient: false,
        date: "2024-02-16T09:00:00Z",
    },
    FbSample {
        id: "fb-5",
        material: "CoSn film",
        processes: &["Quenching CoSn target", "Heating CoSn film"],
        ingredient: false,
        date: "2024-03-01T09:00:00Z",
    },
];

/// Five samples; `fb-1`..`fb-4` heat before they quench, `fb-5` does not.
pub fn fixture_b_graphs() -> Vec<GemdGraph> {
    FIXTURE_B.iter().map(fixture_b_graph).collect()
}

fn fixture_b_graph(s: &FbSample<'_>) -> GemdGraph {
    let name = format!("Synthesized {}", s.material);
    let mut b = Builder::new(
        s.id,
        &name,
        &[
            ("owner", "bob"),
            ("date", s.date),
            ("project_id", "magnetic-2d"),
            ("description", "heat and quench series"),
            ("status", "complete"),
        ],
    );
    let start = format!("{}-mat-start", s.id);
    let end = format!("{}-mat-end", s.id);
    b.material(&start, &format!("{} precursor", s.material), "Alfa Aesar", "powder")
        .material(&end, s.material, "in-house", "bulk");

    let mut chain: Vec<String> = vec![start.clone()];
    for (i, pname) in s.processes.iter().enumerate() {
        let id = format!("{}-proc-{}", s.id, i + 1);
        if pname.starts_with("Heating") {
            b.heat(&id, pname, 850.0, 860.0);
        } else {
            b.process(&id, pname);
        }
        chain.push(id);
    }
    chain.push(end.clone());
    chain.push(s.id.to_string());
    let chain_refs: Vec<&str> = chain.iter().map(String::as_str).collect();
    b.flow(&chain_refs);

    if s.ingredient {
        let ing = format!("{}-ing-1", s.id);
        b.ingredient(&ing, "Flux ingredient", 0.3);
        b.flow(&[&ing, &chain[1]]);
    }

    let inst = format!("{}-inst-xrd", s.id);
    b.instrument(&inst, "Powder diffractometer", "XRD", "Rigaku", "SmartLab");
    b.measurement(
        &format!("{}-meas-xrd-1", s.id),
        "XRD pattern",
        "XRD",
        Some(&format!("fixture-b/{}/xrd/pattern-1.xy", s.id)),
        &end,
        Some(&inst),
    );
    if s.id == "fb-1" {
        b.measurement(
            "fb-1-meas-xrd-2",
            "XRD pattern after anneal",
            "XRD",
            Some("fixture-b/fb-1/xrd/pattern-2.xy"),
            &end,
            Some(&inst),
        );
    }
    if s.id == "fb-2" {
        let vsm = "fb-2-inst-vsm";
        b.instrument(vsm, "Vibrating sample magnetometer", "VSM", "Quantum Design", "PPMS DynaCool");
        b.measurement(
            "fb-2-meas-vsm",
            "Magnetization loop",
            "VSM",
            Some("fixture-b/fb-2/vsm/loop.csv"),
            &end,
            Some(vsm),
        );
    }
    b.finish()
}

/// Files referenced by [`fixture_b_graphs`], as `(sample_id, path, content)`.
pub fn fixture_b_files() -> Vec<(String, String, Vec<u8>)> {
    let mut out = Vec::new();
    for graph in fixture_b_graphs() {
        for node in graph.nodes() {
            if let Some(path) = &node.file_ref {
                let kind = if path.contains("/vsm/") { "vsm" } else { "xrd" };
                out.push((graph.sample_id.clone(), path.clone(), synthetic_file(kind, path, 1)));
            }
        }
    }
    out
}

/// A polycrystal synthesis drawn in a procedure editor.
pub fn ganb4se8_graph() -> GemdGraph {
    let mut b = Builder::new(
        GANB4SE8_SAMPLE_ID,
        "GaNb4Se8 Sample",
        &[
            ("owner", "carol"),
            ("date", "2024-04-22T14:30:00Z"),
            ("project_id", "lacunar-spinels"),
            ("description", "GaNb4Se8 polycrystal via sealed-ampoule solid-state reaction"),
        ],
    );
    b.material("ga-mat-ga", "Gallium", "Alfa Aesar", "shot")
        .material("ga-mat-nb", "Niobium", "Alfa Aesar", "powder")
        .material("ga-mat-se", "Selenium", "Alfa Aesar", "shot")
        .material("ga-mat-product", "GaNb4Se8 polycrystal", "in-house", "polycrystal")
        .ingredient("ga-ing-ga", "Gallium ingredient", 0.079)
        .ingredient("ga-ing-nb", "Niobium ingredient", 0.421)
        .ingredient("ga-ing-se", "Selenium ingredient", 0.5)
        .process("ga-proc-mix", "Weighing and mixing elements")
        .process("ga-proc-seal", "Sealing in quartz ampoule")
        .heat("ga-proc-heat", "Heating GaNb4Se8 ampoule", 1000.0, 1010.0)
        .process("ga-proc-cool", "Furnace cooling")
        .flow(&["ga-mat-ga", "ga-ing-ga", "ga-proc-mix"])
        .flow(&["ga-mat-nb", "ga-ing-nb", "ga-proc-mix"])
        .flow(&["ga-mat-se", "ga-ing-se", "ga-proc-mix"])
        .flow(&["ga-proc-mix", "ga-proc-seal", "ga-proc-heat", "ga-proc-cool", "ga-mat-product", GANB4SE8_SAMPLE_ID])
        .instrument("ga-inst-xrd", "Powder diffractometer", "XRD", "Bruker", "D8 Advance")
        .measurement(
            "ga-meas-xrd",
            "Powder XRD",
            "XRD",
            Some("ganb4se8/xrd/powder.xrdml"),
            "ga-mat-product",
            Some("ga-inst-xrd"),
        );
    b.finish()
}

pub fn ganb4se8_files() -> Vec<(String, Vec<u8>)> {
    vec![("ganb4se8/xrd/powder.xrdml".into(), synthetic_file("xrd", "ganb4se8", 1))]
}

/// Characterization dictionary shipped with the hub.
pub fn default_dictionary() -> Vec<DictionaryEntry> {
    vec![
        DictionaryEntry {
            characterization: "XRD".into(),
            regex: ".*/xrd/.*".into(),
            description: "X-ray diffraction patterns".into(),
        },
        DictionaryEntry {
            characterization: "VSM".into(),
            regex: ".*/vsm/.*".into(),
            description: "Vibrating sample magnetometry loops".into(),
        },
    ]
}

fn synthetic_file(kind: &str, tag: &str, n: u32) -> Vec<u8> {
    let mut out = format!("# {kind} export for {tag} #{n}\n");
    for i in 0..32u32 {
        let x = 10.0 + f64::from(i) * 0.5;
        let y = (i * 37 + n * 11) % 101;
        out.push_str(&format!("{x:.2}\t{y}\n"));
    }
    out.into_bytes()
}
