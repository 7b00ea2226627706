//! Random dataset generation and naive reference evaluators shared by the
//! integration suites. Nothing here calls into the engines under test except
//! to load data; every answer is recomputed from raw store contents.

#![allow(dead_code)]

pub mod access_enum;
pub mod constraints;

use std::collections::{BTreeMap, BTreeSet};
use std::sync::LazyLock;

use qdh_core::gemd::{AttributeValue, EdgeLabel, GemdEdge, GemdGraph, GemdNode, NodeKind};
use qdh_core::objects::{DictionaryEntry, ObjectUpload};
use qdh_core::state::{IngestMode, Mutation};
use qdh_core::tabular::{Cell, ExtensionColumn, Row, TableExtension};
use qdh_core::{HubState, Rights, Role};
use rand::seq::IndexedRandom;
use rand::Rng;
use regex::Regex;

pub const ADMIN: &str = "root";

pub const PROCESS_NAMES: &[&str] = &[
    "Heating Sulfur",
    "Heating Selenium",
    "Quenching in water",
    "Grinding",
    "Mixing",
    "Heating pellets",
    "Cooling",
    "Pressing",
    "Quenching in oil",
];
pub const MATERIAL_NAMES: &[&str] = &["Sulfur", "Selenium", "Europium", "Niobium", "Powder", "Crystal"];
pub const SAMPLE_NAMES: &[&str] = &["Synthesized EuS", "Sample A", "Sample B", "Crystal growth"];
pub const NAME_REGEXES: &[&str] = &[".*Heating.*", ".*Quenching.*", "S.*", ".*", "Grinding", ".*e.*", "[A-M].*"];

thread_local! {
    static REGEXES: std::cell::RefCell<BTreeMap<String, Option<Regex>>> = const { std::cell::RefCell::new(BTreeMap::new()) };
}

/// Full-match regex in the same dialect as the engine, compiled here.
pub fn full_match(pattern: &str, value: &str) -> bool {
    REGEXES.with(|cache| {
        cache
            .borrow_mut()
            .entry(pattern.to_string())
            .or_insert_with(|| Regex::new(&format!("^(?:{pattern})$")).ok())
            .as_ref()
            .is_some_and(|r| r.is_match(value))
    })
}

/// A user likely to see something: usually a member of some sample's group.
pub fn pick_user(rng: &mut impl Rng, ds: &Dataset) -> String {
    let owners: Vec<String> = ds.state.access.objects().map(|o| o.owning_group.clone()).collect();
    if rng.random_bool(0.7) {
        if let Some(g) = owners.choose(rng) {
            let members: Vec<&String> = ds.state.access.group(g).unwrap().members.keys().collect();
            return (*members.choose(rng).unwrap()).clone();
        }
    }
    ds.users.choose(rng).unwrap().clone()
}

fn date(rng: &mut impl Rng) -> String {
    format!("2024-{:02}-{:02}T{:02}:00:00Z", rng.random_range(1..=12), rng.random_range(1..=28), rng.random_range(0..24))
}

/// A valid synthesis graph with at most 60 nodes.
pub fn random_graph(rng: &mut impl Rng, sample_id: &str) -> GemdGraph {
    let mut g = GemdGraph::new(sample_id);
    let mut root = GemdNode::new(sample_id, NodeKind::SampleRoot, *SAMPLE_NAMES.choose(rng).unwrap(), sample_id);
    root.attributes.insert("date".into(), AttributeValue::text(date(rng)));
    root.attributes.insert("owner".into(), AttributeValue::text("someone"));
    root.attributes.insert("project_id".into(), AttributeValue::text("p1"));
    if rng.random_bool(0.5) {
        root.attributes.insert("status".into(), AttributeValue::text(*["complete", "failed"].choose(rng).unwrap()));
    }
    g.insert_node(root);

    let add_run = |g: &mut GemdGraph, id: String, kind: NodeKind, name: &str| {
        g.insert_node(GemdNode::new(id.clone(), kind, name, sample_id));
        let spec = format!("{id}-spec");
        g.insert_node(GemdNode::new(spec.clone(), kind.spec_counterpart().unwrap(), name, sample_id));
        g.insert_edge(GemdEdge::new(id, spec, EdgeLabel::HasSpec));
    };

    let flow_count = rng.random_range(1..=20);
    let mut flow: Vec<String> = Vec::new();
    for i in 0..flow_count {
        let id = format!("{sample_id}-n{i}");
        let last = i + 1 == flow_count;
        let (kind, name) = match rng.random_range(0..3) {
            _ if last => (NodeKind::MaterialRun, *MATERIAL_NAMES.choose(rng).unwrap()),
            0 => (NodeKind::MaterialRun, *MATERIAL_NAMES.choose(rng).unwrap()),
            1 => (NodeKind::IngredientRun, *MATERIAL_NAMES.choose(rng).unwrap()),
            _ => (NodeKind::ProcessRun, *PROCESS_NAMES.choose(rng).unwrap()),
        };
        add_run(&mut g, id.clone(), kind, name);
        flow.push(id);
    }
    for j in 1..flow.len() {
        for i in 0..j {
            if rng.random_bool(if i + 1 == j { 0.7 } else { 0.1 }) {
                g.insert_edge(GemdEdge::new(flow[i].clone(), flow[j].clone(), EdgeLabel::FlowsTo));
            }
        }
    }
    let end = flow.last().unwrap().clone();
    if rng.random_bool(0.85) {
        g.insert_edge(GemdEdge::new(end.clone(), sample_id, EdgeLabel::FlowsTo));
    }

    let instruments: Vec<String> = (0..rng.random_range(0..=2))
        .map(|i| {
            let id = format!("{sample_id}-instr{i}");
            let ty = *["XRD", "VSM"].choose(rng).unwrap();
            let model = *["M1", "M2"].choose(rng).unwrap();
            let node = GemdNode::new(id.clone(), NodeKind::InstrumentRun, format!("{ty} {model}"), sample_id)
                .with_attr("type", AttributeValue::text(ty))
                .with_attr("make", AttributeValue::text("Acme"))
                .with_attr("model", AttributeValue::text(model));
            g.insert_node(node);
            id
        })
        .collect();
    for i in 0..rng.random_range(0..=4) {
        let id = format!("{sample_id}-meas{i}");
        let (dir, charz) = *[("xrd", "XRD"), ("vsm", "VSM"), ("raw", "other")].choose(rng).unwrap();
        add_run(&mut g, id.clone(), NodeKind::MeasurementRun, &format!("{charz} scan {i}"));
        let mut node = g.node(&id).unwrap().clone();
        node.attributes.insert("characterization".into(), AttributeValue::text(charz));
        node.file_ref = Some(format!("{sample_id}/{dir}/f{i}.dat"));
        g.insert_node(node);
        g.insert_edge(GemdEdge::new(id.clone(), end.clone(), EdgeLabel::PartOf));
        if let Some(instr) = instruments.choose(rng) {
            g.insert_edge(GemdEdge::new(id, instr.clone(), EdgeLabel::Uses));
        }
    }
    assert!(g.node_count() <= 60);
    g
}

pub fn graph_files(g: &GemdGraph, rng: &mut impl Rng) -> Vec<ObjectUpload> {
    g.nodes()
        .filter_map(|n| n.file_ref.clone())
        .map(|p| {
            let mut content = vec![0u8; rng.random_range(1..64)];
            rng.fill_bytes(&mut content);
            ObjectUpload::from_content(p, &content)
        })
        .collect()
}

pub struct Dataset {
    pub state: HubState,
    pub users: Vec<String>,
}

fn exec(state: &mut HubState, m: Mutation) {
    let desc = format!("{m:?}");
    state.execute(m).unwrap_or_else(|e| panic!("setup mutation failed: {e}\n{desc}"));
}

/// ≤10 samples, ≤60 nodes per graph, ≤50 objects, random groups, grants,
/// public flags, tombstones, re-ingested versions and sometimes an
/// onboarded extension table.
pub fn random_dataset(rng: &mut impl Rng) -> Dataset {
    let mut state = HubState::with_admins([ADMIN]);
    let group_count = rng.random_range(1..=3);
    let user_count = rng.random_range(group_count..=6);
    let users: Vec<String> = (0..user_count).map(|i| format!("u{i}")).collect();
    let groups: Vec<String> = (0..group_count).map(|i| format!("g{i}")).collect();
    for (g, owner) in groups.iter().zip(&users) {
        exec(
            &mut state,
            Mutation::CreateGroup {
                actor: ADMIN.into(),
                group_id: g.clone(),
                owner: owner.clone(),
            },
        );
    }
    for u in users.iter().skip(group_count) {
        let gi = rng.random_range(0..group_count);
        exec(
            &mut state,
            Mutation::AddMember {
                actor: users[gi].clone(),
                group_id: groups[gi].clone(),
                user: u.clone(),
                role: Role::Student,
            },
        );
    }
    for entry in qdh_core::fixtures::default_dictionary() {
        exec(&mut state, Mutation::UpdateDictionary { actor: users[0].clone(), entry });
    }
    if rng.random_bool(0.3) {
        exec(
            &mut state,
            Mutation::UpdateDictionary {
                actor: users[0].clone(),
                entry: DictionaryEntry {
                    characterization: "RAW".into(),
                    regex: ".*/raw/.*".into(),
                    description: String::new(),
                },
            },
        );
    }

    let sample_count = rng.random_range(0..=10);
    let mut samples = Vec::new();
    for i in 0..sample_count {
        let sample = format!("s{i}");
        let actor = users.choose(rng).unwrap().clone();
        let versions = if rng.random_bool(0.2) { 2 } else { 1 };
        for _ in 0..versions {
            let graph = random_graph(rng, &sample);
            let objects = graph_files(&graph, rng);
            exec(
                &mut state,
                Mutation::IngestBundle {
                    actor: actor.clone(),
                    graph,
                    objects,
                    mode: IngestMode::CreateOrReplace,
                    now: "2025-01-01T00:00:00Z".into(),
                },
            );
        }
        samples.push((sample, actor));
    }

    if rng.random_bool(0.3) && !samples.is_empty() {
        exec(
            &mut state,
            Mutation::RegisterExtension {
                actor: users[0].clone(),
                extension: device_extension(),
            },
        );
        for d in 0..rng.random_range(1..=4) {
            let (sample, actor) = samples.choose(rng).unwrap().clone();
            let mut row = Row::new();
            row.insert("device_id".into(), Cell::text(format!("dev{d}")));
            row.insert("name".into(), Cell::text(*["Heating stage", "Flake S", "Flake T"].choose(rng).unwrap()));
            row.insert("date".into(), Cell::text(date(rng)));
            exec(
                &mut state,
                Mutation::InsertRow {
                    actor,
                    table: "2d_device".into(),
                    row,
                    sample: Some(sample),
                },
            );
        }
    }

    for (sample, actor) in &samples {
        let granter = state.access.group(state.access.group_of(actor).unwrap()).unwrap().owner.clone();
        if rng.random_bool(0.3) {
            let subject = users.choose(rng).unwrap().clone();
            let rights = Rights::from_bits(rng.random_range(1..8));
            exec(
                &mut state,
                Mutation::Grant {
                    actor: granter.clone(),
                    subject,
                    object: sample.clone(),
                    rights,
                },
            );
        }
        if rng.random_bool(0.15) {
            exec(
                &mut state,
                Mutation::SetPublic {
                    actor: granter,
                    object: sample.clone(),
                    public: true,
                },
            );
        }
        if rng.random_bool(0.1) {
            exec(
                &mut state,
                Mutation::Tombstone {
                    actor: ADMIN.into(),
                    object: sample.clone(),
                },
            );
        }
    }
    let mut all_users = users;
    all_users.push("outsider".into());
    Dataset { state, users: all_users }
}

pub fn device_extension() -> TableExtension {
    let col = |name: &str, ty: &str, key: bool| ExtensionColumn {
        name: name.into(),
        semantic_type: ty.into(),
        key,
        references: None,
    };
    TableExtension {
        table_name: "2d_device".into(),
        columns: vec![col("device_id", "text", true), col("name", "text", false), col("date", "timestamp", false)],
        semantic_entity: "2d_device".into(),
        joins_into_sample_union: true,
    }
}

// ---------------------------------------------------------------------------
// Random queries

fn lit(s: &str) -> String {
    format!("\"{}\"", s.replace('\\', "\\\\").replace('"', "\\\""))
}

/// A random query text in the v1 grammar, biased toward values that occur
/// in `state`.
pub fn random_query(rng: &mut impl Rng, state: &HubState) -> String {
    let mut names: Vec<String> = Vec::new();
    for s in state.graph.sample_ids() {
        names.extend(state.graph.latest(s).unwrap().nodes().map(|n| n.name.clone()));
    }
    names.sort();
    names.dedup();

    loop {
        let mut text = String::new();
        let mut bound: Vec<(String, &'static str)> = Vec::new();
        let with_from = rng.random_bool(0.5);
        let with_match = rng.random_bool(0.7);
        let with_objects = rng.random_bool(0.35);
        if !(with_from || with_match || with_objects) {
            continue;
        }
        if with_from {
            let entity = *["sample", "sample", "measurement", "material", "instrument", "2d_device"].choose(rng).unwrap();
            text.push_str(&format!("FROM {entity} AS t {{"));
            let cols: &[&str] = match entity {
                "sample" => &["name", "status", "sample_id", "start_material_ids", "bogus"],
                "measurement" => &["measure_type", "sample_id", "file_type"],
                "material" => &["name", "form"],
                "instrument" => &["type", "model"],
                _ => &["name"],
            };
            let n = rng.random_range(0..=2);
            let filters: Vec<String> = (0..n)
                .map(|_| {
                    let col = *cols.choose(rng).unwrap();
                    if rng.random_bool(0.5) {
                        let v = match col {
                            "name" => SAMPLE_NAMES.choose(rng).unwrap().to_string(),
                            "status" => "unknown".to_string(),
                            "measure_type" => "XRD".to_string(),
                            _ => format!("s{}", rng.random_range(0..10)),
                        };
                        format!("{col} = {}", lit(&v))
                    } else {
                        format!("{col} ~ {}", lit(NAME_REGEXES.choose(rng).unwrap()))
                    }
                })
                .collect();
            text.push_str(&filters.join(", "));
            text.push_str("} ");
            bound.push(("t".into(), "row"));
        }
        if with_match {
            text.push_str("MATCH ");
            let len = rng.random_range(1..=3);
            let reverse = rng.random_bool(0.3);
            for i in 0..len {
                if i > 0 {
                    let reach = rng.random_bool(0.6);
                    text.push_str(match (reverse, reach) {
                        (false, true) => " -[*]-> ",
                        (false, false) => " --> ",
                        (true, true) => " <-[*]- ",
                        (true, false) => " <-- ",
                    });
                }
                let var = format!("v{i}");
                let kind = *["", ":process_run", ":material_run", ":ingredient_run", ":sample_root"].choose(rng).unwrap();
                let mut filters = Vec::new();
                if with_from && i == 0 && rng.random_bool(0.5) {
                    filters.push("sample_id = $sample".to_string());
                }
                match rng.random_range(0..4) {
                    0 if !names.is_empty() => filters.push(format!("name = {}", lit(names.choose(rng).unwrap()))),
                    1 => filters.push(format!("name ~ {}", lit(NAME_REGEXES.choose(rng).unwrap()))),
                    _ => {}
                }
                if filters.is_empty() {
                    text.push_str(&format!("({var}{kind})"));
                } else {
                    text.push_str(&format!("({var}{kind} {{{}}})", filters.join(", ")));
                }
                bound.push((var, "node"));
            }
            text.push(' ');
        }
        if with_objects {
            let c = *["XRD", "VSM", "RAW"].choose(rng).unwrap();
            text.push_str(&format!("OBJECTS characterization = {} AS o ", lit(c)));
            bound.push(("o".into(), "object"));
        }
        let n = rng.random_range(1..=2);
        let projections: Vec<String> = (0..n)
            .map(|_| {
                let (var, what) = bound.choose(rng).unwrap();
                let attr = match *what {
                    "row" => *["name", "sample_id", "date", "measure_type", "type", "end_material_id"].choose(rng).unwrap(),
                    "node" => *["name", "node_id", "kind", "sample_id", "file_ref", "bogus"].choose(rng).unwrap(),
                    _ => *["obj_store_path", "sample_id", "version", "checksum"].choose(rng).unwrap(),
                };
                format!("{var}.{attr}")
            })
            .collect();
        text.push_str("RETURN ");
        text.push_str(&projections.join(", "));
        return text;
    }
}

// ---------------------------------------------------------------------------
// Reference evaluation

/// Samples `user` may read, computed from raw access-control contents.
pub fn oracle_visible(state: &HubState, user: &str) -> BTreeSet<String> {
    let my_group = state.access.groups().find(|g| g.members.contains_key(user)).map(|g| g.group_id.clone());
    let granted: BTreeSet<String> = state
        .access
        .grants()
        .filter(|g| g.subject == user && g.rights.contains(Rights::READ))
        .map(|g| g.object)
        .collect();
    state
        .access
        .objects()
        .filter(|o| !o.tombstoned)
        .filter(|o| o.public || Some(&o.owning_group) == my_group.as_ref() || granted.contains(&o.object_id))
        .map(|o| o.object_id.clone())
        .collect()
}

fn cell_values(c: &Cell) -> Vec<String> {
    match c {
        Cell::Null => vec![],
        Cell::Text(t) => vec![t.clone()],
        Cell::List(l) => l.clone(),
    }
}

fn node_field(n: &GemdNode, attr: &str) -> Option<String> {
    match attr {
        "node_id" => Some(n.node_id.clone()),
        "name" => Some(n.name.clone()),
        "kind" | "type" => Some(n.kind.as_str().to_string()),
        "sample_id" => Some(n.sample_id.clone()),
        "file_ref" => n.file_ref.clone(),
        "ontology_ref" => n.ontology_ref.clone(),
        other => n.attributes.get(other).map(AttributeValue::render),
    }
}

/// Minimal re-parse of the generator's own query shape. Only the texts
/// produced by [`random_query`] (and the fixture queries) need to parse.
#[derive(Debug, Default)]
struct Parsed {
    from: Option<(String, String, Vec<(String, bool, String)>)>,
    nodes: Vec<(String, Option<String>, Vec<(String, bool, Option<String>)>)>,
    hops: Vec<bool>,
    reverse: bool,
    objects: Option<(String, String)>,
    ret: Vec<(String, String)>,
}

fn parse_filters(body: &str) -> Vec<(String, bool, Option<String>)> {
    static RE: LazyLock<Regex> = LazyLock::new(|| Regex::new(r#"(\w+)\s*(=|~)\s*("((?:[^"\\]|\\.)*)"|\$sample)"#).unwrap());
    RE.captures_iter(body)
        .map(|c| {
            let value = c.get(4).map(|m| m.as_str().replace("\\\"", "\"").replace("\\\\", "\\"));
            (c[1].to_string(), &c[2] == "~", value)
        })
        .collect()
}

fn parse_generated(text: &str) -> Parsed {
    let mut p = Parsed::default();
    let ret_at = text.find("RETURN ").expect("RETURN clause");
    let (head, ret) = text.split_at(ret_at);
    p.ret = ret["RETURN ".len()..]
        .split(',')
        .map(|s| {
            let (v, a) = s.trim().split_once('.').unwrap();
            (v.to_string(), a.to_string())
        })
        .collect();
    let mut head = head.to_string();
    if let Some(i) = head.find("OBJECTS ") {
        static RE: LazyLock<Regex> = LazyLock::new(|| Regex::new(r#"OBJECTS characterization = "([^"]*)"(?: AS (\w+))?"#).unwrap());
        let c = RE.captures(&head[i..]).unwrap();
        p.objects = Some((c[1].to_string(), c.get(2).map_or("obj", |m| m.as_str()).to_string()));
        head.truncate(i);
    }
    if let Some(i) = head.find("MATCH ") {
        let pattern = head[i + 6..].to_string();
        head.truncate(i);
        static NODE_RE: LazyLock<Regex> =
            LazyLock::new(|| Regex::new(r#"\((\w+)(?::(\w+))?\s*(?:\{((?:[^"}]|"(?:[^"\\]|\\.)*")*)\})?\)"#).unwrap());
        let mut last_end = 0;
        for c in NODE_RE.captures_iter(&pattern) {
            let m = c.get(0).unwrap();
            let between = &pattern[last_end..m.start()];
            if last_end > 0 {
                p.hops.push(between.contains('*'));
                p.reverse = between.contains('<');
            }
            last_end = m.end();
            let filters = c.get(3).map(|b| parse_filters(b.as_str())).unwrap_or_default();
            p.nodes.push((c[1].to_string(), c.get(2).map(|k| k.as_str().to_string()), filters));
        }
    }
    if let Some(rest) = head.trim().strip_prefix("FROM ") {
        static RE: LazyLock<Regex> = LazyLock::new(|| Regex::new(r#"^(\w+)(?: AS (\w+))?\s*\{(.*)\}\s*$"#).unwrap());
        let c = RE.captures(rest).unwrap_or_else(|| panic!("bad FROM in {text}"));
        let filters = parse_filters(&c[3]).into_iter().map(|(a, r, v)| (a, r, v.unwrap())).collect();
        let entity = c[1].to_string();
        let var = c.get(2).map_or(entity.clone(), |m| m.as_str().to_string());
        p.from = Some((entity, var, filters));
    }
    p
}

/// Rows of the named entity as `(table, row, sample, date)`.
fn oracle_rows(state: &HubState, entity: &str) -> Option<Vec<(String, Row, Option<String>, String)>> {
    let tables: BTreeSet<String> = state
        .tabular
        .table_names()
        .filter(|t| {
            let s = state.tabular.schema(t).unwrap();
            *t == entity || s.semantic_entity == entity || (entity == "sample" && s.joins_into_sample_union)
        })
        .map(String::from)
        .collect();
    // A table name takes precedence over entity routing.
    let tables: BTreeSet<String> = if state.tabular.schema(entity).is_some() {
        [entity.to_string()].into()
    } else {
        tables
    };
    if tables.is_empty() {
        return None;
    }
    Some(
        state
            .tabular
            .dump()
            .into_iter()
            .filter(|(t, _, _)| tables.contains(t))
            .map(|(t, row, sample)| {
                let schema = state.tabular.schema(&t).unwrap();
                let date_col = if schema.column("date").is_some() {
                    Some("date".to_string())
                } else {
                    schema
                        .columns
                        .iter()
                        .find(|c| c.ty == qdh_core::tabular::ColumnType::Timestamp)
                        .map(|c| c.name.clone())
                };
                let date = date_col.and_then(|c| row.get(&c).map(|v| cell_values(v).join(","))).unwrap_or_default();
                (t, row, sample, date)
            })
            .collect(),
    )
}

/// Reachability along flows_to in pattern orientation, by DFS.
fn reaches(g: &GemdGraph, from: &str, to: &str, reverse: bool, direct: bool) -> bool {
    let next = |n: &str| -> Vec<String> {
        g.edges()
            .iter()
            .filter(|e| e.label == EdgeLabel::FlowsTo)
            .filter_map(|e| {
                if !reverse && e.src == n {
                    Some(e.dst.clone())
                } else if reverse && e.dst == n {
                    Some(e.src.clone())
                } else {
                    None
                }
            })
            .collect()
    };
    if direct {
        return next(from).iter().any(|n| n == to);
    }
    let mut seen = BTreeSet::new();
    let mut stack = next(from);
    while let Some(n) = stack.pop() {
        if n == to {
            return true;
        }
        if seen.insert(n.clone()) {
            stack.extend(next(&n));
        }
    }
    false
}

pub type OracleResult = Result<Vec<Vec<Option<String>>>, String>;

/// Evaluates a generated query by exhaustive filtering and nested-loop
/// joins over raw store contents.
pub fn oracle_query(state: &HubState, user: &str, text: &str) -> OracleResult {
    let p = parse_generated(text);
    let visible = oracle_visible(state, user);

    // FROM
    let mut rows = None;
    if let Some((entity, _, filters)) = &p.from {
        let all = oracle_rows(state, entity).ok_or("UNKNOWN_TABLE")?;
        for (col, _, _) in filters {
            // Tables with no rows still define columns.
            let defined = state
                .tabular
                .table_names()
                .filter(|t| {
                    let s = state.tabular.schema(t).unwrap();
                    if state.tabular.schema(entity).is_some() {
                        t == entity
                    } else {
                        s.semantic_entity == *entity || (entity == "sample" && s.joins_into_sample_union)
                    }
                })
                .any(|t| state.tabular.schema(t).unwrap().column(col).is_some());
            if !defined {
                return Err("BAD_FILTER".into());
            }
        }
        let kept: Vec<_> = all
            .into_iter()
            .filter(|(_, row, sample, _)| {
                sample.as_ref().is_none_or(|s| visible.contains(s))
                    && filters.iter().all(|(col, is_re, v)| {
                        row.get(col)
                            .is_some_and(|c| cell_values(c).iter().any(|x| if *is_re { full_match(v, x) } else { x == v }))
                    })
            })
            .collect();
        rows = Some(kept);
    }
    let from_samples: Option<BTreeSet<String>> =
        rows.as_ref().map(|r| r.iter().filter_map(|(_, _, s, _)| s.clone()).collect());

    // MATCH
    let mut bindings: Option<Vec<(String, Vec<String>)>> = None;
    if !p.nodes.is_empty() {
        let mut out = Vec::new();
        for sample in state.graph.sample_ids() {
            if !visible.contains(sample) {
                continue;
            }
            if let Some(fs) = &from_samples {
                if !fs.contains(sample) {
                    continue;
                }
            }
            let g = state.graph.latest(sample).unwrap();
            let accepts = |n: &GemdNode, i: usize| {
                let (_, kind, filters) = &p.nodes[i];
                kind.as_ref().is_none_or(|k| n.kind.as_str() == k)
                    && filters.iter().all(|(attr, is_re, v)| {
                        let Some(x) = node_field(n, attr) else { return false };
                        match v {
                            None => from_samples.as_ref().is_some_and(|fs| fs.contains(&x)),
                            Some(v) if *is_re => full_match(v, &x),
                            Some(v) => &x == v,
                        }
                    })
            };
            let mut chains: Vec<Vec<String>> = g.nodes().filter(|n| accepts(n, 0)).map(|n| vec![n.node_id.clone()]).collect();
            for i in 1..p.nodes.len() {
                let mut next = Vec::new();
                for c in &chains {
                    for n in g.nodes().filter(|n| accepts(n, i)) {
                        if reaches(g, c.last().unwrap(), &n.node_id, p.reverse, !p.hops[i - 1]) {
                            let mut c2 = c.clone();
                            c2.push(n.node_id.clone());
                            next.push(c2);
                        }
                    }
                }
                chains = next;
            }
            out.extend(chains.into_iter().map(|c| (sample.to_string(), c)));
        }
        bindings = Some(out);
    }

    // OBJECTS
    let mut objects = None;
    if let Some((charz, _)) = &p.objects {
        let entry = state
            .objects
            .dictionary()
            .find(|e| &e.characterization == charz)
            .ok_or("UNKNOWN_CHARACTERIZATION")?;
        let scope: BTreeSet<String> = match (&bindings, &from_samples) {
            (Some(b), _) => b.iter().map(|(s, _)| s.clone()).collect(),
            (None, Some(f)) => f.clone(),
            (None, None) => visible.clone(),
        };
        let mut latest: BTreeMap<String, qdh_core::StoredObject> = BTreeMap::new();
        for o in state.objects.latest() {
            for v in state.objects.version_history(&o.obj_store_path) {
                let slot = latest.entry(v.obj_store_path.clone()).or_insert_with(|| v.clone());
                if v.version > slot.version {
                    *slot = v.clone();
                }
            }
        }
        objects = Some(
            latest
                .into_values()
                .filter(|o| scope.contains(&o.sample_id) && visible.contains(&o.sample_id) && full_match(&entry.regex, &o.obj_store_path))
                .collect::<Vec<_>>(),
        );
    }

    // Join and project by nested loops.
    let from_var = p.from.as_ref().map(|f| f.1.clone());
    let node_vars: Vec<String> = p.nodes.iter().map(|n| n.0.clone()).collect();
    let obj_var = p.objects.as_ref().map(|o| o.1.clone());
    let row_opts: Vec<Option<&(String, Row, Option<String>, String)>> = match &rows {
        Some(r) => r.iter().map(Some).collect(),
        None => vec![None],
    };
    let bind_opts: Vec<Option<&(String, Vec<String>)>> = match &bindings {
        Some(b) => b.iter().map(Some).collect(),
        None => vec![None],
    };
    let obj_opts: Vec<Option<&qdh_core::StoredObject>> = match &objects {
        Some(o) => o.iter().map(Some).collect(),
        None => vec![None],
    };
    let mut best: BTreeMap<Vec<Option<String>>, String> = BTreeMap::new();
    for r in &row_opts {
        for b in &bind_opts {
            for o in &obj_opts {
                let mut samples: Vec<Option<&String>> = Vec::new();
                if let Some(r) = r {
                    samples.push(r.2.as_ref());
                }
                if let Some(b) = b {
                    samples.push(Some(&b.0));
                }
                if let Some(o) = o {
                    samples.push(Some(&o.sample_id));
                }
                if samples.len() > 1 && !(samples.iter().all(|s| s.is_some()) && samples.windows(2).all(|w| w[0] == w[1])) {
                    continue;
                }
                let values: Vec<Option<String>> = p
                    .ret
                    .iter()
                    .map(|(var, attr)| {
                        if Some(var) == from_var.as_ref() {
                            return r.and_then(|r| match r.1.get(attr) {
                                None | Some(Cell::Null) => None,
                                Some(Cell::Text(t)) => Some(t.clone()),
                                Some(Cell::List(l)) => Some(l.join(",")),
                            });
                        }
                        if let Some(i) = node_vars.iter().position(|v| v == var) {
                            let (s, chain) = (*b)?;
                            return node_field(state.graph.latest(s)?.node(&chain[i])?, attr);
                        }
                        if Some(var) == obj_var.as_ref() {
                            let o = (*o)?;
                            return match attr.as_str() {
                                "obj_store_path" | "path" => Some(o.obj_store_path.clone()),
                                "sample_id" => Some(o.sample_id.clone()),
                                "version" => Some(o.version.to_string()),
                                "checksum" => Some(o.checksum.clone()),
                                _ => None,
                            };
                        }
                        None
                    })
                    .collect();
                let date = r.map(|r| r.3.clone()).unwrap_or_default();
                let slot = best.entry(values).or_default();
                if date > *slot {
                    *slot = date;
                }
            }
        }
    }
    let mut out: Vec<(String, Vec<Option<String>>)> = best.into_iter().map(|(v, d)| (d, v)).collect();
    out.sort_by(|a, b| b.0.cmp(&a.0).then_with(|| a.1.cmp(&b.1)));
    Ok(out.into_iter().map(|(_, v)| v).collect())
}
