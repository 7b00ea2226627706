use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::QueryError;
use crate::gemd::NodeKind;
use crate::graph_store::NeighborDirection;
use crate::shred::instrument_id;
use crate::state::HubState;
use crate::tabular::{Cell, TableRow, INSTRUMENTS, MATERIALS, MATERIAL_PROP, MEASUREMENTS, SAMPLES};

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct RelatedItem {
    /// `sample`, `node`, `object`, or `row:<table>`.
    pub kind: String,
    pub id: String,
    pub relation: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sample: Option<String>,
}

/// Row identifier: key columns joined with `|`.
pub fn row_id(state: &HubState, row: &TableRow) -> String {
    let Some(schema) = state.tabular.schema(&row.table) else {
        return String::new();
    };
    schema
        .columns
        .iter()
        .filter(|c| c.key)
        .map(|c| row.row.get(&c.name).map(Cell::render).unwrap_or_default())
        .collect::<Vec<_>>()
        .join("|")
}

struct Collector<'a> {
    state: &'a HubState,
    visible: BTreeSet<String>,
    items: BTreeSet<RelatedItem>,
    rows: Vec<TableRow>,
}

impl<'a> Collector<'a> {
    fn can_see(&self, sample: Option<&str>) -> bool {
        sample.is_none_or(|s| self.visible.contains(s))
    }

    fn add(&mut self, kind: &str, id: &str, relation: &str, sample: Option<&str>) {
        if id.is_empty() || !self.can_see(sample) {
            return;
        }
        self.items.insert(RelatedItem {
            kind: kind.to_string(),
            id: id.to_string(),
            relation: relation.to_string(),
            sample: sample.map(String::from),
        });
    }

    fn row_sample(row: &TableRow) -> Option<&str> {
        if row.table == INSTRUMENTS {
            None
        } else {
            row.sample.as_deref()
        }
    }

    fn add_row(&mut self, row: &TableRow, relation: &str) {
        let id = row_id(self.state, row);
        self.add(&format!("row:{}", row.table), &id, relation, Self::row_sample(row));
    }

    fn rows_where(&self, table: &str, column: &str, value: &str) -> Vec<TableRow> {
        self.rows
            .iter()
            .filter(|r| r.table == table)
            .filter(|r| match r.row.get(column) {
                Some(Cell::Text(t)) => t == value,
                Some(Cell::List(items)) => items.iter().any(|i| i == value),
                _ => false,
            })
            .cloned()
            .collect()
    }

    fn find_row(&self, table: &str, id: &str) -> Option<TableRow> {
        self.rows
            .iter()
            .find(|r| r.table == table && row_id(self.state, r) == id)
            .cloned()
    }

    fn sample(&mut self, s: &str) {
        if let Some(graph) = self.state.graph.latest(s) {
            let graph = graph.clone();
            for n in graph.nodes() {
                self.add("node", &n.node_id, "contains", Some(s));
            }
        }
        let attributed: Vec<TableRow> = self
            .rows
            .iter()
            .filter(|r| r.table != INSTRUMENTS && r.sample.as_deref() == Some(s))
            .cloned()
            .collect();
        for r in &attributed {
            self.add_row(r, "contains");
        }
        let objects: Vec<String> = self
            .state
            .objects
            .latest_for_sample(s)
            .map(|o| o.obj_store_path.clone())
            .collect();
        for p in objects {
            self.add("object", &p, "contains", Some(s));
        }
    }

    fn node(&mut self, id: &str, s: &str) {
        self.add("sample", s, "in_sample", Some(s));
        let neighbors = self
            .state
            .graph
            .neighbors(id, NeighborDirection::Both, None)
            .unwrap_or_default();
        for (edge, far) in neighbors {
            let relation = if edge.src == id {
                format!("{}:out", edge.label)
            } else {
                format!("{}:in", edge.label)
            };
            self.add("node", &far.node_id, &relation, Some(s));
        }
        let Some(node) = self.state.graph.get_node(id).cloned() else { return };
        for table in [SAMPLES, MATERIALS, MEASUREMENTS] {
            if let Some(r) = self.find_row(table, id) {
                self.add_row(&r, "same_id");
            }
        }
        if let Some(p) = &node.file_ref {
            self.add("object", p, "file", Some(s));
        }
        if node.kind == NodeKind::InstrumentRun {
            if let Some(r) = self.find_row(INSTRUMENTS, &instrument_id(&node)) {
                self.add_row(&r, "instrument_row");
            }
        }
    }

    fn row(&mut self, row: &TableRow) {
        let id = row_id(self.state, row);
        if let Some(s) = Self::row_sample(row) {
            self.add("sample", s, "in_sample", Some(s));
        }
        if let Some(owner) = self.state.graph.owner_of(&id) {
            let owner = owner.to_string();
            self.add("node", &id, "same_id", Some(&owner));
        }
        let text = |c: &str| row.row.get(c).and_then(Cell::as_text).unwrap_or("").to_string();
        match row.table.as_str() {
            MEASUREMENTS => {
                for (table, col, rel) in [
                    (SAMPLES, "sample_id", "sample_row"),
                    (MATERIALS, "material_id", "material"),
                    (INSTRUMENTS, "instr_id", "instrument"),
                ] {
                    if let Some(r) = self.find_row(table, &text(col)) {
                        self.add_row(&r, rel);
                    }
                }
                let path = text("file_location_path");
                if let Ok(o) = self.state.objects.get_meta(&path, None) {
                    let s = o.sample_id.clone();
                    self.add("object", &path, "file", Some(&s));
                }
            }
            MATERIALS => {
                for r in self.rows_where(SAMPLES, "start_material_ids", &id) {
                    self.add_row(&r, "start_material_of");
                }
                for r in self.rows_where(SAMPLES, "end_material_id", &id) {
                    self.add_row(&r, "end_material_of");
                }
                for r in self.rows_where(MEASUREMENTS, "material_id", &id) {
                    self.add_row(&r, "measured_by");
                }
                for r in self.rows_where(MATERIAL_PROP, "mat_id", &id) {
                    self.add_row(&r, "property");
                }
            }
            MATERIAL_PROP => {
                if let Some(r) = self.find_row(MATERIALS, &text("mat_id")) {
                    self.add_row(&r, "material");
                }
            }
            INSTRUMENTS => {
                for r in self.rows_where(MEASUREMENTS, "instr_id", &id) {
                    self.add_row(&r, "measurement");
                }
            }
            SAMPLES => {
                if let Some(Cell::List(starts)) = row.row.get("start_material_ids") {
                    for m in starts.clone() {
                        if let Some(r) = self.find_row(MATERIALS, &m) {
                            self.add_row(&r, "start_material");
                        }
                    }
                }
                if let Some(r) = self.find_row(MATERIALS, &text("end_material_id")) {
                    self.add_row(&r, "end_material");
                }
                for r in self.rows_where(MEASUREMENTS, "sample_id", &id) {
                    self.add_row(&r, "measurement");
                }
            }
            table => {
                let refs: BTreeMap<String, String> = self
                    .state
                    .tabular
                    .schema(table)
                    .map(|s| s.references.clone())
                    .unwrap_or_default();
                for (col, target) in refs {
                    let values: Vec<String> = match row.row.get(&col) {
                        Some(Cell::Text(t)) => alloc::vec![t.clone()],
                        Some(Cell::List(items)) => items.clone(),
                        _ => Vec::new(),
                    };
                    for v in values {
                        if let Some(r) = self.find_row(&target, &v) {
                            self.add_row(&r, &col);
                        }
                    }
                }
                let referrers: Vec<(String, String)> = self
                    .state
                    .tabular
                    .extensions()
                    .iter()
                    .flat_map(|e| {
                        e.columns
                            .iter()
                            .filter(|c| c.references.as_deref() == Some(table))
                            .map(|c| (e.table_name.clone(), c.name.clone()))
                    })
                    .collect();
                for (t, col) in referrers {
                    for r in self.rows_where(&t, &col, &id) {
                        self.add_row(&r, "referenced_by");
                    }
                }
            }
        }
    }

    fn object(&mut self, path: &str, sample: &str) {
        self.add("sample", sample, "in_sample", Some(sample));
        for r in self.rows_where(MEASUREMENTS, "file_location_path", path) {
            self.add_row(&r, "measurement");
        }
        if let Some(g) = self.state.graph.latest(sample) {
            let g = g.clone();
            for n in g.nodes().filter(|n| n.file_ref.as_deref() == Some(path)) {
                self.add("node", &n.node_id, "file_of", Some(sample));
            }
        }
    }
}

/// Items directly linked to `id` across all stores, limited to what
/// `principal` may read. `id` may name a sample, a graph node, a row (key
/// columns joined with `|`) or an object path.
pub fn related_items(state: &HubState, id: &str, principal: &str) -> Result<Vec<RelatedItem>, QueryError> {
    let mut c = Collector {
        state,
        visible: state.access.visible_objects(principal),
        items: BTreeSet::new(),
        rows: state
            .tabular
            .table_names()
            .flat_map(|t| state.tabular.rows(t))
            .collect(),
    };
    let mut known = false;

    if c.visible.contains(id) {
        known = true;
        c.sample(id);
    }
    if let Some(owner) = state.graph.owner_of(id) {
        if c.visible.contains(owner) {
            known = true;
            let owner = owner.to_string();
            c.node(id, &owner);
        }
    }
    let matching_rows: Vec<TableRow> = c
        .rows
        .iter()
        .filter(|r| row_id(state, r) == id)
        .filter(|r| c.can_see(Collector::row_sample(r)))
        .cloned()
        .collect();
    for r in &matching_rows {
        known = true;
        c.row(r);
    }
    if let Ok(o) = state.objects.get_meta(id, None) {
        if c.visible.contains(&o.sample_id) {
            known = true;
            let s = o.sample_id.clone();
            c.object(id, &s);
        }
    }
    if !known {
        return Err(QueryError::UnknownId(id.to_string()));
    }
    Ok(c.items.into_iter().collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;
    use crate::state::{ingest_mutation, seeded_state};

    fn hub() -> HubState {
        let mut s = seeded_state("root", &[("ga", "alice"), ("gb", "bob")]);
        s.execute(ingest_mutation("alice", fixtures::eus_graph(), &fixtures::eus_files(), "2025-01-01T00:00:00Z"))
            .unwrap();
        s
    }

    fn has(items: &[RelatedItem], kind: &str, id: &str) -> bool {
        items.iter().any(|i| i.kind == kind && i.id == id)
    }

    #[test]
    fn measurement_row_links_everywhere() {
        let s = hub();
        let items = related_items(&s, "eus-meas-xrd-1", "alice").unwrap();
        assert!(has(&items, "row:samples", "eus"));
        assert!(has(&items, "row:materials", "eus-mat-final"));
        assert!(has(&items, "row:instruments", &s.tabular.rows(INSTRUMENTS)[1].row["instr_id"].render()) || has(&items, "row:instruments", &s.tabular.rows(INSTRUMENTS)[0].row["instr_id"].render()));
        assert!(has(&items, "node", "eus-meas-xrd-1"));
        assert!(has(&items, "object", "eus/xrd/scan1.xrdml"));
    }

    #[test]
    fn object_links_back() {
        let s = hub();
        let items = related_items(&s, "eus/xrd/scan2.xrdml", "alice").unwrap();
        assert!(has(&items, "row:measurements", "eus-meas-xrd-2"));
        assert!(has(&items, "sample", "eus"));
    }

    #[test]
    fn access_filtered() {
        let s = hub();
        assert_eq!(related_items(&s, "eus", "bob").unwrap_err().code(), "UNKNOWN_ID");
        assert_eq!(related_items(&s, "no-such-thing", "alice").unwrap_err().code(), "UNKNOWN_ID");
        let instr = s.tabular.rows(INSTRUMENTS)[0].row["instr_id"].render();
        let items = related_items(&s, &instr, "bob").unwrap();
        assert!(items.iter().all(|i| i.sample.is_none()));
    }
}
