//! Constraint-checked tabular catalog: the five core relations, their six
//! referential constraints, and onboarded extension tables that can join the
//! federated `sample` entity.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;

use serde::{Deserialize, Serialize};

use crate::matcher::FullMatch;

pub const SAMPLES: &str = "samples";
pub const MATERIALS: &str = "materials";
pub const MATERIAL_PROP: &str = "material_prop";
pub const MEASUREMENTS: &str = "measurements";
pub const INSTRUMENTS: &str = "instruments";

/// The federated entity that unions core samples with joining extensions.
pub const SAMPLE_ENTITY: &str = "sample";

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Cell {
    Null,
    Text(String),
    List(Vec<String>),
}

impl Cell {
    pub fn text(s: impl Into<String>) -> Self {
        Cell::Text(s.into())
    }

    pub fn as_text(&self) -> Option<&str> {
        match self {
            Cell::Text(s) => Some(s),
            _ => None,
        }
    }

    /// Flat rendering; lists are comma-joined and null is empty.
    pub fn render(&self) -> String {
        match self {
            Cell::Null => String::new(),
            Cell::Text(s) => s.clone(),
            Cell::List(items) => items.join(","),
        }
    }

    fn values(&self) -> &[String] {
        match self {
            Cell::Null => &[],
            Cell::Text(s) => core::slice::from_ref(s),
            Cell::List(items) => items,
        }
    }
}

pub type Row = BTreeMap<String, Cell>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ColumnType {
    Text,
    Timestamp,
    IdList,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ColumnDef {
    pub name: String,
    pub ty: ColumnType,
    pub key: bool,
    pub nullable: bool,
}

impl ColumnDef {
    fn new(name: &str, ty: ColumnType) -> Self {
        ColumnDef {
            name: name.to_string(),
            ty,
            key: false,
            nullable: false,
        }
    }

    fn key(mut self) -> Self {
        self.key = true;
        self
    }

    fn nullable(mut self) -> Self {
        self.nullable = true;
        self
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TableSchema {
    pub name: String,
    pub columns: Vec<ColumnDef>,
    pub semantic_entity: String,
    pub joins_into_sample_union: bool,
    /// Extension foreign keys: column -> referenced table (its single key).
    pub references: BTreeMap<String, String>,
}

impl TableSchema {
    pub fn column(&self, name: &str) -> Option<&ColumnDef> {
        self.columns.iter().find(|c| c.name == name)
    }

    fn key_columns(&self) -> impl Iterator<Item = &ColumnDef> {
        self.columns.iter().filter(|c| c.key)
    }

    fn key_of(&self, row: &Row) -> Vec<String> {
        self.key_columns()
            .map(|c| row.get(&c.name).map(Cell::render).unwrap_or_default())
            .collect()
    }

    fn date_column(&self) -> Option<&str> {
        if self.column("date").is_some() {
            return Some("date");
        }
        self.columns
            .iter()
            .find(|c| c.ty == ColumnType::Timestamp)
            .map(|c| c.name.as_str())
    }
}

/// Rows may be attributed to a sample for access filtering.
fn core_schemas() -> Vec<TableSchema> {
    use ColumnType::*;
    let t = |name: &str, entity: &str, columns: Vec<ColumnDef>| TableSchema {
        name: name.to_string(),
        columns,
        semantic_entity: entity.to_string(),
        joins_into_sample_union: false,
        references: BTreeMap::new(),
    };
    alloc::vec![
        t(
            SAMPLES,
            SAMPLE_ENTITY,
            alloc::vec![
                ColumnDef::new("sample_id", Text).key(),
                ColumnDef::new("name", Text),
                ColumnDef::new("project_id", Text),
                ColumnDef::new("owner", Text),
                ColumnDef::new("date", Timestamp),
                ColumnDef::new("start_material_ids", IdList),
                ColumnDef::new("end_material_id", Text).nullable(),
                ColumnDef::new("description", Text),
                ColumnDef::new("status", Text),
            ],
        ),
        t(
            MATERIALS,
            "material",
            alloc::vec![
                ColumnDef::new("mat_id", Text).key(),
                ColumnDef::new("name", Text),
                ColumnDef::new("supplier", Text),
                ColumnDef::new("form", Text),
                ColumnDef::new("description", Text),
            ],
        ),
        t(
            MATERIAL_PROP,
            "material_prop",
            alloc::vec![
                ColumnDef::new("mat_id", Text).key(),
                ColumnDef::new("property_name", Text).key(),
                ColumnDef::new("property_value", Text),
            ],
        ),
        t(
            MEASUREMENTS,
            "measurement",
            alloc::vec![
                ColumnDef::new("measurement_id", Text).key(),
                ColumnDef::new("sample_id", Text),
                ColumnDef::new("material_id", Text),
                ColumnDef::new("instr_id", Text),
                ColumnDef::new("measure_date", Timestamp),
                ColumnDef::new("measure_owner", Text),
                ColumnDef::new("measure_type", Text),
                ColumnDef::new("description", Text),
                ColumnDef::new("file_type", Text),
                ColumnDef::new("file_location_path", Text),
            ],
        ),
        t(
            INSTRUMENTS,
            "instrument",
            alloc::vec![
                ColumnDef::new("instr_id", Text).key(),
                ColumnDef::new("type", Text),
                ColumnDef::new("make", Text),
                ColumnDef::new("model", Text),
                ColumnDef::new("specification", Text),
            ],
        ),
    ]
}

pub fn is_core_table(name: &str) -> bool {
    matches!(name, SAMPLES | MATERIALS | MATERIAL_PROP | MEASUREMENTS | INSTRUMENTS)
}

/// Referential constraints. Numbers 1-6 follow the core relational schema;
/// the rest have no number.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum Constraint {
    MeasurementSample,
    MeasurementEndMaterial,
    SampleEndMaterial,
    MeasurementMaterial,
    SampleStartMaterials,
    MeasurementInstrument,
    MaterialPropMaterial,
    Extension { table: String, column: String },
}

impl Constraint {
    pub fn number(&self) -> Option<u8> {
        match self {
            Constraint::MeasurementSample => Some(1),
            Constraint::MeasurementEndMaterial => Some(2),
            Constraint::SampleEndMaterial => Some(3),
            Constraint::MeasurementMaterial => Some(4),
            Constraint::SampleStartMaterials => Some(5),
            Constraint::MeasurementInstrument => Some(6),
            Constraint::MaterialPropMaterial | Constraint::Extension { .. } => None,
        }
    }
}

impl fmt::Display for Constraint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match (self.number(), self) {
            (Some(n), _) => write!(f, "constraint {n}"),
            (None, Constraint::Extension { table, column }) => write!(f, "{table}.{column} reference"),
            (None, _) => f.write_str("material_prop.mat_id reference"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum TabularError {
    #[error("DUPLICATE_KEY: {table} {key:?}")]
    DuplicateKey { table: String, key: Vec<String> },
    #[error("FK_VIOLATION: {constraint} ({detail})")]
    FkViolation { constraint: Constraint, detail: String },
    #[error("UNKNOWN_TABLE: {0}")]
    UnknownTable(String),
    #[error("SCHEMA_MISMATCH: {table}: {detail}")]
    SchemaMismatch { table: String, detail: String },
    #[error("UNKNOWN_ROW: {table} {key:?}")]
    UnknownRow { table: String, key: Vec<String> },
    #[error("BAD_FILTER: {0}")]
    BadFilter(String),
    #[error("NAME_COLLISION: {0}")]
    NameCollision(String),
    #[error("INVALID_EXTENSION: {0}")]
    InvalidExtension(String),
}

impl TabularError {
    pub fn code(&self) -> &'static str {
        match self {
            TabularError::DuplicateKey { .. } => "DUPLICATE_KEY",
            TabularError::FkViolation { .. } => "FK_VIOLATION",
            TabularError::UnknownTable(_) => "UNKNOWN_TABLE",
            TabularError::SchemaMismatch { .. } => "SCHEMA_MISMATCH",
            TabularError::UnknownRow { .. } => "UNKNOWN_ROW",
            TabularError::BadFilter(_) => "BAD_FILTER",
            TabularError::NameCollision(_) => "NAME_COLLISION",
            TabularError::InvalidExtension(_) => "INVALID_EXTENSION",
        }
    }

    /// Constraint number for numbered foreign-key violations.
    pub fn constraint_number(&self) -> Option<u8> {
        match self {
            TabularError::FkViolation { constraint, .. } => constraint.number(),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct SampleRow {
    pub sample_id: String,
    pub name: String,
    pub project_id: String,
    pub owner: String,
    pub date: String,
    pub start_material_ids: Vec<String>,
    pub end_material_id: Option<String>,
    pub description: String,
    pub status: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct MaterialRow {
    pub mat_id: String,
    pub name: String,
    pub supplier: String,
    pub form: String,
    pub description: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct MaterialPropRow {
    pub mat_id: String,
    pub property_name: String,
    pub property_value: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct MeasurementRow {
    pub measurement_id: String,
    pub sample_id: String,
    pub material_id: String,
    pub instr_id: String,
    pub measure_date: String,
    pub measure_owner: String,
    pub measure_type: String,
    pub description: String,
    pub file_type: String,
    pub file_location_path: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct InstrumentRow {
    pub instr_id: String,
    #[serde(rename = "type")]
    pub kind: String,
    pub make: String,
    pub model: String,
    pub specification: String,
}

fn text_row(pairs: &[(&str, &str)]) -> Row {
    pairs
        .iter()
        .map(|(k, v)| ((*k).to_string(), Cell::text(*v)))
        .collect()
}

impl SampleRow {
    pub fn to_row(&self) -> Row {
        let mut row = text_row(&[
            ("sample_id", &self.sample_id),
            ("name", &self.name),
            ("project_id", &self.project_id),
            ("owner", &self.owner),
            ("date", &self.date),
            ("description", &self.description),
            ("status", &self.status),
        ]);
        row.insert("start_material_ids".into(), Cell::List(self.start_material_ids.clone()));
        row.insert(
            "end_material_id".into(),
            self.end_material_id.clone().map_or(Cell::Null, Cell::Text),
        );
        row
    }

    pub fn from_row(row: &Row) -> Option<Self> {
        let t = |k: &str| row.get(k).and_then(Cell::as_text).map(String::from);
        Some(SampleRow {
            sample_id: t("sample_id")?,
            name: t("name")?,
            project_id: t("project_id")?,
            owner: t("owner")?,
            date: t("date")?,
            start_material_ids: match row.get("start_material_ids")? {
                Cell::List(items) => items.clone(),
                _ => return None,
            },
            end_material_id: t("end_material_id"),
            description: t("description")?,
            status: t("status")?,
        })
    }
}

impl MaterialRow {
    pub fn to_row(&self) -> Row {
        text_row(&[
            ("mat_id", &self.mat_id),
            ("name", &self.name),
            ("supplier", &self.supplier),
            ("form", &self.form),
            ("description", &self.description),
        ])
    }
}

impl MaterialPropRow {
    pub fn to_row(&self) -> Row {
        text_row(&[
            ("mat_id", &self.mat_id),
            ("property_name", &self.property_name),
            ("property_value", &self.property_value),
        ])
    }
}

impl MeasurementRow {
    pub fn to_row(&self) -> Row {
        text_row(&[
            ("measurement_id", &self.measurement_id),
            ("sample_id", &self.sample_id),
            ("material_id", &self.material_id),
            ("instr_id", &self.instr_id),
            ("measure_date", &self.measure_date),
            ("measure_owner", &self.measure_owner),
            ("measure_type", &self.measure_type),
            ("description", &self.description),
            ("file_type", &self.file_type),
            ("file_location_path", &self.file_location_path),
        ])
    }
}

impl InstrumentRow {
    pub fn to_row(&self) -> Row {
        text_row(&[
            ("instr_id", &self.instr_id),
            ("type", &self.kind),
            ("make", &self.make),
            ("model", &self.model),
            ("specification", &self.specification),
        ])
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExtensionColumn {
    pub name: String,
    /// `id_list` and `timestamp` select those column types; anything else is text.
    pub semantic_type: String,
    #[serde(default)]
    pub key: bool,
    /// Name of a table whose single key column this column references.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub references: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TableExtension {
    pub table_name: String,
    pub columns: Vec<ExtensionColumn>,
    pub semantic_entity: String,
    #[serde(default)]
    pub joins_into_sample_union: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RowOrder {
    #[default]
    LatestFirst,
    None,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RowFilter {
    pub column: String,
    pub op: crate::graph_store::FilterOp,
    pub operand: String,
}

impl RowFilter {
    pub fn equals(column: impl Into<String>, operand: impl Into<String>) -> Self {
        RowFilter {
            column: column.into(),
            op: crate::graph_store::FilterOp::Equals,
            operand: operand.into(),
        }
    }

    pub fn regex(column: impl Into<String>, operand: impl Into<String>) -> Self {
        RowFilter {
            column: column.into(),
            op: crate::graph_store::FilterOp::Regex,
            operand: operand.into(),
        }
    }
}

/// A query result row together with where it came from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TableRow {
    pub table: String,
    pub row: Row,
    /// Sample the row is attributed to, when any.
    pub sample: Option<String>,
}

impl TableRow {
    pub fn get(&self, column: &str) -> Option<&Cell> {
        self.row.get(column)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
struct StoredRow {
    row: Row,
    sample: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
struct Table {
    schema: TableSchema,
    rows: BTreeMap<Vec<String>, StoredRow>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RowReceipt {
    pub table: String,
    pub key: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TabularStore {
    tables: BTreeMap<String, Table>,
    extensions: Vec<TableExtension>,
}

impl Default for TabularStore {
    fn default() -> Self {
        Self::new()
    }
}

impl TabularStore {
    pub fn new() -> Self {
        let tables = core_schemas()
            .into_iter()
            .map(|schema| {
                (
                    schema.name.clone(),
                    Table {
                        schema,
                        rows: BTreeMap::new(),
                    },
                )
            })
            .collect();
        TabularStore {
            tables,
            extensions: Vec::new(),
        }
    }

    pub fn schema(&self, table: &str) -> Option<&TableSchema> {
        self.tables.get(table).map(|t| &t.schema)
    }

    pub fn extensions(&self) -> &[TableExtension] {
        &self.extensions
    }

    pub fn table_names(&self) -> impl Iterator<Item = &str> {
        self.tables.keys().map(String::as_str)
    }

    pub fn row_count(&self, table: &str) -> usize {
        self.tables.get(table).map_or(0, |t| t.rows.len())
    }

    pub fn contains_key(&self, table: &str, key: &[&str]) -> bool {
        self.tables.get(table).is_some_and(|t| {
            let k: Vec<String> = key.iter().map(|s| (*s).to_string()).collect();
            t.rows.contains_key(&k)
        })
    }

    pub fn get(&self, table: &str, key: &[&str]) -> Option<&Row> {
        let t = self.tables.get(table)?;
        let k: Vec<String> = key.iter().map(|s| (*s).to_string()).collect();
        t.rows.get(&k).map(|r| &r.row)
    }

    pub fn sample_of(&self, table: &str, key: &[&str]) -> Option<&str> {
        let t = self.tables.get(table)?;
        let k: Vec<String> = key.iter().map(|s| (*s).to_string()).collect();
        t.rows.get(&k).and_then(|r| r.sample.as_deref())
    }

    /// All rows of one table in key order.
    pub fn rows(&self, table: &str) -> Vec<TableRow> {
        self.tables
            .get(table)
            .map(|t| {
                t.rows
                    .values()
                    .map(|r| TableRow {
                        table: table.to_string(),
                        row: r.row.clone(),
                        sample: r.sample.clone(),
                    })
                    .collect()
            })
            .unwrap_or_default()
    }

    /// Borrowing iteration over one table's rows in key order.
    pub fn iter_rows<'a>(&'a self, table: &str) -> impl Iterator<Item = &'a Row> + 'a {
        self.tables.get(table).into_iter().flat_map(|t| t.rows.values().map(|r| &r.row))
    }

    pub fn sample_row(&self, sample_id: &str) -> Option<SampleRow> {
        self.get(SAMPLES, &[sample_id]).and_then(SampleRow::from_row)
    }

    /// Inserts a row; `owner_sample` attributes rows of tables without a
    /// `sample_id` column to a sample.
    pub fn insert_row(&mut self, table: &str, row: Row, owner_sample: Option<&str>) -> Result<RowReceipt, TabularError> {
        self.write_row(table, row, owner_sample, false)
    }

    /// Like [`insert_row`](Self::insert_row) but replaces an existing row
    /// with the same key. Core tables only.
    pub fn upsert_row(&mut self, table: &str, row: Row, owner_sample: Option<&str>) -> Result<RowReceipt, TabularError> {
        self.write_row(table, row, owner_sample, true)
    }

    fn write_row(&mut self, table: &str, row: Row, owner_sample: Option<&str>, replace: bool) -> Result<RowReceipt, TabularError> {
        let t = self
            .tables
            .get(table)
            .ok_or_else(|| TabularError::UnknownTable(table.to_string()))?;
        check_schema(&t.schema, &row)?;
        let key = t.schema.key_of(&row);
        if !replace && t.rows.contains_key(&key) {
            return Err(TabularError::DuplicateKey {
                table: table.to_string(),
                key,
            });
        }
        self.check_references(&t.schema, &row)?;
        if table == SAMPLES {
            self.check_end_material_change(&row)?;
        }
        let sample = match row.get("sample_id") {
            Some(Cell::Text(s)) => Some(s.clone()),
            _ => owner_sample.map(String::from),
        };
        let t = self.tables.get_mut(table).expect("checked above");
        t.rows.insert(key.clone(), StoredRow { row, sample });
        Ok(RowReceipt {
            table: table.to_string(),
            key,
        })
    }

    /// A replaced sample row must keep the end material its measurements
    /// point at.
    fn check_end_material_change(&self, row: &Row) -> Result<(), TabularError> {
        let sample_id = row.get("sample_id").map(Cell::render).unwrap_or_default();
        let end = row.get("end_material_id").and_then(Cell::as_text);
        let stale = self.tables[MEASUREMENTS].rows.values().find(|m| {
            m.row.get("sample_id").and_then(Cell::as_text) == Some(sample_id.as_str())
                && m.row.get("material_id").and_then(Cell::as_text) != end
        });
        match stale {
            Some(m) => Err(TabularError::FkViolation {
                constraint: Constraint::MeasurementEndMaterial,
                detail: format!(
                    "measurement {} of sample {sample_id} still points at material {}",
                    m.row.get("measurement_id").map(Cell::render).unwrap_or_default(),
                    m.row.get("material_id").map(Cell::render).unwrap_or_default()
                ),
            }),
            None => Ok(()),
        }
    }

    /// Removes a row nothing else refers to.
    pub fn delete_row(&mut self, table: &str, key: &[&str]) -> Result<Row, TabularError> {
        let t = self
            .tables
            .get(table)
            .ok_or_else(|| TabularError::UnknownTable(table.to_string()))?;
        let owned: Vec<String> = key.iter().map(|k| k.to_string()).collect();
        if !t.rows.contains_key(&owned) {
            return Err(TabularError::UnknownRow {
                table: table.to_string(),
                key: owned,
            });
        }
        if let [id] = key {
            if let Some(constraint) = self.referrer_of(table, id) {
                return Err(TabularError::FkViolation {
                    constraint,
                    detail: format!("{table} {id} is still referenced"),
                });
            }
        }
        let t = self.tables.get_mut(table).expect("checked above");
        Ok(t.rows.remove(&owned).expect("checked above").row)
    }

    fn referrer_of(&self, table: &str, id: &str) -> Option<Constraint> {
        let any = |t: &str, col: &str| {
            self.tables[t]
                .rows
                .values()
                .any(|r| r.row.get(col).is_some_and(|c| c.values().iter().any(|v| v == id)))
        };
        match table {
            MATERIALS if any(SAMPLES, "end_material_id") => return Some(Constraint::SampleEndMaterial),
            MATERIALS if any(SAMPLES, "start_material_ids") => return Some(Constraint::SampleStartMaterials),
            MATERIALS if any(MEASUREMENTS, "material_id") => return Some(Constraint::MeasurementMaterial),
            MATERIALS if any(MATERIAL_PROP, "mat_id") => return Some(Constraint::MaterialPropMaterial),
            SAMPLES if any(MEASUREMENTS, "sample_id") => return Some(Constraint::MeasurementSample),
            INSTRUMENTS if any(MEASUREMENTS, "instr_id") => return Some(Constraint::MeasurementInstrument),
            _ => {}
        }
        for t in self.tables.values() {
            for (column, target) in &t.schema.references {
                if target == table && any(&t.schema.name, column) {
                    return Some(Constraint::Extension {
                        table: t.schema.name.clone(),
                        column: column.clone(),
                    });
                }
            }
        }
        None
    }

    fn material_exists(&self, id: &str) -> bool {
        self.contains_key(MATERIALS, &[id])
    }

    fn check_references(&self, schema: &TableSchema, row: &Row) -> Result<(), TabularError> {
        let text = |c: &str| row.get(c).and_then(Cell::as_text).unwrap_or("");
        let fk = |constraint: Constraint, detail: String| Err(TabularError::FkViolation { constraint, detail });
        match schema.name.as_str() {
            SAMPLES => {
                if let Some(Cell::Text(end)) = row.get("end_material_id") {
                    if !self.material_exists(end) {
                        return fk(Constraint::SampleEndMaterial, format!("end material {end} not in materials"));
                    }
                }
                if let Some(Cell::List(starts)) = row.get("start_material_ids") {
                    if let Some(missing) = starts.iter().find(|m| !self.material_exists(m)) {
                        return fk(
                            Constraint::SampleStartMaterials,
                            format!("start material {missing} not in materials"),
                        );
                    }
                }
            }
            MEASUREMENTS => {
                let sample_id = text("sample_id");
                let Some(sample) = self.get(SAMPLES, &[sample_id]) else {
                    return fk(Constraint::MeasurementSample, format!("sample {sample_id} not in samples"));
                };
                let material_id = text("material_id");
                if !self.material_exists(material_id) {
                    return fk(
                        Constraint::MeasurementMaterial,
                        format!("material {material_id} not in materials"),
                    );
                }
                let end = sample.get("end_material_id").and_then(Cell::as_text);
                if end != Some(material_id) {
                    return fk(
                        Constraint::MeasurementEndMaterial,
                        format!("material {material_id} is not the end material of sample {sample_id}"),
                    );
                }
                let instr_id = text("instr_id");
                if !self.contains_key(INSTRUMENTS, &[instr_id]) {
                    return fk(
                        Constraint::MeasurementInstrument,
                        format!("instrument {instr_id} not in instruments"),
                    );
                }
            }
            MATERIAL_PROP => {
                let mat_id = text("mat_id");
                if !self.material_exists(mat_id) {
                    return fk(Constraint::MaterialPropMaterial, format!("material {mat_id} not in materials"));
                }
            }
            _ => {
                for (column, target) in &schema.references {
                    let Some(cell) = row.get(column) else { continue };
                    for value in cell.values() {
                        if !self.contains_key(target, &[value]) {
                            return fk(
                                Constraint::Extension {
                                    table: schema.name.clone(),
                                    column: column.clone(),
                                },
                                format!("{value} not in {target}"),
                            );
                        }
                    }
                }
            }
        }
        Ok(())
    }

    pub fn check_extension(&self, ext: &TableExtension) -> Result<TableSchema, TabularError> {
        let invalid = |m: String| Err(TabularError::InvalidExtension(m));
        if ext.table_name.trim().is_empty() {
            return invalid("empty table name".into());
        }
        if self.tables.contains_key(&ext.table_name) {
            return Err(TabularError::NameCollision(ext.table_name.clone()));
        }
        if ext.columns.is_empty() {
            return invalid(format!("{} has no columns", ext.table_name));
        }
        if ext.semantic_entity.trim().is_empty() {
            return invalid(format!("{} has no semantic entity", ext.table_name));
        }
        if !ext.columns.iter().any(|c| c.key) {
            return invalid(format!("{} has no key column", ext.table_name));
        }
        let mut names = BTreeSet::new();
        let mut references = BTreeMap::new();
        let mut columns = Vec::new();
        for c in &ext.columns {
            if c.name.trim().is_empty() || !names.insert(c.name.as_str()) {
                return invalid(format!("{}: empty or repeated column {:?}", ext.table_name, c.name));
            }
            let ty = match c.semantic_type.as_str() {
                "id_list" => ColumnType::IdList,
                "timestamp" => ColumnType::Timestamp,
                _ => ColumnType::Text,
            };
            if let Some(target) = &c.references {
                let Some(t) = self.tables.get(target) else {
                    return invalid(format!("{}.{} references unknown table {target}", ext.table_name, c.name));
                };
                if t.schema.key_columns().count() != 1 {
                    return invalid(format!("{target} has a composite key and cannot be referenced"));
                }
                references.insert(c.name.clone(), target.clone());
            }
            columns.push(ColumnDef {
                name: c.name.clone(),
                ty,
                key: c.key,
                nullable: false,
            });
        }
        Ok(TableSchema {
            name: ext.table_name.clone(),
            columns,
            semantic_entity: ext.semantic_entity.clone(),
            joins_into_sample_union: ext.joins_into_sample_union,
            references,
        })
    }

    pub fn register_table_extension(&mut self, ext: TableExtension) -> Result<(), TabularError> {
        let schema = self.check_extension(&ext)?;
        self.tables.insert(
            schema.name.clone(),
            Table {
                schema,
                rows: BTreeMap::new(),
            },
        );
        self.extensions.push(ext);
        Ok(())
    }

    /// Tables a table name or semantic entity resolves to.
    pub fn resolve(&self, target: &str) -> Result<Vec<&str>, TabularError> {
        if self.tables.contains_key(target) {
            return Ok(alloc::vec![self.tables[target].schema.name.as_str()]);
        }
        let mut out: Vec<&str> = self
            .tables
            .values()
            .filter(|t| {
                t.schema.semantic_entity == target || (target == SAMPLE_ENTITY && t.schema.joins_into_sample_union)
            })
            .map(|t| t.schema.name.as_str())
            .collect();
        out.sort_unstable();
        out.dedup();
        if out.is_empty() {
            Err(TabularError::UnknownTable(target.to_string()))
        } else {
            Ok(out)
        }
    }

    pub fn query_rows(&self, target: &str, filters: &[RowFilter], order: RowOrder) -> Result<Vec<TableRow>, TabularError> {
        let tables = self.resolve(target)?;
        let mut compiled = Vec::new();
        for f in filters {
            if !tables.iter().any(|t| self.tables[*t].schema.column(&f.column).is_some()) {
                return Err(TabularError::BadFilter(format!("no column {} in {target}", f.column)));
            }
            let matcher = match f.op {
                crate::graph_store::FilterOp::Equals => None,
                crate::graph_store::FilterOp::Regex => {
                    Some(FullMatch::new(&f.operand).map_err(|e| TabularError::BadFilter(e.to_string()))?)
                }
            };
            compiled.push((f, matcher));
        }

        let mut hits: Vec<(&str, &StoredRow, &TableSchema)> = Vec::new();
        for name in tables {
            let table = &self.tables[name];
            for stored in table.rows.values() {
                let keep = compiled.iter().all(|(f, matcher)| {
                    stored.row.get(&f.column).is_some_and(|cell| {
                        cell.values().iter().any(|v| match matcher {
                            Some(m) => m.is_match(v),
                            None => *v == f.operand,
                        })
                    })
                });
                if keep {
                    hits.push((name, stored, &table.schema));
                }
            }
        }
        if order == RowOrder::LatestFirst {
            let date = |s: &StoredRow, schema: &TableSchema| {
                schema
                    .date_column()
                    .and_then(|c| s.row.get(c))
                    .map(Cell::render)
                    .unwrap_or_default()
            };
            hits.sort_by(|a, b| {
                date(b.1, b.2)
                    .cmp(&date(a.1, a.2))
                    .then_with(|| a.0.cmp(b.0))
                    .then_with(|| a.2.key_of(&a.1.row).cmp(&b.2.key_of(&b.1.row)))
            });
        }
        Ok(hits
            .into_iter()
            .map(|(table, stored, _)| TableRow {
                table: table.to_string(),
                row: stored.row.clone(),
                sample: stored.sample.clone(),
            })
            .collect())
    }

    /// The value ordering a row under `latest_first`: its date column, or
    /// empty when the table has none.
    pub fn row_date(&self, row: &TableRow) -> String {
        self.tables
            .get(&row.table)
            .and_then(|t| t.schema.date_column())
            .and_then(|c| row.row.get(c))
            .map(Cell::render)
            .unwrap_or_default()
    }

    /// Every row, ordered so that re-inserting them in sequence satisfies
    /// all references: core tables in dependency order, then extensions in
    /// registration order.
    pub fn dump(&self) -> Vec<(String, Row, Option<String>)> {
        let order = [MATERIALS, MATERIAL_PROP, INSTRUMENTS, SAMPLES, MEASUREMENTS]
            .into_iter()
            .chain(self.extensions.iter().map(|e| e.table_name.as_str()));
        let mut out = Vec::new();
        for name in order {
            for r in self.tables[name].rows.values() {
                out.push((name.to_string(), r.row.clone(), r.sample.clone()));
            }
        }
        out
    }
}

fn check_schema(schema: &TableSchema, row: &Row) -> Result<(), TabularError> {
    let mismatch = |detail: String| {
        Err(TabularError::SchemaMismatch {
            table: schema.name.clone(),
            detail,
        })
    };
    for name in row.keys() {
        if schema.column(name).is_none() {
            return mismatch(format!("unexpected column {name}"));
        }
    }
    for col in &schema.columns {
        let Some(cell) = row.get(&col.name) else {
            return mismatch(format!("missing column {}", col.name));
        };
        match (col.ty, cell) {
            (_, Cell::Null) if col.nullable && !col.key => {}
            (ColumnType::Text, Cell::Text(_)) => {}
            (ColumnType::Timestamp, Cell::Text(t)) if is_timestamp(t) => {}
            (ColumnType::Timestamp, Cell::Text(t)) => return mismatch(format!("{} is not an ISO-8601 UTC timestamp: {t:?}", col.name)),
            (ColumnType::IdList, Cell::List(_)) => {}
            _ => return mismatch(format!("wrong cell type for {}", col.name)),
        }
        if col.key && cell.render().is_empty() {
            return mismatch(format!("empty key column {}", col.name));
        }
    }
    Ok(())
}

/// `YYYY-MM-DDTHH:MM:SS[.fff]Z`, compared lexicographically.
pub fn is_timestamp(s: &str) -> bool {
    let b = s.as_bytes();
    if b.len() < 20 || b[b.len() - 1] != b'Z' {
        return false;
    }
    let digits = |r: core::ops::Range<usize>| b[r].iter().all(u8::is_ascii_digit);
    let fixed = digits(0..4)
        && b[4] == b'-'
        && digits(5..7)
        && b[7] == b'-'
        && digits(8..10)
        && b[10] == b'T'
        && digits(11..13)
        && b[13] == b':'
        && digits(14..16)
        && b[16] == b':'
        && digits(17..19);
    if !fixed {
        return false;
    }
    match &b[19..b.len() - 1] {
        [] => true,
        [b'.', frac @ ..] => !frac.is_empty() && frac.iter().all(u8::is_ascii_digit),
        _ => false,
    }
}
