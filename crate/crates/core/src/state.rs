//! The combined hub state and its single mutation path.
//!
//! A [`Mutation`] is checked against a copy of the state. When it succeeds,
//! [`HubState::prepare`] returns the resolved per-store operations together
//! with the resulting state. Persisting those operations and replaying them
//! with [`HubState::apply`] reproduces the same state, which is what the
//! durable journal in the hub crate relies on.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::access::{AccessControl, AccessError, Action, GrantOutcome, Rights, Role};
use crate::gemd::{GemdGraph, ValidationReport};
use crate::graph_store::{GraphStore, GraphStoreError};
use crate::objects::{DictionaryEntry, ObjectError, ObjectStore, ObjectUpload, StoredObject};
use crate::shred::{shred, ShredDefaults};
use crate::tabular::{Cell, Row, TableExtension, TabularError, TabularStore, INSTRUMENTS, MEASUREMENTS, SAMPLES};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StoreKind {
    Graph,
    Tabular,
    Objects,
    Access,
}

/// A resolved, already-validated change to exactly one store.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum StoreOp {
    UpsertGraph { sample_id: String, graph: GemdGraph },
    UpsertRow { table: String, row: Row, sample: Option<String> },
    DeleteRow { table: String, key: Vec<String> },
    RegisterExtension { extension: TableExtension },
    PutObject { object: StoredObject },
    UpdateDictionary { entry: DictionaryEntry },
    PurgeObject { path: String },
    CreateGroup { group_id: String, owner: String },
    AddMember { group_id: String, user: String, role: Role },
    SetRepresentative { group_id: String, user: String, representative: bool },
    RegisterObject { object: String, owning_group: String },
    Grant { subject: String, object: String, rights: Rights },
    SetPublic { object: String, public: bool },
    SetTombstone { object: String, tombstoned: bool },
}

impl StoreOp {
    pub fn store(&self) -> StoreKind {
        match self {
            StoreOp::UpsertGraph { .. } => StoreKind::Graph,
            StoreOp::UpsertRow { .. } | StoreOp::DeleteRow { .. } | StoreOp::RegisterExtension { .. } => StoreKind::Tabular,
            StoreOp::PutObject { .. } | StoreOp::UpdateDictionary { .. } | StoreOp::PurgeObject { .. } => StoreKind::Objects,
            _ => StoreKind::Access,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IngestMode {
    /// Fails if the sample exists.
    Create,
    /// Fails if the sample does not exist.
    Replace,
    CreateOrReplace,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Mutation {
    IngestBundle {
        actor: String,
        graph: GemdGraph,
        objects: Vec<ObjectUpload>,
        mode: IngestMode,
        now: String,
    },
    InsertRow {
        actor: String,
        table: String,
        row: Row,
        sample: Option<String>,
    },
    RegisterExtension {
        actor: String,
        extension: TableExtension,
    },
    UpdateDictionary {
        actor: String,
        entry: DictionaryEntry,
    },
    PutObject {
        actor: String,
        sample_id: String,
        upload: ObjectUpload,
        now: String,
    },
    CreateGroup {
        actor: String,
        group_id: String,
        owner: String,
    },
    AddMember {
        actor: String,
        group_id: String,
        user: String,
        role: Role,
    },
    SetRepresentative {
        actor: String,
        group_id: String,
        user: String,
        representative: bool,
    },
    Grant {
        actor: String,
        subject: String,
        object: String,
        rights: Rights,
    },
    SetPublic {
        actor: String,
        object: String,
        public: bool,
    },
    Tombstone {
        actor: String,
        object: String,
    },
    Restore {
        actor: String,
        object: String,
    },
    PurgeObject {
        actor: String,
        path: String,
    },
}

impl Mutation {
    pub fn actor(&self) -> &str {
        match self {
            Mutation::IngestBundle { actor, .. }
            | Mutation::InsertRow { actor, .. }
            | Mutation::RegisterExtension { actor, .. }
            | Mutation::UpdateDictionary { actor, .. }
            | Mutation::PutObject { actor, .. }
            | Mutation::CreateGroup { actor, .. }
            | Mutation::AddMember { actor, .. }
            | Mutation::SetRepresentative { actor, .. }
            | Mutation::Grant { actor, .. }
            | Mutation::SetPublic { actor, .. }
            | Mutation::Tombstone { actor, .. }
            | Mutation::Restore { actor, .. }
            | Mutation::PurgeObject { actor, .. } => actor,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IngestReceipt {
    pub sample_id: String,
    pub graph_version: usize,
    pub created: bool,
    pub rows: BTreeMap<String, usize>,
    pub objects: Vec<StoredObject>,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Outcome {
    Ingested(IngestReceipt),
    Row { table: String, key: Vec<String> },
    Object(StoredObject),
    Grant { outcome: GrantOutcome },
    Done,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum HubError {
    #[error("AUTHZ_DENIED: {0}")]
    AuthzDenied(String),
    #[error("SAMPLE_EXISTS: {0}")]
    SampleExists(String),
    #[error("UNKNOWN_SAMPLE: {0}")]
    UnknownSample(String),
    #[error("INVALID_GRAPH: {} violation(s)", .0.violations.len())]
    InvalidGraph(ValidationReport),
    #[error("CONSTRAINT_FAILED: {}", .0.join("; "))]
    ConstraintFailed(Vec<String>),
    #[error(transparent)]
    Access(#[from] AccessError),
    #[error(transparent)]
    Tabular(#[from] TabularError),
    #[error(transparent)]
    Object(#[from] ObjectError),
    #[error(transparent)]
    Graph(GraphStoreError),
    #[error("REPLAY_FAILED: {0}")]
    Replay(String),
}

impl From<GraphStoreError> for HubError {
    fn from(e: GraphStoreError) -> Self {
        match e {
            GraphStoreError::InvalidGraph(report) => HubError::InvalidGraph(report),
            other => HubError::Graph(other),
        }
    }
}

impl HubError {
    pub fn code(&self) -> &'static str {
        match self {
            HubError::AuthzDenied(_) => "AUTHZ_DENIED",
            HubError::SampleExists(_) => "SAMPLE_EXISTS",
            HubError::UnknownSample(_) => "UNKNOWN_SAMPLE",
            HubError::InvalidGraph(_) => "INVALID_GRAPH",
            HubError::ConstraintFailed(_) => "CONSTRAINT_FAILED",
            HubError::Access(e) => e.code(),
            HubError::Tabular(e) => e.code(),
            HubError::Object(e) => e.code(),
            HubError::Graph(e) => e.code(),
            HubError::Replay(_) => "REPLAY_FAILED",
        }
    }
}

#[derive(Debug, Clone)]
pub struct Prepared {
    pub ops: Vec<StoreOp>,
    pub outcome: Outcome,
    pub next: HubState,
}

#[derive(Debug, Clone, Default)]
pub struct HubState {
    pub graph: GraphStore,
    pub tabular: TabularStore,
    pub objects: ObjectStore,
    pub access: AccessControl,
}

impl HubState {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_admins<I, S>(admins: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        HubState {
            access: AccessControl::with_admins(admins),
            ..Self::default()
        }
    }

    /// Checks `mutation` and computes its store operations without touching
    /// `self`.
    pub fn prepare(&self, mutation: Mutation) -> Result<Prepared, HubError> {
        let mut next = self.clone();
        let mut ops = Vec::new();
        let outcome = next.run(mutation, &mut ops)?;
        Ok(Prepared { ops, outcome, next })
    }

    /// Prepares and installs `mutation` in place.
    pub fn execute(&mut self, mutation: Mutation) -> Result<(Outcome, Vec<StoreOp>), HubError> {
        let prepared = self.prepare(mutation)?;
        *self = prepared.next;
        Ok((prepared.outcome, prepared.ops))
    }

    fn require_member(&self, actor: &str) -> Result<(), HubError> {
        if self.access.group_of(actor).is_none() {
            return Err(HubError::AuthzDenied(format!("{actor} belongs to no group")));
        }
        Ok(())
    }

    fn require(&self, actor: &str, sample: &str, action: Action) -> Result<(), HubError> {
        match self.access.object(sample) {
            Some(o) if !o.tombstoned => {}
            _ => return Err(HubError::UnknownSample(sample.to_string())),
        }
        let decision = self.access.authorize(actor, sample, action)?;
        if decision.allowed {
            Ok(())
        } else {
            Err(HubError::AuthzDenied(format!(
                "{actor} may not {action:?} {sample} ({})",
                decision.basis
            )))
        }
    }

    fn record(&mut self, op: StoreOp, ops: &mut Vec<StoreOp>) -> Result<(), HubError> {
        self.apply(&op)?;
        ops.push(op);
        Ok(())
    }

    fn run(&mut self, mutation: Mutation, ops: &mut Vec<StoreOp>) -> Result<Outcome, HubError> {
        match mutation {
            Mutation::IngestBundle {
                actor,
                graph,
                objects,
                mode,
                now,
            } => self.ingest(&actor, graph, objects, mode, &now, ops),
            Mutation::InsertRow {
                actor,
                table,
                row,
                sample,
            } => {
                self.require_member(&actor)?;
                let sample = match row.get("sample_id") {
                    Some(Cell::Text(s)) => Some(s.clone()),
                    _ => sample,
                };
                let schema = self
                    .tabular
                    .schema(&table)
                    .ok_or_else(|| TabularError::UnknownTable(table.clone()))?;
                let creates_sample = table == SAMPLES || schema.joins_into_sample_union;
                if let Some(s) = &sample {
                    if self.access.object(s).is_some() {
                        self.require(&actor, s, Action::Write)?;
                    } else if creates_sample {
                        let group = self.access.check_register_object(&actor, s)?;
                        self.record(
                            StoreOp::RegisterObject {
                                object: s.clone(),
                                owning_group: group,
                            },
                            ops,
                        )?;
                    }
                }
                let receipt = self.tabular.insert_row(&table, row.clone(), sample.as_deref())?;
                ops.push(StoreOp::UpsertRow { table, row, sample });
                Ok(Outcome::Row {
                    table: receipt.table,
                    key: receipt.key,
                })
            }
            Mutation::RegisterExtension { actor, extension } => {
                self.require_member(&actor)?;
                self.tabular.check_extension(&extension)?;
                self.record(StoreOp::RegisterExtension { extension }, ops)?;
                Ok(Outcome::Done)
            }
            Mutation::UpdateDictionary { actor, entry } => {
                self.require_member(&actor)?;
                ObjectStore::check_dictionary_entry(&entry)?;
                self.record(StoreOp::UpdateDictionary { entry }, ops)?;
                Ok(Outcome::Done)
            }
            Mutation::PutObject {
                actor,
                sample_id,
                upload,
                now,
            } => {
                self.require(&actor, &sample_id, Action::Write)?;
                let object = self.objects.prepare_put(&upload, &sample_id, &actor, &now)?;
                self.record(StoreOp::PutObject { object: object.clone() }, ops)?;
                Ok(Outcome::Object(object))
            }
            Mutation::CreateGroup { actor, group_id, owner } => {
                self.access.check_create_group(&actor, &group_id, &owner)?;
                self.record(StoreOp::CreateGroup { group_id, owner }, ops)?;
                Ok(Outcome::Done)
            }
            Mutation::AddMember {
                actor,
                group_id,
                user,
                role,
            } => {
                self.access.check_add_member(&actor, &group_id, &user, role)?;
                self.record(StoreOp::AddMember { group_id, user, role }, ops)?;
                Ok(Outcome::Done)
            }
            Mutation::SetRepresentative {
                actor,
                group_id,
                user,
                representative,
            } => {
                self.access.check_set_representative(&actor, &group_id, &user)?;
                self.record(
                    StoreOp::SetRepresentative {
                        group_id,
                        user,
                        representative,
                    },
                    ops,
                )?;
                Ok(Outcome::Done)
            }
            Mutation::Grant {
                actor,
                subject,
                object,
                rights,
            } => {
                let outcome = self.access.check_grant(&actor, &subject, &object, rights)?;
                if outcome == GrantOutcome::Recorded {
                    self.record(StoreOp::Grant { subject, object, rights }, ops)?;
                }
                Ok(Outcome::Grant { outcome })
            }
            Mutation::SetPublic { actor, object, public } => {
                self.access.check_set_public(&actor, &object)?;
                self.record(StoreOp::SetPublic { object, public }, ops)?;
                Ok(Outcome::Done)
            }
            Mutation::Tombstone { actor, object } => {
                self.access.check_admin_action(&actor, &object)?;
                self.record(StoreOp::SetTombstone { object, tombstoned: true }, ops)?;
                Ok(Outcome::Done)
            }
            Mutation::Restore { actor, object } => {
                self.access.check_admin_action(&actor, &object)?;
                self.record(StoreOp::SetTombstone { object, tombstoned: false }, ops)?;
                Ok(Outcome::Done)
            }
            Mutation::PurgeObject { actor, path } => {
                if !self.access.is_admin(&actor) {
                    return Err(AccessError::NotAdmin(actor).into());
                }
                self.objects.get_meta(&path, None)?;
                self.record(StoreOp::PurgeObject { path }, ops)?;
                Ok(Outcome::Done)
            }
        }
    }

    fn ingest(
        &mut self,
        actor: &str,
        graph: GemdGraph,
        uploads: Vec<ObjectUpload>,
        mode: IngestMode,
        now: &str,
        ops: &mut Vec<StoreOp>,
    ) -> Result<Outcome, HubError> {
        self.require_member(actor)?;
        let sample_id = graph.sample_id.clone();
        let exists = self.access.object(&sample_id).is_some();
        match (mode, exists) {
            (IngestMode::Create, true) => return Err(HubError::SampleExists(sample_id)),
            (IngestMode::Replace, false) => return Err(HubError::UnknownSample(sample_id)),
            (_, true) => self.require(actor, &sample_id, Action::Update)?,
            (_, false) => {
                let group = self.access.check_register_object(actor, &sample_id)?;
                self.record(
                    StoreOp::RegisterObject {
                        object: sample_id.clone(),
                        owning_group: group,
                    },
                    ops,
                )?;
            }
        }

        self.graph.check_upsert(&sample_id, &graph)?;
        let (rows, report) = shred(
            &graph,
            &ShredDefaults {
                owner: actor.to_string(),
                now: now.to_string(),
            },
        );
        let graph_version = self.graph.version_count(&sample_id) + 1;
        self.record(
            StoreOp::UpsertGraph {
                sample_id: sample_id.clone(),
                graph,
            },
            ops,
        )?;

        let mut stored = Vec::new();
        for upload in &uploads {
            let object = self.objects.prepare_put(upload, &sample_id, actor, now)?;
            stored.push(object.clone());
            self.record(StoreOp::PutObject { object }, ops)?;
        }

        // The catalog mirrors the latest graph: measurements of the previous
        // version are dropped before the new rows go in.
        if exists {
            let stale: Vec<String> = self
                .tabular
                .rows(MEASUREMENTS)
                .into_iter()
                .filter(|r| r.sample.as_deref() == Some(sample_id.as_str()))
                .filter_map(|r| r.row.get("measurement_id").map(Cell::render))
                .collect();
            for id in stale {
                self.record(
                    StoreOp::DeleteRow {
                        table: MEASUREMENTS.to_string(),
                        key: vec![id],
                    },
                    ops,
                )?;
            }
        }

        let mut failures = Vec::new();
        for (table, row) in rows.in_insert_order() {
            let key = self.tabular.schema(table).map(|s| {
                s.columns
                    .iter()
                    .filter(|c| c.key)
                    .map(|c| row.get(&c.name).map(Cell::render).unwrap_or_default())
                    .collect::<Vec<_>>()
            });
            let key_refs: Vec<&str> = key.iter().flatten().map(String::as_str).collect();
            if self.tabular.contains_key(table, &key_refs) {
                if table == INSTRUMENTS {
                    continue;
                }
                let owner = self.tabular.sample_of(table, &key_refs);
                if owner != Some(sample_id.as_str()) {
                    failures.push(format!(
                        "DUPLICATE_KEY: {table} {key_refs:?} belongs to {}",
                        owner.unwrap_or("no sample")
                    ));
                    break;
                }
            }
            // Instruments are shared across samples.
            let owner = (table != INSTRUMENTS).then(|| sample_id.clone());
            if let Err(e) = self.tabular.upsert_row(table, row.clone(), owner.as_deref()) {
                failures.push(format!("{table}: {e}"));
                break;
            }
            ops.push(StoreOp::UpsertRow {
                table: table.to_string(),
                row,
                sample: owner,
            });
        }
        for m in &rows.measurements {
            if !m.file_location_path.is_empty() && !self.objects.contains(&m.file_location_path) {
                failures.push(format!(
                    "MISSING_OBJECT: measurement {} points at {} which is neither uploaded nor stored",
                    m.measurement_id, m.file_location_path
                ));
            }
        }
        if !failures.is_empty() {
            return Err(HubError::ConstraintFailed(failures));
        }
        Ok(Outcome::Ingested(IngestReceipt {
            sample_id,
            graph_version,
            created: !exists,
            rows: report.counts,
            objects: stored,
            warnings: report.warnings,
        }))
    }

    /// Applies one resolved operation. Used both while preparing and when
    /// replaying a log.
    pub fn apply(&mut self, op: &StoreOp) -> Result<(), HubError> {
        let replay = |e: &dyn core::fmt::Display| HubError::Replay(e.to_string());
        match op {
            StoreOp::UpsertGraph { sample_id, graph } => {
                self.graph
                    .upsert_sample_graph(sample_id, graph.clone())
                    .map_err(|e| replay(&e))?;
            }
            StoreOp::UpsertRow { table, row, sample } => {
                self.tabular
                    .upsert_row(table, row.clone(), sample.as_deref())
                    .map_err(|e| replay(&e))?;
            }
            StoreOp::DeleteRow { table, key } => {
                let key: Vec<&str> = key.iter().map(String::as_str).collect();
                self.tabular.delete_row(table, &key).map_err(|e| replay(&e))?;
            }
            StoreOp::RegisterExtension { extension } => {
                self.tabular
                    .register_table_extension(extension.clone())
                    .map_err(|e| replay(&e))?;
            }
            StoreOp::PutObject { object } => self.objects.apply_put(object.clone()),
            StoreOp::UpdateDictionary { entry } => {
                self.objects.update_dictionary(entry.clone()).map_err(|e| replay(&e))?;
            }
            StoreOp::PurgeObject { path } => {
                self.objects.purge(path).map_err(|e| replay(&e))?;
            }
            StoreOp::CreateGroup { group_id, owner } => self.access.apply_create_group(group_id, owner),
            StoreOp::AddMember { group_id, user, role } => self.access.apply_add_member(group_id, user, *role),
            StoreOp::SetRepresentative {
                group_id,
                user,
                representative,
            } => self.access.apply_set_representative(group_id, user, *representative),
            StoreOp::RegisterObject { object, owning_group } => self.access.apply_register_object(object, owning_group),
            StoreOp::Grant { subject, object, rights } => self.access.apply_grant(subject, object, *rights),
            StoreOp::SetPublic { object, public } => self.access.apply_set_public(object, *public),
            StoreOp::SetTombstone { object, tombstoned } => self.access.apply_tombstone(object, *tombstoned),
        }
        Ok(())
    }

    /// Replays operations onto a fresh state with the given admins.
    pub fn replay<'a, I>(admins: &[String], ops: I) -> Result<HubState, HubError>
    where
        I: IntoIterator<Item = &'a StoreOp>,
    {
        let mut state = HubState::with_admins(admins.iter().cloned());
        for op in ops {
            state.apply(op)?;
        }
        Ok(state)
    }

    /// A compact operation list that rebuilds this state, grouped by store.
    pub fn snapshot_ops(&self) -> Vec<StoreOp> {
        let mut out = Vec::new();
        for g in self.access.groups() {
            out.push(StoreOp::CreateGroup {
                group_id: g.group_id.clone(),
                owner: g.owner.clone(),
            });
            for (user, role) in &g.members {
                out.push(StoreOp::AddMember {
                    group_id: g.group_id.clone(),
                    user: user.clone(),
                    role: *role,
                });
            }
            for user in &g.representatives {
                out.push(StoreOp::SetRepresentative {
                    group_id: g.group_id.clone(),
                    user: user.clone(),
                    representative: true,
                });
            }
        }
        for o in self.access.objects() {
            out.push(StoreOp::RegisterObject {
                object: o.object_id.clone(),
                owning_group: o.owning_group.clone(),
            });
            if o.public {
                out.push(StoreOp::SetPublic {
                    object: o.object_id.clone(),
                    public: true,
                });
            }
            if o.tombstoned {
                out.push(StoreOp::SetTombstone {
                    object: o.object_id.clone(),
                    tombstoned: true,
                });
            }
        }
        for g in self.access.grants() {
            out.push(StoreOp::Grant {
                subject: g.subject,
                object: g.object,
                rights: g.rights,
            });
        }
        let sample_ids: Vec<String> = self.graph.sample_ids().map(String::from).collect();
        for s in sample_ids {
            for v in 1..=self.graph.version_count(&s) {
                let graph = self.graph.graph(&s, Some(v)).expect("version in range");
                out.push(StoreOp::UpsertGraph {
                    sample_id: s.clone(),
                    graph: (**graph).clone(),
                });
            }
        }
        for ext in self.tabular.extensions() {
            out.push(StoreOp::RegisterExtension { extension: ext.clone() });
        }
        for (table, row, sample) in self.tabular.dump() {
            out.push(StoreOp::UpsertRow { table, row, sample });
        }
        for entry in self.objects.dictionary() {
            out.push(StoreOp::UpdateDictionary { entry: entry.clone() });
        }
        let paths: Vec<String> = self.objects.latest().map(|o| o.obj_store_path.clone()).collect();
        for p in paths {
            for object in self.objects.version_history(&p) {
                out.push(StoreOp::PutObject { object: object.clone() });
            }
        }
        out
    }
}

/// A fresh state seeded with one group per `(group, pi)` pair; handy for
/// tests and demos.
pub fn seeded_state(admin: &str, groups: &[(&str, &str)]) -> HubState {
    let mut state = HubState::with_admins([admin]);
    for (group, pi) in groups {
        state
            .execute(Mutation::CreateGroup {
                actor: admin.to_string(),
                group_id: (*group).to_string(),
                owner: (*pi).to_string(),
            })
            .expect("fresh group");
    }
    state
}

/// Convenience for building an ingest of a fixture graph with its files.
pub fn ingest_mutation(actor: &str, graph: GemdGraph, files: &[(String, Vec<u8>)], now: &str) -> Mutation {
    Mutation::IngestBundle {
        actor: actor.to_string(),
        graph,
        objects: files
            .iter()
            .map(|(p, c)| ObjectUpload::from_content(p.clone(), c))
            .collect(),
        mode: IngestMode::CreateOrReplace,
        now: now.to_string(),
    }
}
