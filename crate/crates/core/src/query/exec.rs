use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::ast::{MatchClause, Projection, QValue};
use super::plan::{plan_query, FederatedPlan, ObjectScope, PlanStep};
use super::{parse_query, QueryError};
use crate::graph_store::{AttrFilter, Binding, NodePredicate, Operand, PathPattern};
use crate::objects::StoredObject;
use crate::state::HubState;
use crate::tabular::{Cell, RowOrder, TableRow};

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct QueryResult {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<Option<String>>>,
}

impl QueryResult {
    /// Values of one column, in row order.
    pub fn column(&self, name: &str) -> Vec<Option<&str>> {
        let Some(i) = self.columns.iter().position(|c| c == name) else {
            return Vec::new();
        };
        self.rows.iter().map(|r| r[i].as_deref()).collect()
    }
}

pub fn run_query(state: &HubState, principal: &str, text: &str) -> Result<QueryResult, QueryError> {
    let plan = plan_query(&parse_query(text)?)?;
    execute_query(state, &plan, principal)
}

/// Field of a stored object addressable from `RETURN`.
pub fn object_field(o: &StoredObject, attr: &str) -> Option<String> {
    Some(match attr {
        "obj_store_path" | "path" => o.obj_store_path.clone(),
        "sample_id" => o.sample_id.clone(),
        "size_bytes" => o.size_bytes.to_string(),
        "checksum" => o.checksum.clone(),
        "checksum_algorithm" => o.checksum_algorithm.clone(),
        "uploaded_by" => o.uploaded_by.clone(),
        "timestamp" => o.timestamp.clone(),
        "version" => o.version.to_string(),
        _ => return None,
    })
}

pub(crate) fn to_pattern(m: &MatchClause, samples: &BTreeSet<String>) -> PathPattern {
    let nodes = m
        .nodes
        .iter()
        .map(|n| NodePredicate {
            variable: n.var.clone(),
            kind: n.kind,
            filters: n
                .filters
                .iter()
                .map(|f| AttrFilter {
                    attribute: f.attribute.clone(),
                    op: f.op,
                    operand: match &f.value {
                        QValue::Literal(s) => Operand::Literal(s.clone()),
                        QValue::Sample => Operand::OneOf(samples.iter().cloned().collect()),
                    },
                })
                .collect(),
        })
        .collect();
    PathPattern {
        nodes,
        hops: m.hops.clone(),
        direction: m.direction,
    }
}

#[derive(Clone, Default)]
struct Tuple<'a> {
    sample: Option<&'a str>,
    row: Option<&'a TableRow>,
    date: String,
    binding: Option<&'a Binding>,
    object: Option<&'a StoredObject>,
}

fn join<'a, T>(
    left: Vec<Tuple<'a>>,
    right: &'a [T],
    sample_of: impl Fn(&'a T) -> &'a str,
    set: impl Fn(&mut Tuple<'a>, &'a T),
) -> Vec<Tuple<'a>> {
    let mut by_sample: BTreeMap<&str, Vec<&'a T>> = BTreeMap::new();
    for r in right {
        by_sample.entry(sample_of(r)).or_default().push(r);
    }
    let mut out = Vec::new();
    for t in left {
        let Some(s) = t.sample else { continue };
        for r in by_sample.get(s).into_iter().flatten() {
            let mut next = t.clone();
            set(&mut next, r);
            out.push(next);
        }
    }
    out
}

pub fn execute_query(state: &HubState, plan: &FederatedPlan, principal: &str) -> Result<QueryResult, QueryError> {
    let visible = state.access.visible_objects(principal);

    let mut from_var: Option<&str> = None;
    let mut rows: Vec<TableRow> = Vec::new();
    let mut tabular_samples: Option<BTreeSet<String>> = None;
    let mut graph_var_set: BTreeSet<&str> = BTreeSet::new();
    let mut bindings: Option<Vec<Binding>> = None;
    let mut object_var: Option<&str> = None;
    let mut objects: Option<Vec<StoredObject>> = None;
    let mut projections: &[Projection] = &[];

    for (i, step) in plan.steps.iter().enumerate() {
        let n = i + 1;
        match step {
            PlanStep::TabularFilter { entity, var, filters } => {
                rows = state
                    .tabular
                    .query_rows(entity, filters, RowOrder::LatestFirst)
                    .map_err(|e| QueryError::step(n, e.code(), &e))?
                    .into_iter()
                    .filter(|r| r.sample.as_ref().is_none_or(|s| visible.contains(s)))
                    .collect();
                tabular_samples = Some(rows.iter().filter_map(|r| r.sample.clone()).collect());
                from_var = Some(var);
            }
            PlanStep::GraphPattern { pattern, scoped } => {
                let scope: BTreeSet<String> = match (&tabular_samples, scoped) {
                    (Some(t), true) => t.intersection(&visible).cloned().collect(),
                    _ => visible.clone(),
                };
                let param = tabular_samples.clone().unwrap_or_default();
                let compiled = to_pattern(pattern, &param);
                bindings = Some(
                    state
                        .graph
                        .match_path(&compiled, Some(&scope))
                        .map_err(|e| QueryError::step(n, e.code(), &e))?,
                );
                graph_var_set = pattern.nodes.iter().map(|x| x.var.as_str()).collect();
            }
            PlanStep::ObjectRegex {
                characterization,
                var,
                scope,
            } => {
                let scope: BTreeSet<String> = match scope {
                    ObjectScope::Graph => bindings
                        .iter()
                        .flatten()
                        .map(|b| b.sample_id.clone())
                        .collect(),
                    ObjectScope::Tabular => tabular_samples.clone().unwrap_or_default(),
                    ObjectScope::Visible => visible.clone(),
                };
                let found = state
                    .objects
                    .find_objects(characterization, &scope)
                    .map_err(|e| QueryError::step(n, e.code(), &e))?;
                objects = Some(found.into_iter().filter(|o| visible.contains(&o.sample_id)).cloned().collect());
                object_var = Some(var);
            }
            PlanStep::Project { columns } => projections = columns,
        }
    }

    let mut tuples: Option<Vec<Tuple<'_>>> = None;
    if from_var.is_some() {
        tuples = Some(
            rows.iter()
                .map(|r| Tuple {
                    sample: r.sample.as_deref(),
                    row: Some(r),
                    date: state.tabular.row_date(r),
                    ..Tuple::default()
                })
                .collect(),
        );
    }
    if let Some(bs) = &bindings {
        tuples = Some(match tuples {
            Some(left) => join(left, bs, |b| b.sample_id.as_str(), |t, b| t.binding = Some(b)),
            None => bs
                .iter()
                .map(|b| Tuple {
                    sample: Some(&b.sample_id),
                    binding: Some(b),
                    ..Tuple::default()
                })
                .collect(),
        });
    }
    if let Some(os) = &objects {
        tuples = Some(match tuples {
            Some(left) => join(left, os, |o| o.sample_id.as_str(), |t, o| t.object = Some(o)),
            None => os
                .iter()
                .map(|o| Tuple {
                    sample: Some(&o.sample_id),
                    object: Some(o),
                    ..Tuple::default()
                })
                .collect(),
        });
    }

    let project = |t: &Tuple<'_>, p: &Projection| -> Option<String> {
        if Some(p.var.as_str()) == from_var {
            return match t.row?.get(&p.attr)? {
                Cell::Null => None,
                c => Some(c.render()),
            };
        }
        if graph_var_set.contains(p.var.as_str()) {
            let b = t.binding?;
            let node = state.graph.latest(&b.sample_id)?.node(b.get(&p.var)?)?;
            return node.field(&p.attr);
        }
        if Some(p.var.as_str()) == object_var {
            return object_field(t.object?, &p.attr);
        }
        None
    };

    let mut projected: Vec<(String, Vec<Option<String>>)> = tuples
        .unwrap_or_default()
        .iter()
        .map(|t| (t.date.clone(), projections.iter().map(|p| project(t, p)).collect()))
        .collect();
    projected.sort_by(|a, b| b.0.cmp(&a.0).then_with(|| a.1.cmp(&b.1)));
    let mut seen = BTreeSet::new();
    let rows = projected
        .into_iter()
        .filter_map(|(_, values)| seen.insert(values.clone()).then_some(values))
        .collect();
    Ok(QueryResult {
        columns: projections.iter().map(|p| format!("{p}")).collect(),
        rows,
    })
}
