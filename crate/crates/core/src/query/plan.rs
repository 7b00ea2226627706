use alloc::vec::Vec;
use core::fmt;

use serde::{Deserialize, Serialize};

use super::ast::{MatchClause, Projection, Query};
use super::QueryError;
use crate::tabular::RowFilter;

/// Which sample set an object step is limited to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObjectScope {
    /// Samples with at least one graph binding.
    Graph,
    /// Samples produced by the tabular step.
    Tabular,
    /// Every sample the principal may read.
    Visible,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "step", rename_all = "snake_case")]
pub enum PlanStep {
    TabularFilter {
        entity: alloc::string::String,
        var: alloc::string::String,
        filters: Vec<RowFilter>,
    },
    GraphPattern {
        pattern: MatchClause,
        /// Limited to the tabular step's samples when true.
        scoped: bool,
    },
    ObjectRegex {
        characterization: alloc::string::String,
        var: alloc::string::String,
        scope: ObjectScope,
    },
    Project {
        columns: Vec<Projection>,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FederatedPlan {
    pub steps: Vec<PlanStep>,
}

pub fn plan_query(query: &Query) -> Result<FederatedPlan, QueryError> {
    let mut steps = Vec::new();
    if let Some(from) = &query.from {
        steps.push(PlanStep::TabularFilter {
            entity: from.entity.clone(),
            var: from.var.clone(),
            filters: from.filters.clone(),
        });
    }
    if let Some(m) = &query.graph {
        if m.uses_sample_param() && query.from.is_none() {
            return Err(QueryError::Unplannable("$sample needs a FROM clause to bind it".into()));
        }
        steps.push(PlanStep::GraphPattern {
            pattern: m.clone(),
            scoped: query.from.is_some(),
        });
    }
    if let Some(o) = &query.objects {
        let scope = if query.graph.is_some() {
            ObjectScope::Graph
        } else if query.from.is_some() {
            ObjectScope::Tabular
        } else {
            ObjectScope::Visible
        };
        steps.push(PlanStep::ObjectRegex {
            characterization: o.characterization.clone(),
            var: o.var.clone(),
            scope,
        });
    }
    steps.push(PlanStep::Project {
        columns: query.ret.clone(),
    });
    Ok(FederatedPlan { steps })
}

impl PlanStep {
    pub fn name(&self) -> &'static str {
        match self {
            PlanStep::TabularFilter { .. } => "TabularFilter",
            PlanStep::GraphPattern { .. } => "GraphPattern",
            PlanStep::ObjectRegex { .. } => "ObjectRegex",
            PlanStep::Project { .. } => "Project",
        }
    }
}

impl fmt::Display for FederatedPlan {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, step) in self.steps.iter().enumerate() {
            write!(f, "{}. {}", i + 1, step.name())?;
            match step {
                PlanStep::TabularFilter { entity, var, filters } => {
                    let from = super::ast::FromClause {
                        entity: entity.clone(),
                        var: var.clone(),
                        filters: filters.clone(),
                    };
                    write!(f, " {from}")?;
                }
                PlanStep::GraphPattern { pattern, scoped } => {
                    let scope = if *scoped { "tabular" } else { "visible" };
                    write!(f, "(scope={scope}) {pattern}")?;
                }
                PlanStep::ObjectRegex {
                    characterization,
                    var,
                    scope,
                } => {
                    let scope = match scope {
                        ObjectScope::Graph => "graph",
                        ObjectScope::Tabular => "tabular",
                        ObjectScope::Visible => "visible",
                    };
                    write!(f, "(scope={scope}) {var} characterization={characterization:?}")?;
                }
                PlanStep::Project { columns } => {
                    for (j, c) in columns.iter().enumerate() {
                        f.write_str(if j == 0 { " " } else { ", " })?;
                        write!(f, "{c}")?;
                    }
                }
            }
            f.write_str("\n")?;
        }
        Ok(())
    }
}
