//! First-order queries in disjunctive normal form.
//!
//! A query has one target variable (index 0, conventionally `T`), existential
//! variables `1..num_vars`, and a list of conjunctive branches. Each branch is
//! a set of atoms `r(subject, object)`, optionally negated, whose dependency
//! graph must be a DAG with anchors as sources and the target as the unique
//! sink.

mod dsl;
mod io;
mod plan;
mod sampler;
mod templates;
mod traverse;

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kg::{EntityId, RelationId};

pub use dsl::{parse_query, serialize_query};
pub use io::{read_query_file, write_query_file, QueryRecord};
pub use plan::{BranchPlan, PlanStep};
pub use sampler::{sample_queries, SampleTarget, SamplerConfig};
pub use templates::Template;
pub use traverse::traverse_answers;

pub type VarId = u32;
pub const TARGET: VarId = 0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Term {
    Anchor(EntityId),
    Var(VarId),
}

impl Term {
    pub fn var(self) -> Option<VarId> {
        match self {
            Term::Var(v) => Some(v),
            Term::Anchor(_) => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Atom {
    pub relation: RelationId,
    pub subject: Term,
    pub object: Term,
    pub negated: bool,
}

impl Atom {
    pub fn new(relation: RelationId, subject: Term, object: Term) -> Self {
        Self { relation, subject, object, negated: false }
    }

    pub fn negated(mut self) -> Self {
        self.negated = true;
        self
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QueryGraph {
    /// Conjunctive branches; the query is their disjunction.
    pub disjuncts: Vec<Vec<Atom>>,
    /// Display names of the variables; index 0 is the target.
    pub var_names: Vec<String>,
}

impl QueryGraph {
    pub fn num_vars(&self) -> usize {
        self.var_names.len()
    }

    /// Variables referenced by a branch, in ascending order.
    pub fn vars_of(&self, disjunct: usize) -> BTreeSet<VarId> {
        self.disjuncts[disjunct]
            .iter()
            .flat_map(|a| [a.subject.var(), a.object.var()])
            .flatten()
            .collect()
    }

    /// Topological order of the branch's variables (ties by index). The target
    /// comes last in any valid branch.
    pub fn topo_order(&self, disjunct: usize) -> Option<Vec<VarId>> {
        let atoms = &self.disjuncts[disjunct];
        let vars = self.vars_of(disjunct);
        let mut indeg: std::collections::BTreeMap<VarId, usize> = vars.iter().map(|&v| (v, 0)).collect();
        for a in atoms {
            if let (Some(_), Some(o)) = (a.subject.var(), a.object.var()) {
                *indeg.get_mut(&o).unwrap() += 1;
            }
        }
        let mut order = Vec::with_capacity(vars.len());
        let mut ready: BTreeSet<VarId> = indeg.iter().filter(|(_, &d)| d == 0).map(|(&v, _)| v).collect();
        while let Some(v) = ready.pop_first() {
            order.push(v);
            for a in atoms.iter().filter(|a| a.subject == Term::Var(v)) {
                if let Some(o) = a.object.var() {
                    let d = indeg.get_mut(&o).unwrap();
                    *d -= 1;
                    if *d == 0 {
                        ready.insert(o);
                    }
                }
            }
        }
        (order.len() == vars.len()).then_some(order)
    }

    pub fn has_negation(&self) -> bool {
        self.disjuncts.iter().flatten().any(|a| a.negated)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ViolationKind {
    NoBranches,
    EmptyBranch,
    VarOutOfRange(VarId),
    AnchorAsObject,
    SelfLoop,
    Cycle,
    MissingTarget,
    TargetHasOutgoingAtom,
    ExtraSink(VarId),
    NoPositiveSupport(VarId),
    UnusedVariable(VarId),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub disjunct: Option<usize>,
    pub atom: Option<usize>,
    pub kind: ViolationKind,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if let Some(d) = self.disjunct {
            write!(f, "branch {d}")?;
            if let Some(a) = self.atom {
                write!(f, " atom {a}")?;
            }
            f.write_str(": ")?;
        }
        match &self.kind {
            ViolationKind::NoBranches => f.write_str("query has no branches"),
            ViolationKind::EmptyBranch => f.write_str("empty conjunction"),
            ViolationKind::VarOutOfRange(v) => write!(f, "variable {v} is not declared"),
            ViolationKind::AnchorAsObject => f.write_str("anchor entity used as an atom object"),
            ViolationKind::SelfLoop => f.write_str("atom relates a variable to itself"),
            ViolationKind::Cycle => f.write_str("dependency graph has a cycle"),
            ViolationKind::MissingTarget => f.write_str("target variable does not occur"),
            ViolationKind::TargetHasOutgoingAtom => f.write_str("target variable is not a sink"),
            ViolationKind::ExtraSink(v) => write!(f, "variable {v} is a second sink"),
            ViolationKind::NoPositiveSupport(v) => {
                write!(f, "variable {v} has no non-negated inbound atom")
            }
            ViolationKind::UnusedVariable(v) => write!(f, "variable {v} is declared but never used"),
        }
    }
}

/// Checks every structural rule and reports all violations.
pub fn validate_query(q: &QueryGraph) -> Vec<Violation> {
    let mut out = Vec::new();
    let mut push = |disjunct, atom, kind| out.push(Violation { disjunct, atom, kind });
    if q.disjuncts.is_empty() {
        push(None, None, ViolationKind::NoBranches);
    }
    if q.var_names.is_empty() {
        push(None, None, ViolationKind::MissingTarget);
        return out;
    }
    let nv = q.num_vars() as VarId;
    let mut used = vec![false; q.num_vars()];
    for (d, atoms) in q.disjuncts.iter().enumerate() {
        if atoms.is_empty() {
            push(Some(d), None, ViolationKind::EmptyBranch);
            continue;
        }
        let mut in_range = true;
        for (i, a) in atoms.iter().enumerate() {
            for v in [a.subject.var(), a.object.var()].into_iter().flatten() {
                if v >= nv {
                    push(Some(d), Some(i), ViolationKind::VarOutOfRange(v));
                    in_range = false;
                } else {
                    used[v as usize] = true;
                }
            }
            if matches!(a.object, Term::Anchor(_)) {
                push(Some(d), Some(i), ViolationKind::AnchorAsObject);
            }
            if a.subject.var().is_some() && a.subject == a.object {
                push(Some(d), Some(i), ViolationKind::SelfLoop);
            }
            if a.subject == Term::Var(TARGET) {
                push(Some(d), Some(i), ViolationKind::TargetHasOutgoingAtom);
            }
        }
        if !in_range {
            continue;
        }
        let vars = q.vars_of(d);
        if !vars.contains(&TARGET) {
            push(Some(d), None, ViolationKind::MissingTarget);
        }
        for &v in &vars {
            if v != TARGET && !atoms.iter().any(|a| a.subject == Term::Var(v)) {
                push(Some(d), None, ViolationKind::ExtraSink(v));
            }
            let positive_in = atoms.iter().any(|a| !a.negated && a.object == Term::Var(v));
            if !positive_in {
                let atom = atoms.iter().position(|a| a.object == Term::Var(v));
                push(Some(d), atom, ViolationKind::NoPositiveSupport(v));
            }
        }
        if atoms.iter().all(|a| a.subject != a.object) && q.topo_order(d).is_none() {
            push(Some(d), None, ViolationKind::Cycle);
        }
    }
    for (v, &u) in used.iter().enumerate() {
        if !u && v as VarId != TARGET {
            push(None, None, ViolationKind::UnusedVariable(v as VarId));
        }
    }
    out
}

pub fn ensure_valid(q: &QueryGraph) -> Result<()> {
    let v = validate_query(q);
    if v.is_empty() {
        Ok(())
    } else {
        Err(Error::InvalidQuery(v))
    }
}

/// The fourteen benchmark query structures.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum QueryType {
    #[serde(rename = "1p")]
    P1,
    #[serde(rename = "2p")]
    P2,
    #[serde(rename = "3p")]
    P3,
    #[serde(rename = "2i")]
    I2,
    #[serde(rename = "3i")]
    I3,
    #[serde(rename = "pi")]
    Pi,
    #[serde(rename = "ip")]
    Ip,
    #[serde(rename = "2u")]
    U2,
    #[serde(rename = "up")]
    Up,
    #[serde(rename = "2in")]
    In2,
    #[serde(rename = "3in")]
    In3,
    #[serde(rename = "inp")]
    Inp,
    #[serde(rename = "pin")]
    Pin,
    #[serde(rename = "pni")]
    Pni,
}

impl QueryType {
    /// Report column order.
    pub const ALL: [QueryType; 14] = [
        QueryType::P1,
        QueryType::P2,
        QueryType::P3,
        QueryType::I2,
        QueryType::I3,
        QueryType::Pi,
        QueryType::Ip,
        QueryType::U2,
        QueryType::Up,
        QueryType::In2,
        QueryType::In3,
        QueryType::Inp,
        QueryType::Pin,
        QueryType::Pni,
    ];

    /// Types used to train the calibration layer: no existential variables.
    pub const TRAINING: [QueryType; 4] = [QueryType::I2, QueryType::I3, QueryType::In2, QueryType::In3];

    pub fn name(self) -> &'static str {
        match self {
            QueryType::P1 => "1p",
            QueryType::P2 => "2p",
            QueryType::P3 => "3p",
            QueryType::I2 => "2i",
            QueryType::I3 => "3i",
            QueryType::Pi => "pi",
            QueryType::Ip => "ip",
            QueryType::U2 => "2u",
            QueryType::Up => "up",
            QueryType::In2 => "2in",
            QueryType::In3 => "3in",
            QueryType::Inp => "inp",
            QueryType::Pin => "pin",
            QueryType::Pni => "pni",
        }
    }

    pub fn has_negation(self) -> bool {
        matches!(self, QueryType::In2 | QueryType::In3 | QueryType::Inp | QueryType::Pin | QueryType::Pni)
    }

    pub fn template(self) -> Template {
        templates::template(self)
    }

    /// Parses a comma-separated list such as `2i,3i,2in,3in`.
    pub fn parse_list(s: &str) -> Result<Vec<QueryType>> {
        s.split(',').map(str::trim).filter(|t| !t.is_empty()).map(str::parse).collect()
    }
}

impl FromStr for QueryType {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        QueryType::ALL
            .into_iter()
            .find(|t| t.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown query type `{s}`")))
    }
}

impl fmt::Display for QueryType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// A query with its answers split into those reachable on the training graph
/// (`easy`) and those that need at least one held-out edge (`hard`).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabeledQuery {
    pub query_type: QueryType,
    pub graph: QueryGraph,
    pub easy: Vec<EntityId>,
    pub hard: Vec<EntityId>,
}

impl LabeledQuery {
    pub fn answers(&self) -> impl Iterator<Item = EntityId> + '_ {
        self.easy.iter().chain(&self.hard).copied()
    }
}
