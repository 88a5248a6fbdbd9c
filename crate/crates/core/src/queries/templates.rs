use super::{Atom, QueryGraph, QueryType, Term, VarId};
use crate::kg::{EntityId, RelationId};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Slot {
    Anchor(usize),
    Var(VarId),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct SlotAtom {
    pub relation: usize,
    pub subject: Slot,
    pub object: VarId,
    pub negated: bool,
}

/// A query structure with relation and anchor placeholders. Slots shared
/// between branches (as in `up`) must receive the same value.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Template {
    pub(crate) num_vars: usize,
    pub(crate) num_relations: usize,
    pub(crate) num_anchors: usize,
    pub(crate) disjuncts: Vec<Vec<SlotAtom>>,
}

const fn pos(relation: usize, subject: Slot, object: VarId) -> SlotAtom {
    SlotAtom { relation, subject, object, negated: false }
}

const fn neg(relation: usize, subject: Slot, object: VarId) -> SlotAtom {
    SlotAtom { relation, subject, object, negated: true }
}

use Slot::{Anchor as A, Var as V};

pub(crate) fn template(t: QueryType) -> Template {
    let (num_vars, disjuncts): (usize, Vec<Vec<SlotAtom>>) = match t {
        QueryType::P1 => (1, vec![vec![pos(0, A(0), 0)]]),
        QueryType::P2 => (2, vec![vec![pos(0, A(0), 1), pos(1, V(1), 0)]]),
        QueryType::P3 => (3, vec![vec![pos(0, A(0), 1), pos(1, V(1), 2), pos(2, V(2), 0)]]),
        QueryType::I2 => (1, vec![vec![pos(0, A(0), 0), pos(1, A(1), 0)]]),
        QueryType::I3 => (1, vec![vec![pos(0, A(0), 0), pos(1, A(1), 0), pos(2, A(2), 0)]]),
        QueryType::Pi => (2, vec![vec![pos(0, A(0), 1), pos(1, V(1), 0), pos(2, A(1), 0)]]),
        QueryType::Ip => (2, vec![vec![pos(0, A(0), 1), pos(1, A(1), 1), pos(2, V(1), 0)]]),
        QueryType::U2 => (1, vec![vec![pos(0, A(0), 0)], vec![pos(1, A(1), 0)]]),
        QueryType::Up => (
            2,
            vec![vec![pos(0, A(0), 1), pos(2, V(1), 0)], vec![pos(1, A(1), 1), pos(2, V(1), 0)]],
        ),
        QueryType::In2 => (1, vec![vec![pos(0, A(0), 0), neg(1, A(1), 0)]]),
        QueryType::In3 => (1, vec![vec![pos(0, A(0), 0), pos(1, A(1), 0), neg(2, A(2), 0)]]),
        QueryType::Inp => (2, vec![vec![pos(0, A(0), 1), neg(1, A(1), 1), pos(2, V(1), 0)]]),
        QueryType::Pin => (2, vec![vec![pos(0, A(0), 1), pos(1, V(1), 0), neg(2, A(1), 0)]]),
        QueryType::Pni => (2, vec![vec![pos(0, A(0), 1), neg(1, V(1), 0), pos(2, A(1), 0)]]),
    };
    let atoms = disjuncts.iter().flatten();
    let num_relations = atoms.clone().map(|a| a.relation + 1).max().unwrap_or(0);
    let num_anchors = atoms
        .filter_map(|a| match a.subject {
            Slot::Anchor(i) => Some(i + 1),
            Slot::Var(_) => None,
        })
        .max()
        .unwrap_or(0);
    Template { num_vars, num_relations, num_anchors, disjuncts }
}

impl Template {
    pub fn num_vars(&self) -> usize {
        self.num_vars
    }

    pub fn num_relations(&self) -> usize {
        self.num_relations
    }

    pub fn num_anchors(&self) -> usize {
        self.num_anchors
    }

    /// Fills the slots. `relations.len()` and `anchors.len()` must match the
    /// template's slot counts.
    pub fn instantiate(&self, relations: &[RelationId], anchors: &[EntityId]) -> QueryGraph {
        assert_eq!(relations.len(), self.num_relations);
        assert_eq!(anchors.len(), self.num_anchors);
        let disjuncts = self
            .disjuncts
            .iter()
            .map(|atoms| {
                atoms
                    .iter()
                    .map(|a| Atom {
                        relation: relations[a.relation],
                        subject: match a.subject {
                            Slot::Anchor(i) => Term::Anchor(anchors[i]),
                            Slot::Var(v) => Term::Var(v),
                        },
                        object: Term::Var(a.object),
                        negated: a.negated,
                    })
                    .collect()
            })
            .collect();
        let mut var_names = vec!["T".to_string()];
        var_names.extend((1..self.num_vars).map(|i| format!("V{i}")));
        QueryGraph { disjuncts, var_names }
    }

    /// Instantiation with relation slot `i` -> relation `i` and anchor slot `i`
    /// -> entity `i`.
    pub fn instantiate_dummy(&self) -> QueryGraph {
        let rels: Vec<RelationId> = (0..self.num_relations as u32).collect();
        let anchors: Vec<EntityId> = (0..self.num_anchors as u32).collect();
        self.instantiate(&rels, &anchors)
    }
}
