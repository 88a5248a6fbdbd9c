//! Exact answer sets under Boolean semantics: `t` answers a branch iff some
//! assignment of the existential variables, with the target set to `t`,
//! satisfies every positive atom and violates no negated atom in the graph.

use std::collections::BTreeSet;

use super::{Atom, QueryGraph, Term, VarId, TARGET};
use crate::kg::{AdjacencyIndex, EntityId, KnowledgeGraph, Scope};

/// Exact answer set of a validated query, sorted ascending.
pub fn traverse_answers(kg: &KnowledgeGraph, q: &QueryGraph, scope: Scope) -> Vec<EntityId> {
    let index = kg.index(scope);
    let mut answers = BTreeSet::new();
    for d in 0..q.disjuncts.len() {
        let order = q.topo_order(d).expect("traverse_answers requires a validated query");
        let atoms = &q.disjuncts[d];
        let tree = order
            .iter()
            .filter(|&&v| v != TARGET)
            .all(|&v| atoms.iter().filter(|a| a.subject == Term::Var(v)).count() == 1);
        if tree {
            answers.extend(sweep(index, kg.num_entities(), atoms, &order, q.num_vars()));
        } else {
            let mut binding = vec![None; q.num_vars()];
            backtrack(index, atoms, &order, 0, &mut binding, &mut answers);
        }
    }
    answers.into_iter().collect()
}

/// Set-at-a-time evaluation. Exact when every existential variable has exactly
/// one outgoing atom: the branch is then a tree rooted at the target and the
/// subtrees feeding a variable can be chosen independently.
fn sweep(index: &AdjacencyIndex, num_entities: usize, atoms: &[Atom], order: &[VarId], nv: usize) -> Vec<EntityId> {
    let mut sets: Vec<Vec<EntityId>> = vec![Vec::new(); nv];
    for &v in order {
        let mut current: Option<BTreeSet<EntityId>> = None;
        let inbound = || atoms.iter().filter(move |a| a.object == Term::Var(v));
        for a in inbound().filter(|a| !a.negated) {
            let image: BTreeSet<EntityId> = match a.subject {
                Term::Anchor(s) => index.objects(s, a.relation).iter().copied().collect(),
                Term::Var(u) => sets[u as usize].iter().flat_map(|&x| index.objects(x, a.relation)).copied().collect(),
            };
            current = Some(match current {
                None => image,
                Some(c) => c.intersection(&image).copied().collect(),
            });
        }
        let mut current = current.unwrap_or_default();
        for a in inbound().filter(|a| a.negated) {
            // t is blocked when every admissible subject links to it
            let sources: &[EntityId] = match a.subject {
                Term::Anchor(ref s) => std::slice::from_ref(s),
                Term::Var(u) => &sets[u as usize],
            };
            current.retain(|&t| !sources.iter().all(|&x| index.contains(x, a.relation, t)));
        }
        if current.is_empty() {
            return Vec::new();
        }
        debug_assert!(current.iter().all(|&e| (e as usize) < num_entities));
        sets[v as usize] = current.into_iter().collect();
    }
    std::mem::take(&mut sets[TARGET as usize])
}

fn candidates(index: &AdjacencyIndex, atoms: &[Atom], v: VarId, binding: &[Option<EntityId>]) -> Vec<EntityId> {
    let resolve = |t: Term| match t {
        Term::Anchor(e) => e,
        Term::Var(u) => binding[u as usize].expect("subject bound before object in topological order"),
    };
    let inbound: Vec<&Atom> = atoms.iter().filter(|a| a.object == Term::Var(v)).collect();
    let mut positives = inbound.iter().filter(|a| !a.negated);
    let first = positives.next().expect("validated: positive support");
    let mut out: Vec<EntityId> = index.objects(resolve(first.subject), first.relation).to_vec();
    for a in positives {
        let s = resolve(a.subject);
        out.retain(|&t| index.contains(s, a.relation, t));
    }
    for a in inbound.iter().filter(|a| a.negated) {
        let s = resolve(a.subject);
        out.retain(|&t| !index.contains(s, a.relation, t));
    }
    out
}

fn backtrack(
    index: &AdjacencyIndex,
    atoms: &[Atom],
    order: &[VarId],
    depth: usize,
    binding: &mut Vec<Option<EntityId>>,
    answers: &mut BTreeSet<EntityId>,
) {
    let v = order[depth];
    for e in candidates(index, atoms, v, binding) {
        if depth + 1 == order.len() {
            answers.insert(e);
        } else {
            binding[v as usize] = Some(e);
            backtrack(index, atoms, order, depth + 1, binding, answers);
        }
    }
    binding[v as usize] = None;
}
