//! Benchmark-style query sampling. A template is grounded by walking backwards
//! from a random target entity; answers are then recomputed exactly and
//! labelled easy (train graph) or hard (needs a held-out edge).

use std::collections::HashSet;

use rand::seq::IndexedRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::templates::{Slot, SlotAtom};
use super::{serialize_query, traverse_answers, LabeledQuery, QueryType, Template};
use crate::error::{Error, Result};
use crate::kg::{EntityId, KnowledgeGraph, RelationId, Scope};
use crate::rng;

/// Which split the queries are for.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SampleTarget {
    /// Walks and answers use the training graph only; all answers are easy.
    Train,
    /// Walks use every split; at least one answer must be hard.
    Eval,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SamplerConfig {
    pub max_answers: usize,
    /// Attempts allowed per emitted query before giving up.
    pub attempts_per_query: usize,
    pub seed: u64,
    pub target: SampleTarget,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self { max_answers: 100, attempts_per_query: 1000, seed: 0, target: SampleTarget::Eval }
    }
}

struct Adjacency {
    incoming: Vec<Vec<(RelationId, EntityId)>>,
    outgoing: Vec<Vec<(RelationId, EntityId)>>,
    has_incoming: Vec<EntityId>,
}

impl Adjacency {
    fn new(kg: &KnowledgeGraph, scope: Scope) -> Self {
        let n = kg.num_entities();
        let (mut incoming, mut outgoing) = (vec![Vec::new(); n], vec![Vec::new(); n]);
        let index = kg.index(scope);
        for s in 0..n as EntityId {
            for r in 0..kg.num_relations() as RelationId {
                for &o in index.objects(s, r) {
                    incoming[o as usize].push((r, s));
                    outgoing[s as usize].push((r, o));
                }
            }
        }
        let has_incoming = (0..n as EntityId).filter(|&e| !incoming[e as usize].is_empty()).collect();
        Self { incoming, outgoing, has_incoming }
    }
}

struct Grounding {
    vars: Vec<Option<EntityId>>,
    relations: Vec<Option<RelationId>>,
    anchors: Vec<Option<EntityId>>,
}

fn bind_subject(g: &mut Grounding, slot: Slot, e: EntityId) {
    match slot {
        Slot::Anchor(i) => g.anchors[i] = Some(e),
        Slot::Var(v) => g.vars[v as usize] = Some(e),
    }
}

fn subject_of(g: &Grounding, slot: Slot) -> Option<EntityId> {
    match slot {
        Slot::Anchor(i) => g.anchors[i],
        Slot::Var(v) => g.vars[v as usize],
    }
}

/// Grounds one atom whose object is bound. Negated atoms are grounded on an
/// edge into a random other entity, so the negation is satisfiable by the
/// walked target and actually removes something elsewhere.
fn ground_atom(adj: &Adjacency, g: &mut Grounding, a: &SlotAtom, rng: &mut ChaCha8Rng) -> Option<()> {
    let mut object = g.vars[a.object as usize]?;
    if a.negated {
        object = *adj.has_incoming.choose(rng)?;
    }
    let rel = g.relations[a.relation];
    match subject_of(g, a.subject) {
        Some(s) if a.negated => {
            let choices: Vec<_> = adj.outgoing[s as usize].iter().filter(|(r, _)| rel.is_none_or(|x| x == *r)).collect();
            let &&(r, _) = choices.choose(rng)?;
            g.relations[a.relation] = Some(r);
        }
        Some(s) => {
            let choices: Vec<_> = adj.incoming[object as usize]
                .iter()
                .filter(|(r, x)| *x == s && rel.is_none_or(|y| y == *r))
                .collect();
            let &&(r, _) = choices.choose(rng)?;
            g.relations[a.relation] = Some(r);
        }
        None => {
            let choices: Vec<_> =
                adj.incoming[object as usize].iter().filter(|(r, _)| rel.is_none_or(|y| y == *r)).collect();
            let &&(r, x) = choices.choose(rng)?;
            g.relations[a.relation] = Some(r);
            bind_subject(g, a.subject, x);
        }
    }
    Some(())
}

fn ground(t: &Template, adj: &Adjacency, rng: &mut ChaCha8Rng) -> Option<(Vec<RelationId>, Vec<EntityId>)> {
    let mut g = Grounding {
        vars: vec![None; t.num_vars],
        relations: vec![None; t.num_relations],
        anchors: vec![None; t.num_anchors],
    };
    g.vars[0] = Some(*adj.has_incoming.choose(rng)?);
    let atoms: Vec<&SlotAtom> = t.disjuncts.iter().flatten().collect();
    let mut done = vec![false; atoms.len()];
    // Later atoms first: templates list atoms source-to-target, so walking in
    // reverse reaches every object before its subject is needed.
    while let Some(i) = (0..atoms.len()).rev().find(|&i| !done[i] && g.vars[atoms[i].object as usize].is_some()) {
        ground_atom(adj, &mut g, atoms[i], rng)?;
        done[i] = true;
    }
    if done.iter().any(|d| !d) {
        return None;
    }
    let rels = g.relations.into_iter().collect::<Option<Vec<_>>>()?;
    let anchors = g.anchors.into_iter().collect::<Option<Vec<_>>>()?;
    Some((rels, anchors))
}

/// Samples `count` distinct queries of one type. Deterministic given the seed:
/// query `i` draws from its own stream derived from `(seed, type, i)`.
pub fn sample_queries(
    kg: &KnowledgeGraph,
    query_type: QueryType,
    count: usize,
    config: &SamplerConfig,
) -> Result<Vec<LabeledQuery>> {
    if count == 0 {
        return Ok(Vec::new());
    }
    let walk_scope = match config.target {
        SampleTarget::Train => Scope::TrainOnly,
        SampleTarget::Eval => Scope::AllSplits,
    };
    let adj = Adjacency::new(kg, walk_scope);
    let template = query_type.template();
    let label = format!("sample-{query_type}-{:?}", config.target);
    let mut seen = HashSet::new();
    let mut out = Vec::with_capacity(count);
    for i in 0..count {
        let mut rng = ChaCha8Rng::seed_from_u64(rng::indexed_seed(config.seed, &label, i as u64));
        let mut emitted = false;
        for _ in 0..config.attempts_per_query {
            let Some((rels, anchors)) = ground(&template, &adj, &mut rng) else { continue };
            let graph = template.instantiate(&rels, &anchors);
            let easy = traverse_answers(kg, &graph, Scope::TrainOnly);
            let (easy, hard) = match config.target {
                SampleTarget::Train => (easy, Vec::new()),
                SampleTarget::Eval => {
                    let all = traverse_answers(kg, &graph, Scope::AllSplits);
                    let hard: Vec<EntityId> = all.into_iter().filter(|e| easy.binary_search(e).is_err()).collect();
                    (easy, hard)
                }
            };
            let total = easy.len() + hard.len();
            let reject = match config.target {
                SampleTarget::Train => total == 0,
                SampleTarget::Eval => hard.is_empty(),
            };
            if reject || total > config.max_answers {
                continue;
            }
            if !seen.insert(serialize_query(&graph, kg.entities(), kg.relations())) {
                continue;
            }
            out.push(LabeledQuery { query_type, graph, easy, hard });
            emitted = true;
            break;
        }
        if !emitted {
            return Err(Error::Budget(format!(
                "no valid {query_type} query after {} attempts (query {i} of {count})",
                config.attempts_per_query
            )));
        }
    }
    Ok(out)
}
