//! Independent reference implementations shared by integration and
//! acceptance tests. Deliberately naive: full enumeration and full sorts.

#![allow(dead_code)]

use std::collections::HashSet;

use kgcal_core::kg::{EntityId, KnowledgeGraph, Scope, Split, Triple, Vocab};
use kgcal_core::queries::{QueryGraph, Term};
use kgcal_core::rng;

/// Deterministic pseudo-random stream without external crates.
pub struct Draws {
    seed: u64,
    i: u64,
}

impl Draws {
    pub fn new(seed: u64) -> Self {
        Self { seed, i: 0 }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.i += 1;
        rng::indexed_seed(self.seed, "oracle-draws", self.i)
    }

    pub fn below(&mut self, n: u64) -> u64 {
        self.next_u64() % n
    }

    /// Uniform on the 2^-53 lattice of `[0, 1)`.
    pub fn unit(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 / (1u64 << 53) as f64
    }
}

/// Random graph over `ne` entities and `nr` relations: `n` distinct triples,
/// about 70% train and the rest split between valid and test. Reciprocals
/// are added.
pub fn toy_kg(seed: u64, ne: usize, nr: usize, n: usize) -> KnowledgeGraph {
    let mut d = Draws::new(seed);
    let ents = Vocab::from_names((0..ne).map(|i| format!("e{i}")).collect()).unwrap();
    let rels = Vocab::from_names((0..nr).map(|i| format!("r{i}")).collect()).unwrap();
    let mut seen = HashSet::new();
    let mut splits: [Vec<Triple>; 3] = Default::default();
    while seen.len() < n {
        let t = Triple::new(d.below(ne as u64) as u32, d.below(nr as u64) as u32, d.below(ne as u64) as u32);
        if t.subject == t.object || !seen.insert(t) {
            continue;
        }
        let k = match d.below(10) {
            0..=6 => 0,
            7 | 8 => 1,
            _ => 2,
        };
        splits[k].push(t);
    }
    KnowledgeGraph::from_parts(ents, rels, splits).unwrap().add_reciprocals().unwrap()
}

pub fn triple_set(kg: &KnowledgeGraph, scope: Scope) -> HashSet<(u32, u32, u32)> {
    let splits: &[Split] = match scope {
        Scope::TrainOnly => &[Split::Train],
        Scope::AllSplits => &[Split::Train, Split::Valid, Split::Test],
    };
    splits
        .iter()
        .flat_map(|&s| kg.triples(s).iter().map(|t| (t.subject, t.relation, t.object)))
        .collect()
}

/// Answers under Boolean semantics by enumerating every assignment of every
/// variable: `t` answers when, for some branch and some assignment with the
/// target at `t`, every positive atom is an edge and no negated atom is.
pub fn boolean_answers(edges: &HashSet<(u32, u32, u32)>, ne: usize, q: &QueryGraph) -> Vec<EntityId> {
    let nv = q.num_vars();
    let mut out = HashSet::new();
    let total = (ne as u64).pow(nv as u32);
    let mut binding = vec![0u32; nv];
    for code in 0..total {
        let mut c = code;
        for b in binding.iter_mut() {
            *b = (c % ne as u64) as u32;
            c /= ne as u64;
        }
        let val = |t: Term| match t {
            Term::Anchor(e) => e,
            Term::Var(v) => binding[v as usize],
        };
        let holds = q.disjuncts.iter().any(|atoms| {
            atoms.iter().all(|a| edges.contains(&(val(a.subject), a.relation, val(a.object))) != a.negated)
        });
        if holds {
            out.insert(binding[0]);
        }
    }
    let mut v: Vec<EntityId> = out.into_iter().collect();
    v.sort_unstable();
    v
}

/// Rank by sorting every non-excluded entity by (score desc, id asc).
pub fn sort_rank(scores: &[f64], target: EntityId, exclude: &HashSet<EntityId>) -> usize {
    let mut pool: Vec<(f64, EntityId)> = scores
        .iter()
        .enumerate()
        .map(|(e, &s)| (s, e as EntityId))
        .filter(|(_, e)| *e == target || !exclude.contains(e))
        .collect();
    pool.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)));
    pool.iter().position(|&(_, e)| e == target).unwrap() + 1
}

/// Central finite difference of `f` along coordinate `i` of `x`.
pub fn central_difference(f: &mut dyn FnMut(&[f64]) -> f64, x: &[f64], i: usize, h: f64) -> f64 {
    let mut xp = x.to_vec();
    xp[i] += h;
    let up = f(&xp);
    xp[i] = x[i] - h;
    let down = f(&xp);
    (up - down) / (2.0 * h)
}

/// Relative agreement with a small absolute floor for near-zero entries.
pub fn grad_close(analytic: f64, numeric: f64, rel: f64, floor: f64) -> bool {
    (analytic - numeric).abs() <= rel * analytic.abs().max(numeric.abs()) + floor
}
