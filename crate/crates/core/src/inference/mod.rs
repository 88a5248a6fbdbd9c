//! Query answering by beam search over variable substitutions, plus exact
//! enumeration oracles.
//!
//! Every scorer evaluates a branch by folding atom truths with the t-norm in
//! [`BranchPlan`] order, and combines branches with the t-conorm in branch
//! order. Beam entries that agree on every variable still read by later atoms
//! are merged, keeping the best, so a beam as wide as the entity set is exact
//! on tree-shaped branches.

use std::cmp::Ordering;
use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::adapter::CalibratedScorer;
use crate::error::{Error, Result};
use crate::fuzzy::FuzzySemantics;
use crate::kg::{EntityId, RelationId};
use crate::queries::{ensure_valid, Atom, BranchPlan, QueryGraph, Term, VarId, TARGET};

pub const DEFAULT_BEAM_K: usize = 1024;
/// Default cap on substitutions enumerated by the exact oracles.
pub const DEFAULT_BUDGET: u64 = 1_000_000;

/// Entities with scores, best first; ties by ascending id.
pub type Ranking = Vec<(EntityId, f64)>;

#[inline]
fn desc(a: f64, b: f64) -> Ordering {
    b.partial_cmp(&a).expect("scores are never NaN")
}

fn sort_ranking(r: &mut Ranking) {
    r.sort_by(|x, y| desc(x.1, y.1).then(x.0.cmp(&y.0)));
}

/// Memoised calibrated score vectors for one query.
pub struct VectorCache<'s> {
    scorer: &'s CalibratedScorer<'s>,
    map: HashMap<(EntityId, RelationId), Vec<f64>>,
}

impl<'s> VectorCache<'s> {
    pub fn new(scorer: &'s CalibratedScorer<'s>) -> Self {
        Self { scorer, map: HashMap::new() }
    }

    pub fn get(&mut self, s: EntityId, p: RelationId) -> &[f64] {
        let scorer = self.scorer;
        self.map.entry((s, p)).or_insert_with(|| scorer.atom_scores(s, p))
    }

    fn ensure(&mut self, s: EntityId, p: RelationId) {
        self.get(s, p);
    }

    fn peek(&self, s: EntityId, p: RelationId) -> &[f64] {
        &self.map[&(s, p)]
    }
}

fn subject_of(atom: &Atom, binding: &[Option<EntityId>]) -> Result<EntityId> {
    match atom.subject {
        Term::Anchor(e) => Ok(e),
        Term::Var(v) => binding[v as usize].ok_or(Error::UnboundVariable(v as usize)),
    }
}

fn object_of(atom: &Atom, binding: &[Option<EntityId>]) -> Result<EntityId> {
    match atom.object {
        Term::Anchor(e) => Ok(e),
        Term::Var(v) => binding[v as usize].ok_or(Error::UnboundVariable(v as usize)),
    }
}

/// Truth of one atom under a binding, negation applied.
fn atom_truth(cache: &mut VectorCache<'_>, sem: FuzzySemantics, atom: &Atom, binding: &[Option<EntityId>]) -> Result<f64> {
    let s = subject_of(atom, binding)?;
    let o = object_of(atom, binding)?;
    let x = cache.get(s, atom.relation)[o as usize];
    Ok(if atom.negated { sem.negate(x) } else { x })
}

#[inline]
fn fold_step(sem: FuzzySemantics, acc: Option<f64>, x: f64) -> f64 {
    match acc {
        None => x,
        Some(a) => sem.tnorm(a, x),
    }
}

/// t-norm fold of a fully bound branch, in plan order.
fn branch_truth(
    cache: &mut VectorCache<'_>,
    sem: FuzzySemantics,
    atoms: &[Atom],
    plan: &BranchPlan,
    binding: &[Option<EntityId>],
) -> Result<f64> {
    let mut acc = None;
    for i in plan.atom_order() {
        acc = Some(fold_step(sem, acc, atom_truth(cache, sem, &atoms[i], binding)?));
    }
    Ok(acc.expect("validated branches are non-empty"))
}

/// Combines per-branch answer scores with the t-conorm in branch order.
/// Entities missing from a branch contribute 0.
fn combine_branches(sem: FuzzySemantics, branches: &[HashMap<EntityId, f64>]) -> Ranking {
    let mut entities: Vec<EntityId> = branches.iter().flat_map(|b| b.keys().copied()).collect();
    entities.sort_unstable();
    entities.dedup();
    let mut out: Ranking = entities
        .into_iter()
        .map(|e| {
            let s = sem
                .tnorm
                .fold_conorm(branches.iter().map(|b| b.get(&e).copied().unwrap_or(0.0)))
                .expect("at least one branch");
            (e, s)
        })
        .collect();
    sort_ranking(&mut out);
    out
}

/// Score of a full substitution: branch folds combined across branches.
/// `binding[v]` is the entity bound to variable `v`.
pub fn score_assignment(
    scorer: &CalibratedScorer<'_>,
    sem: FuzzySemantics,
    query: &QueryGraph,
    binding: &[Option<EntityId>],
) -> Result<f64> {
    ensure_valid(query)?;
    if binding.len() < query.num_vars() {
        return Err(Error::UnboundVariable(binding.len()));
    }
    let mut cache = VectorCache::new(scorer);
    let mut acc: Option<f64> = None;
    for (d, atoms) in query.disjuncts.iter().enumerate() {
        let t = branch_truth(&mut cache, sem, atoms, &BranchPlan::new(query, d), binding)?;
        acc = Some(match acc {
            None => t,
            Some(a) => sem.tconorm(a, t),
        });
    }
    Ok(acc.expect("validated queries have a branch"))
}

/// Calls `f` with every binding of `vars` over `0..ne`, the other slots of
/// `binding` left as given.
fn for_each_binding(
    ne: usize,
    vars: &[VarId],
    binding: &mut Vec<Option<EntityId>>,
    f: &mut dyn FnMut(&[Option<EntityId>]) -> Result<()>,
) -> Result<()> {
    match vars.split_first() {
        None => f(binding),
        Some((&v, rest)) => {
            for e in 0..ne as EntityId {
                binding[v as usize] = Some(e);
                for_each_binding(ne, rest, binding, f)?;
            }
            binding[v as usize] = None;
            Ok(())
        }
    }
}

fn check_budget(ne: usize, counts: impl IntoIterator<Item = usize>, budget: u64) -> Result<()> {
    let mut total: u64 = 0;
    for c in counts {
        let n = (ne as u64).checked_pow(c as u32).unwrap_or(u64::MAX);
        total = total.saturating_add(n);
    }
    if total > budget {
        return Err(Error::Budget(format!("exact enumeration needs {total} evaluations, budget is {budget}")));
    }
    Ok(())
}

/// Exact answer score of one candidate: per branch, the maximum over all
/// bindings of the existential variables with the target fixed.
pub(crate) fn exact_candidate_score(
    scorer: &CalibratedScorer<'_>,
    sem: FuzzySemantics,
    query: &QueryGraph,
    candidate: EntityId,
    budget: u64,
) -> Result<f64> {
    ensure_valid(query)?;
    let ne = scorer.num_entities();
    let plans: Vec<BranchPlan> = (0..query.disjuncts.len()).map(|d| BranchPlan::new(query, d)).collect();
    check_budget(ne, plans.iter().map(|p| p.num_existential()), budget)?;
    let mut cache = VectorCache::new(scorer);
    let mut acc: Option<f64> = None;
    for (atoms, plan) in query.disjuncts.iter().zip(&plans) {
        let vars: Vec<VarId> = plan.steps.iter().map(|s| s.var).filter(|&v| v != TARGET).collect();
        let mut binding = vec![None; query.num_vars()];
        binding[TARGET as usize] = Some(candidate);
        let mut best = f64::NEG_INFINITY;
        for_each_binding(ne, &vars, &mut binding, &mut |b| {
            best = best.max(branch_truth(&mut cache, sem, atoms, plan, b)?);
            Ok(())
        })?;
        acc = Some(match acc {
            None => best,
            Some(a) => sem.tconorm(a, best),
        });
    }
    Ok(acc.expect("validated queries have a branch"))
}

/// Exact ranking of every entity by enumerating all substitutions.
pub fn exhaustive_answer(
    scorer: &CalibratedScorer<'_>,
    sem: FuzzySemantics,
    query: &QueryGraph,
    budget: u64,
) -> Result<Ranking> {
    ensure_valid(query)?;
    let ne = scorer.num_entities();
    let plans: Vec<BranchPlan> = (0..query.disjuncts.len()).map(|d| BranchPlan::new(query, d)).collect();
    check_budget(ne, plans.iter().map(|p| p.steps.len()), budget)?;
    let mut cache = VectorCache::new(scorer);
    let mut branches = Vec::with_capacity(plans.len());
    for (atoms, plan) in query.disjuncts.iter().zip(&plans) {
        let vars: Vec<VarId> = plan.steps.iter().map(|s| s.var).collect();
        let mut best: HashMap<EntityId, f64> = HashMap::new();
        let mut binding = vec![None; query.num_vars()];
        for_each_binding(ne, &vars, &mut binding, &mut |b| {
            let t = b[TARGET as usize].expect("target enumerated");
            let s = branch_truth(&mut cache, sem, atoms, plan, b)?;
            best.entry(t).and_modify(|x| *x = x.max(s)).or_insert(s);
            Ok(())
        })?;
        branches.push(best);
    }
    Ok(combine_branches(sem, &branches))
}

/// One retained substitution at a beam step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    /// Index of the entry in the previous step of the same branch.
    pub parent: Option<usize>,
    /// Entity bound to the step's variable.
    pub entity: EntityId,
    /// Truths of the step's atoms, negation applied, in step order.
    pub atom_scores: Vec<f64>,
    /// Fold of every atom truth along the parent chain.
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceStep {
    pub disjunct: usize,
    pub var: VarId,
    /// Indices into the branch's atom list.
    pub atoms: Vec<usize>,
    pub entries: Vec<TraceEntry>,
}

/// Record of a beam search, sufficient to recompute its ranking.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trace {
    pub semantics: FuzzySemantics,
    pub beam_k: usize,
    pub steps: Vec<TraceStep>,
}

impl Trace {
    /// Recomputes every final score from the recorded atom truths.
    pub fn replay(&self) -> Ranking {
        let sem = self.semantics;
        let n_branches = self.steps.iter().map(|s| s.disjunct + 1).max().unwrap_or(0);
        let mut branches = vec![HashMap::new(); n_branches];
        for (i, step) in self.steps.iter().enumerate() {
            let last = self.steps.get(i + 1).is_none_or(|n| n.disjunct != step.disjunct);
            if !last {
                continue;
            }
            for entry in &step.entries {
                let mut chain = vec![entry];
                let (mut j, mut cur) = (i, entry);
                while let Some(p) = cur.parent {
                    j -= 1;
                    cur = &self.steps[j].entries[p];
                    chain.push(cur);
                }
                let mut acc = None;
                for e in chain.iter().rev() {
                    for &x in &e.atom_scores {
                        acc = Some(fold_step(sem, acc, x));
                    }
                }
                let s = acc.expect("entries carry atom scores");
                branches[step.disjunct].entry(entry.entity).and_modify(|x: &mut f64| *x = x.max(s)).or_insert(s);
            }
        }
        combine_branches(sem, &branches)
    }
}

struct Entry {
    binding: Vec<Option<EntityId>>,
    score: Option<f64>,
}

/// Top `k` indices of `xs` by value descending, then index ascending.
fn top_k(xs: &[f64], k: usize) -> Vec<usize> {
    let cmp = |&a: &usize, &b: &usize| desc(xs[a], xs[b]).then(a.cmp(&b));
    let mut idx: Vec<usize> = (0..xs.len()).collect();
    if k < idx.len() {
        idx.select_nth_unstable_by(k - 1, cmp);
        idx.truncate(k);
    }
    idx.sort_unstable_by(cmp);
    idx
}

/// Beam search with width `k`. Returns every entity reached by a final beam,
/// ranked, and the search trace.
pub fn beam_answer(
    scorer: &CalibratedScorer<'_>,
    sem: FuzzySemantics,
    query: &QueryGraph,
    k: usize,
) -> Result<(Ranking, Trace)> {
    if k == 0 {
        return Err(Error::Config("beam width must be at least 1".into()));
    }
    ensure_valid(query)?;
    let ne = scorer.num_entities();
    let nv = query.num_vars();
    let mut cache = VectorCache::new(scorer);
    let mut trace = Trace { semantics: sem, beam_k: k, steps: Vec::new() };
    let mut branches = Vec::with_capacity(query.disjuncts.len());
    for (d, atoms) in query.disjuncts.iter().enumerate() {
        let plan = BranchPlan::new(query, d);
        let mut beam = vec![Entry { binding: vec![None; nv], score: None }];
        for (si, step) in plan.steps.iter().enumerate() {
            let last = si + 1 == plan.steps.len();
            let subjects = |e: &Entry| -> Vec<EntityId> {
                step.atoms.iter().map(|&a| subject_of(&atoms[a], &e.binding).expect("subjects bound earlier")).collect()
            };
            for e in &beam {
                for (&a, s) in step.atoms.iter().zip(subjects(e)) {
                    cache.ensure(s, atoms[a].relation);
                }
            }
            // expand every entry, keeping its own top k
            let mut cands: Vec<(usize, EntityId, f64)> = Vec::new();
            let mut combined = vec![0.0; ne];
            for (i, e) in beam.iter().enumerate() {
                let subj = subjects(e);
                for (o, slot) in combined.iter_mut().enumerate() {
                    let mut acc = e.score;
                    for (&a, &s) in step.atoms.iter().zip(&subj) {
                        let x = cache.peek(s, atoms[a].relation)[o];
                        let x = if atoms[a].negated { sem.negate(x) } else { x };
                        acc = Some(fold_step(sem, acc, x));
                    }
                    *slot = acc.expect("steps have inbound atoms");
                }
                cands.extend(top_k(&combined, k).into_iter().map(|o| (i, o as EntityId, combined[o])));
            }
            // merge candidates that agree on every variable still needed
            let key_vars: Vec<VarId> = if last { vec![TARGET] } else { step.live_after.clone() };
            let bind = |&(i, o, _): &(usize, EntityId, f64)| {
                let mut b = beam[i].binding.clone();
                b[step.var as usize] = Some(o);
                b
            };
            let better = |x: &(usize, EntityId, f64), y: &(usize, EntityId, f64)| {
                desc(x.2, y.2).then_with(|| bind(x).cmp(&bind(y))) == Ordering::Less
            };
            let mut best: HashMap<Vec<Option<EntityId>>, (usize, EntityId, f64)> = HashMap::new();
            for c in cands {
                let b = bind(&c);
                let key: Vec<Option<EntityId>> = key_vars.iter().map(|&v| b[v as usize]).collect();
                match best.get_mut(&key) {
                    Some(cur) if !better(&c, cur) => {}
                    Some(cur) => *cur = c,
                    None => {
                        best.insert(key, c);
                    }
                }
            }
            let mut kept: Vec<(Vec<Option<EntityId>>, (usize, EntityId, f64))> =
                best.into_values().map(|c| (bind(&c), c)).collect();
            kept.sort_by(|x, y| desc(x.1 .2, y.1 .2).then_with(|| x.0.cmp(&y.0)));
            kept.truncate(k);

            let mut entries = Vec::with_capacity(kept.len());
            let mut next = Vec::with_capacity(kept.len());
            for (binding, (i, o, score)) in kept {
                let atom_scores = step
                    .atoms
                    .iter()
                    .map(|&a| atom_truth(&mut cache, sem, &atoms[a], &binding).expect("bound"))
                    .collect();
                entries.push(TraceEntry { parent: (si > 0).then_some(i), entity: o, atom_scores, score });
                next.push(Entry { binding, score: Some(score) });
            }
            trace.steps.push(TraceStep { disjunct: d, var: step.var, atoms: step.atoms.clone(), entries });
            beam = next;
        }
        let mut answers: HashMap<EntityId, f64> = HashMap::with_capacity(beam.len());
        for e in &beam {
            let t = e.binding[TARGET as usize].expect("target bound at the last step");
            let s = e.score.expect("scored");
            answers.entry(t).and_modify(|x| *x = x.max(s)).or_insert(s);
        }
        branches.push(answers);
    }
    Ok((combine_branches(sem, &branches), trace))
}

/// Beam-search answering with fixed scorer, semantics and width.
#[derive(Debug, Clone, Copy)]
pub struct Engine<'a> {
    pub scorer: CalibratedScorer<'a>,
    pub semantics: FuzzySemantics,
    pub beam_k: usize,
}

impl<'a> Engine<'a> {
    pub fn new(scorer: CalibratedScorer<'a>, semantics: FuzzySemantics, beam_k: usize) -> Self {
        Self { scorer, semantics, beam_k }
    }

    pub fn answer(&self, query: &QueryGraph) -> Result<(Ranking, Trace)> {
        beam_answer(&self.scorer, self.semantics, query, self.beam_k)
    }

    /// Score of every entity; those no final beam reached score 0.
    pub fn score_vector(&self, query: &QueryGraph) -> Result<Vec<f64>> {
        let (ranking, _) = self.answer(query)?;
        let mut v = vec![0.0; self.scorer.num_entities()];
        for (e, s) in ranking {
            v[e as usize] = s;
        }
        Ok(v)
    }
}
