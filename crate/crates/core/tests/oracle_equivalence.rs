#[path = "common/oracles.rs"]
mod oracles;

use kgcal_core::adapter::{AdapterParams, CalibratedScorer};
use kgcal_core::fuzzy::{FuzzySemantics, Negation, TNorm};
use kgcal_core::inference::{beam_answer, exhaustive_answer, score_assignment, DEFAULT_BUDGET};
use kgcal_core::kg::Scope;
use kgcal_core::linkpred::{train_lp, LpTrainConfig};
use kgcal_core::queries::{sample_queries, traverse_answers, QueryType, SampleTarget, SamplerConfig};

fn trained(seed: u64) -> (kgcal_core::kg::KnowledgeGraph, kgcal_core::linkpred::EmbeddingTable) {
    let kg = oracles::toy_kg(seed, 14, 3, 60);
    let cfg = LpTrainConfig { dim: 8, steps: 150, batch_size: 32, seed, ..Default::default() };
    let lp = train_lp(&kg, &cfg, |_, _| {}).unwrap();
    (kg, lp)
}

#[test]
fn beam_at_full_width_equals_enumeration() {
    let (kg, lp) = trained(21);
    let scorer = CalibratedScorer::uncalibrated(&lp);
    let ne = kg.num_entities();
    let sampler = SamplerConfig { seed: 4, target: SampleTarget::Eval, max_answers: ne, ..Default::default() };
    for sem in [FuzzySemantics::default(), FuzzySemantics::new(TNorm::Godel, Negation::StrictCosine)] {
        for t in QueryType::ALL {
            for q in sample_queries(&kg, t, 4, &sampler).unwrap() {
                let (beam, trace) = beam_answer(&scorer, sem, &q.graph, ne).unwrap();
                let exact = exhaustive_answer(&scorer, sem, &q.graph, DEFAULT_BUDGET).unwrap();
                assert_eq!(beam, exact, "{t}");
                assert_eq!(trace.replay(), beam);
            }
        }
    }
}

#[test]
fn traversal_equals_boolean_enumeration() {
    let kg = oracles::toy_kg(5, 12, 3, 50);
    let sampler = SamplerConfig { seed: 9, target: SampleTarget::Eval, max_answers: 12, ..Default::default() };
    for scope in [Scope::TrainOnly, Scope::AllSplits] {
        let edges = oracles::triple_set(&kg, scope);
        for t in QueryType::ALL {
            for q in sample_queries(&kg, t, 5, &sampler).unwrap() {
                let got = traverse_answers(&kg, &q.graph, scope);
                assert_eq!(got, oracles::boolean_answers(&edges, kg.num_entities(), &q.graph), "{t} {scope:?}");
            }
        }
    }
}

#[test]
fn replaying_a_path_substitution_matches_its_score() {
    let (kg, lp) = trained(8);
    let id = AdapterParams::identity(lp.dim());
    let scorer = CalibratedScorer::new(&lp, Some(&id)).unwrap();
    let sem = FuzzySemantics::default();
    let sampler = SamplerConfig { seed: 1, target: SampleTarget::Eval, max_answers: 14, ..Default::default() };
    for q in sample_queries(&kg, QueryType::P3, 3, &sampler).unwrap() {
        let (_, trace) = beam_answer(&scorer, sem, &q.graph, 5).unwrap();
        // walk the best final entry back to a full substitution
        let last = trace.steps.len() - 1;
        let mut binding = vec![None; q.graph.num_vars()];
        let (mut j, mut entry) = (last, &trace.steps[last].entries[0]);
        loop {
            binding[trace.steps[j].var as usize] = Some(entry.entity);
            match entry.parent {
                Some(p) => {
                    j -= 1;
                    entry = &trace.steps[j].entries[p];
                }
                None => break,
            }
        }
        let s = score_assignment(&scorer, sem, &q.graph, &binding).unwrap();
        assert_eq!(s, trace.steps[last].entries[0].score);
    }
}
