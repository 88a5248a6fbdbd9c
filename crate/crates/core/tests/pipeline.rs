#[path = "common/oracles.rs"]
mod oracles;

use std::fs;

use kgcal_core::adapter::{train_adapter, AdapterConfig, AdapterTrainConfig, CalibratedScorer};
use kgcal_core::evalx::evaluate;
use kgcal_core::fuzzy::FuzzySemantics;
use kgcal_core::inference::Engine;
use kgcal_core::kg::{ingest_triples, KnowledgeGraph, Split};
use kgcal_core::linkpred::{train_lp, LpTrainConfig};
use kgcal_core::queries::{read_query_file, sample_queries, write_query_file, QueryType, SampleTarget, SamplerConfig};

#[test]
fn memorizing_predictor_ranks_every_hard_one_hop_answer_first() {
    let kg = oracles::toy_kg(3, 16, 2, 50);
    // train on every split so held-out edges are memorized
    let all: Vec<_> = Split::ALL.iter().flat_map(|&s| kg.triples(s).iter().copied()).collect();
    let base: Vec<_> = all.into_iter().filter(|t| !kg.is_derived(t)).collect();
    let full = KnowledgeGraph::from_parts(
        kg.entities().clone(),
        kgcal_core::kg::Vocab::from_names(kg.relations().names()[..kg.num_base_relations()].to_vec()).unwrap(),
        [base, vec![], vec![]],
    )
    .unwrap()
    .add_reciprocals()
    .unwrap();
    let cfg = LpTrainConfig { dim: 32, steps: 600, batch_size: 64, n3_weight: 1e-4, seed: 1, ..Default::default() };
    let lp = train_lp(&full, &cfg, |_, _| {}).unwrap();

    let sampler = SamplerConfig { seed: 2, target: SampleTarget::Eval, ..Default::default() };
    let queries = sample_queries(&kg, QueryType::P1, 10, &sampler).unwrap();
    let engine = Engine::new(CalibratedScorer::uncalibrated(&lp), FuzzySemantics::default(), kg.num_entities());
    let report = evaluate(&engine, &queries).unwrap();
    assert_eq!(report.per_type[&QueryType::P1].mrr, 1.0);
}

#[test]
fn adapter_loss_decreases_over_every_window() {
    let kg = oracles::toy_kg(11, 50, 4, 300);
    let lp = train_lp(&kg, &LpTrainConfig { dim: 8, steps: 200, batch_size: 64, seed: 4, ..Default::default() }, |_, _| {})
        .unwrap();
    let sampler = SamplerConfig { seed: 5, target: SampleTarget::Train, ..Default::default() };
    let mut train = Vec::new();
    for t in [QueryType::I2, QueryType::In2] {
        train.extend(sample_queries(&kg, t, 10, &sampler).unwrap());
    }
    let cfg = AdapterTrainConfig { steps: 200, batch_size: usize::MAX, seed: 6, ..Default::default() };
    let mut losses = Vec::new();
    train_adapter(&lp, &train, FuzzySemantics::default(), AdapterConfig::default(), &cfg, |_, l| losses.push(l)).unwrap();
    assert_eq!(losses.len(), 200);
    for w in losses.windows(51) {
        assert!(w[50] < w[0], "{} !< {}", w[50], w[0]);
    }
}

#[test]
fn files_round_trip_through_the_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let kg = oracles::toy_kg(7, 20, 3, 80);
    let mut paths = Vec::new();
    for s in Split::ALL {
        let p = dir.path().join(format!("{s}.tsv"));
        let body: String = kg
            .triples(s)
            .iter()
            .filter(|t| !kg.is_derived(t))
            .map(|t| format!("{}\t{}\t{}\n", kg.entities().name(t.subject), kg.relations().name(t.relation), kg.entities().name(t.object)))
            .collect();
        fs::write(&p, body).unwrap();
        paths.push((p, s));
    }
    let loaded = ingest_triples(&paths).unwrap().add_reciprocals().unwrap();
    assert!(loaded.num_entities() <= kg.num_entities());
    let sampler = SamplerConfig { seed: 3, target: SampleTarget::Eval, ..Default::default() };
    let qs = sample_queries(&loaded, QueryType::Pin, 5, &sampler).unwrap();
    let qp = dir.path().join("q.jsonl");
    write_query_file(&qp, &qs, &loaded).unwrap();
    assert_eq!(read_query_file(&qp, &loaded).unwrap(), qs);
}
