#[path = "common/oracles.rs"]
mod oracles;

use kgcal_core::adapter::{adapter_gradients, AdapterConfig, AdapterExample, AdapterParams, Conditioning};
use kgcal_core::fuzzy::{FuzzySemantics, Negation, TNorm};
use kgcal_core::linkpred::{EmbeddingTable, LossKind, Normalization};
use kgcal_core::queries::{QueryGraph, QueryType};

fn queries() -> Vec<QueryGraph> {
    vec![
        QueryType::I2.template().instantiate(&[0, 1], &[0, 1]),
        QueryType::In2.template().instantiate(&[1, 2], &[2, 3]),
        QueryType::I3.template().instantiate(&[0, 1, 2], &[4, 5, 1]),
        QueryType::In3.template().instantiate(&[2, 0, 1], &[3, 0, 6]),
    ]
}

fn batch(qs: &[QueryGraph]) -> Vec<AdapterExample<'_>> {
    qs.iter().enumerate().map(|(i, q)| AdapterExample { query: q, answer: (i * 3 % 8) as u32, negative: 7 }).collect()
}

fn perturbed(conditioning: Conditioning, layers: usize, dim: usize, seed: u64) -> AdapterParams {
    let cfg = AdapterConfig { conditioning, layers, hidden: Some(3), monotone: false, seed };
    let mut a = AdapterParams::new(cfg, dim).unwrap();
    let mut d = oracles::Draws::new(seed);
    for w in a.weights_mut() {
        *w += 0.4 * (d.unit() - 0.5);
    }
    a
}

#[test]
fn psi_gradients_match_finite_differences() {
    let lp = EmbeddingTable::random(8, 3, 3, 0.6, 2, Normalization::Sigmoid);
    let sem = FuzzySemantics::new(TNorm::Product, Negation::Standard);
    let qs = queries();
    let b = batch(&qs);
    for loss in [LossKind::OneVsAll, LossKind::Bce] {
        for mode in Conditioning::ALL {
            for layers in [1, 2] {
                let a = perturbed(mode, layers, 3, 17);
                let (_, g) = adapter_gradients(&lp, &a, sem, &b, loss, false).unwrap();
                let x0 = a.weights().to_vec();
                let mut f = |x: &[f64]| {
                    let mut a2 = a.clone();
                    a2.weights_mut().copy_from_slice(x);
                    adapter_gradients(&lp, &a2, sem, &b, loss, false).unwrap().0
                };
                for i in 0..x0.len() {
                    let fd = oracles::central_difference(&mut f, &x0, i, 1e-4);
                    assert!(oracles::grad_close(g.weights[i], fd, 1e-3, 1e-8), "{mode} L{layers} {loss} w{i}: {} vs {fd}", g.weights[i]);
                }
            }
        }
    }
}

#[test]
fn monotone_head_gradients_match_finite_differences() {
    let lp = EmbeddingTable::random(8, 3, 2, 0.6, 3, Normalization::MinMax);
    let sem = FuzzySemantics::new(TNorm::Product, Negation::StrictCosine);
    let qs = queries();
    let b = batch(&qs);
    let cfg = AdapterConfig { conditioning: Conditioning::Predicate, layers: 1, hidden: None, monotone: true, seed: 0 };
    let mut a = AdapterParams::new(cfg, 2).unwrap();
    a.weights_mut().iter_mut().enumerate().for_each(|(i, w)| *w = 0.05 * i as f64 - 0.2);
    let (_, g) = adapter_gradients(&lp, &a, sem, &b, LossKind::OneVsAll, false).unwrap();
    let x0 = a.weights().to_vec();
    let mut f = |x: &[f64]| {
        let mut a2 = a.clone();
        a2.weights_mut().copy_from_slice(x);
        adapter_gradients(&lp, &a2, sem, &b, LossKind::OneVsAll, false).unwrap().0
    };
    for i in 0..x0.len() {
        let fd = oracles::central_difference(&mut f, &x0, i, 1e-4);
        assert!(oracles::grad_close(g.weights[i], fd, 1e-3, 1e-8), "w{i}: {} vs {fd}", g.weights[i]);
    }
}

#[test]
fn unfrozen_embedding_gradients_match_finite_differences() {
    let lp = EmbeddingTable::random(8, 3, 2, 0.6, 5, Normalization::Sigmoid);
    let sem = FuzzySemantics::new(TNorm::Product, Negation::Standard);
    let qs = queries();
    let b = batch(&qs);
    for mode in Conditioning::ALL {
        let a = perturbed(mode, 2, 2, 23);
        let (_, g) = adapter_gradients(&lp, &a, sem, &b, LossKind::OneVsAll, true).unwrap();
        let g = g.lp.unwrap();
        let n_ent = lp.entity_block().len();
        let x0: Vec<f64> = lp.entity_block().iter().chain(lp.relation_block()).copied().collect();
        let mut f = |x: &[f64]| {
            let t = EmbeddingTable::from_parts(lp.dim(), x[..n_ent].to_vec(), x[n_ent..].to_vec(), 0, lp.normalization)
                .unwrap();
            adapter_gradients(&t, &a, sem, &b, LossKind::OneVsAll, false).unwrap().0
        };
        for i in 0..x0.len() {
            let an = if i < n_ent { g.entities[i] } else { g.relations[i - n_ent] };
            let fd = oracles::central_difference(&mut f, &x0, i, 1e-4);
            assert!(oracles::grad_close(an, fd, 1e-3, 1e-8), "{mode} e{i}: {an} vs {fd}");
        }
    }
}
