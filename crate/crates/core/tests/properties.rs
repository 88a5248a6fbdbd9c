#[path = "common/oracles.rs"]
mod oracles;

use std::collections::HashSet;

use proptest::prelude::*;

use kgcal_core::adapter::CalibratedScorer;
use kgcal_core::evalx::filtered_rank;
use kgcal_core::fuzzy::{FuzzySemantics, Negation, TNorm};
use kgcal_core::inference::beam_answer;
use kgcal_core::linkpred::{EmbeddingTable, Normalization};
use kgcal_core::queries::{parse_query, serialize_query, QueryType};

const TNORMS: [TNorm; 3] = [TNorm::Godel, TNorm::Product, TNorm::Lukasiewicz];

fn lattice() -> impl Strategy<Value = f64> {
    (0u64..=(1 << 53)).prop_map(|k| k as f64 / (1u64 << 53) as f64)
}

proptest! {
    #[test]
    fn tnorm_laws(x in lattice(), y in lattice(), z in lattice(), y2 in lattice()) {
        for t in TNORMS {
            prop_assert_eq!(t.apply(x, y), t.apply(y, x));
            prop_assert!((t.apply(t.apply(x, y), z) - t.apply(x, t.apply(y, z))).abs() <= 1e-12);
            prop_assert_eq!(t.apply(x, 1.0), x);
            prop_assert_eq!(t.apply(x, 0.0), 0.0);
            if y <= y2 {
                prop_assert!(t.apply(x, y) <= t.apply(x, y2));
                prop_assert!(t.conorm(x, y) <= t.conorm(x, y2));
            }
            prop_assert_eq!(t.conorm(x, y), 1.0 - t.apply(1.0 - x, 1.0 - y));
            prop_assert_eq!(t.conorm(x, 0.0), x);
            prop_assert_eq!(t.conorm(x, 1.0), 1.0);
        }
        prop_assert!(TNorm::Lukasiewicz.apply(x, y) <= TNorm::Product.apply(x, y));
        prop_assert!(TNorm::Product.apply(x, y) <= TNorm::Godel.apply(x, y));
    }

    #[test]
    fn negations_are_decreasing(x in lattice(), y in lattice()) {
        for n in [Negation::Standard, Negation::StrictCosine] {
            if x < y {
                prop_assert!(n.apply(x) >= n.apply(y));
            }
        }
        prop_assert_eq!(Negation::Standard.apply(Negation::Standard.apply(x)), x);
    }

    #[test]
    fn filtered_rank_matches_sort_oracle(
        raw in prop::collection::vec(0u8..6, 2..40),
        target_pick in any::<prop::sample::Index>(),
        excl in prop::collection::vec(any::<prop::sample::Index>(), 0..6),
    ) {
        let scores: Vec<f64> = raw.iter().map(|&v| v as f64 / 5.0).collect();
        let t = target_pick.index(scores.len()) as u32;
        let exclude: HashSet<u32> = excl.iter().map(|i| i.index(scores.len()) as u32).filter(|&e| e != t).collect();
        let r = filtered_rank(&scores, t, &exclude).unwrap();
        prop_assert_eq!(r, oracles::sort_rank(&scores, t, &exclude));
        // invariant under a strictly increasing map
        let warped: Vec<f64> = scores.iter().map(|s| (3.0 * s).exp() - 7.0).collect();
        prop_assert_eq!(filtered_rank(&warped, t, &exclude).unwrap(), r);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn beam_widening_never_lowers_the_best_score(seed in 0u64..1000, ti in 0usize..14, k1 in 1usize..6, extra in 0usize..8) {
        let lp = EmbeddingTable::random(12, 3, 3, 0.9, seed, Normalization::Sigmoid);
        let scorer = CalibratedScorer::uncalibrated(&lp);
        let t = QueryType::ALL[ti];
        let tpl = t.template();
        let rels: Vec<u32> = (0..tpl.num_relations() as u32).map(|r| (r + seed as u32) % 3).collect();
        let anchors: Vec<u32> = (0..tpl.num_anchors() as u32).map(|a| (a * 5 + seed as u32) % 12).collect();
        let q = tpl.instantiate(&rels, &anchors);
        let sem = FuzzySemantics::default();
        let (small, _) = beam_answer(&scorer, sem, &q, k1).unwrap();
        let (large, _) = beam_answer(&scorer, sem, &q, k1 + extra).unwrap();
        prop_assert!(large[0].1 >= small[0].1);
        prop_assert!(large.iter().chain(&small).all(|&(_, s)| (0.0..=1.0).contains(&s)));
        // determinism
        prop_assert_eq!(beam_answer(&scorer, sem, &q, k1).unwrap().0, small);
    }

    #[test]
    fn sampled_queries_round_trip_through_the_dsl(seed in 0u64..50) {
        let kg = oracles::toy_kg(seed, 15, 3, 50);
        let cfg = kgcal_core::queries::SamplerConfig { seed, target: kgcal_core::queries::SampleTarget::Train, ..Default::default() };
        for t in QueryType::ALL {
            for q in kgcal_core::queries::sample_queries(&kg, t, 2, &cfg).unwrap() {
                let text = serialize_query(&q.graph, kg.entities(), kg.relations());
                let back = parse_query(&text, kg.entities(), kg.relations()).unwrap();
                prop_assert_eq!(&back, &q.graph);
            }
        }
    }
}
