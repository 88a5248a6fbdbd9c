//! ComplEx link predictor with N3 regularisation.
//!
//! Complex vectors are stored as `2d` reals: the `d` real parts followed by the
//! `d` imaginary parts.

mod checkpoint;
mod train;

use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kg::{EntityId, RelationId};

pub use checkpoint::{load_checkpoint, save_checkpoint};
pub(crate) use train::backprop_query;
pub use train::{one_vs_all_loss_and_grads, train_hits_at_1, train_lp, LossKind, LpTrainConfig, TripleGrads};

/// How raw scores are squashed into `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Normalization {
    Sigmoid,
    /// Per `(subject, relation)` candidate vector.
    MinMax,
}

impl FromStr for Normalization {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sigmoid" => Ok(Normalization::Sigmoid),
            "minmax" => Ok(Normalization::MinMax),
            o => Err(Error::Config(format!("unknown normalization `{o}` (expected sigmoid, minmax)"))),
        }
    }
}

impl fmt::Display for Normalization {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Normalization::Sigmoid => "sigmoid",
            Normalization::MinMax => "minmax",
        })
    }
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Maps finite scores into `[0, 1]`. Min-max maps a constant vector to 0.5.
pub fn normalize_scores(scores: &[f64], method: Normalization) -> Vec<f64> {
    match method {
        Normalization::Sigmoid => scores.iter().map(|&x| sigmoid(x)).collect(),
        Normalization::MinMax => {
            let (lo, hi) = min_max(scores);
            if hi > lo {
                let span = hi - lo;
                scores.iter().map(|&x| (x - lo) / span).collect()
            } else {
                vec![0.5; scores.len()]
            }
        }
    }
}

pub(crate) fn min_max(xs: &[f64]) -> (f64, f64) {
    xs.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &x| (lo.min(x), hi.max(x)))
}

/// `Re(sum_k s_k * w_k * conj(o_k))` over split-layout complex vectors.
pub fn complex_score(subject: &[f64], relation: &[f64], object: &[f64]) -> Result<f64> {
    let n = subject.len();
    if n % 2 != 0 {
        return Err(Error::DimMismatch { expected: n + 1, got: n });
    }
    for v in [relation, object] {
        if v.len() != n {
            return Err(Error::DimMismatch { expected: n, got: v.len() });
        }
    }
    let d = n / 2;
    let mut acc = 0.0;
    for k in 0..d {
        let (sr, si) = (subject[k], subject[d + k]);
        let (wr, wi) = (relation[k], relation[d + k]);
        let (or, oi) = (object[k], object[d + k]);
        acc += (sr * wr - si * wi) * or + (sr * wi + si * wr) * oi;
    }
    Ok(acc)
}

/// `s ∘ w` as a split-layout vector, so that the score against object `o` is
/// the real dot product `<s ∘ w, o>`.
pub fn query_vector(subject: &[f64], relation: &[f64]) -> Vec<f64> {
    let d = subject.len() / 2;
    let mut q = vec![0.0; 2 * d];
    for k in 0..d {
        let (sr, si) = (subject[k], subject[d + k]);
        let (wr, wi) = (relation[k], relation[d + k]);
        q[k] = sr * wr - si * wi;
        q[d + k] = sr * wi + si * wr;
    }
    q
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// N3 penalty: sum of cubed complex moduli of all three embeddings, averaged
/// over the batch.
pub fn n3_penalty<'a>(batch: impl IntoIterator<Item = (&'a [f64], &'a [f64], &'a [f64])>) -> f64 {
    let mut total = 0.0;
    let mut n = 0usize;
    for (s, w, o) in batch {
        total += cubed_moduli(s) + cubed_moduli(w) + cubed_moduli(o);
        n += 1;
    }
    if n == 0 {
        0.0
    } else {
        total / n as f64
    }
}

pub(crate) fn cubed_moduli(v: &[f64]) -> f64 {
    let d = v.len() / 2;
    (0..d).map(|k| (v[k] * v[k] + v[d + k] * v[d + k]).sqrt().powi(3)).sum()
}

/// Entity and relation embeddings of the link predictor.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    dim: usize,
    num_entities: usize,
    num_relations: usize,
    pub(crate) entities: Vec<f64>,
    pub(crate) relations: Vec<f64>,
    pub seed: u64,
    pub normalization: Normalization,
}

impl EmbeddingTable {
    pub fn zeros(num_entities: usize, num_relations: usize, dim: usize, normalization: Normalization) -> Self {
        Self {
            dim,
            num_entities,
            num_relations,
            entities: vec![0.0; num_entities * 2 * dim],
            relations: vec![0.0; num_relations * 2 * dim],
            seed: 0,
            normalization,
        }
    }

    /// Independent zero-mean normal draws.
    pub fn random(
        num_entities: usize,
        num_relations: usize,
        dim: usize,
        std: f64,
        seed: u64,
        normalization: Normalization,
    ) -> Self {
        let mut t = Self::zeros(num_entities, num_relations, dim, normalization);
        t.seed = seed;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, std).expect("finite std");
        for x in t.entities.iter_mut().chain(t.relations.iter_mut()) {
            *x = normal.sample(&mut rng);
        }
        t
    }

    pub fn from_parts(
        dim: usize,
        entities: Vec<f64>,
        relations: Vec<f64>,
        seed: u64,
        normalization: Normalization,
    ) -> Result<Self> {
        let w = 2 * dim;
        if dim == 0 || entities.len() % w != 0 || relations.len() % w != 0 {
            return Err(Error::Shape(format!(
                "embedding blocks of {} and {} values do not divide into rows of {w}",
                entities.len(),
                relations.len()
            )));
        }
        if let Some(x) = entities.iter().chain(&relations).find(|x| !x.is_finite()) {
            return Err(Error::Format(format!("non-finite embedding value {x}")));
        }
        Ok(Self {
            dim,
            num_entities: entities.len() / w,
            num_relations: relations.len() / w,
            entities,
            relations,
            seed,
            normalization,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn num_entities(&self) -> usize {
        self.num_entities
    }

    pub fn num_relations(&self) -> usize {
        self.num_relations
    }

    pub fn num_params(&self) -> usize {
        self.entities.len() + self.relations.len()
    }

    pub fn entity(&self, e: EntityId) -> &[f64] {
        let w = 2 * self.dim;
        &self.entities[e as usize * w..(e as usize + 1) * w]
    }

    pub fn relation(&self, r: RelationId) -> &[f64] {
        let w = 2 * self.dim;
        &self.relations[r as usize * w..(r as usize + 1) * w]
    }

    pub fn entity_mut(&mut self, e: EntityId) -> &mut [f64] {
        let w = 2 * self.dim;
        &mut self.entities[e as usize * w..(e as usize + 1) * w]
    }

    pub fn relation_mut(&mut self, r: RelationId) -> &mut [f64] {
        let w = 2 * self.dim;
        &mut self.relations[r as usize * w..(r as usize + 1) * w]
    }

    pub fn entity_block(&self) -> &[f64] {
        &self.entities
    }

    pub fn relation_block(&self) -> &[f64] {
        &self.relations
    }

    pub fn entity_block_mut(&mut self) -> &mut [f64] {
        &mut self.entities
    }

    pub fn relation_block_mut(&mut self) -> &mut [f64] {
        &mut self.relations
    }

    pub fn score(&self, s: EntityId, p: RelationId, o: EntityId) -> f64 {
        complex_score(self.entity(s), self.relation(p), self.entity(o)).expect("table rows share a width")
    }

    /// Raw scores of `(s, p, o)` for every object `o`. Subject-side questions
    /// are asked through the reciprocal relation.
    pub fn score_all_objects(&self, s: EntityId, p: RelationId) -> Vec<f64> {
        let q = query_vector(self.entity(s), self.relation(p));
        self.entities.chunks_exact(2 * self.dim).map(|row| dot(&q, row)).collect()
    }

    /// Raw scores squashed by the table's normalization.
    pub fn normalized_scores(&self, s: EntityId, p: RelationId) -> Vec<f64> {
        normalize_scores(&self.score_all_objects(s, p), self.normalization)
    }

    /// Appends a complex dimension holding `1 + 0i` for every entity and
    /// `relation_values[r] + 0i` for relation `r`. Adds `relation_values[r]`
    /// to every raw score of relation `r`.
    pub fn with_score_offsets(&self, relation_values: &[f64]) -> Self {
        assert_eq!(relation_values.len(), self.num_relations);
        let (d, nd) = (self.dim, self.dim + 1);
        let widen = |rows: &[f64], extra: &dyn Fn(usize) -> f64| -> Vec<f64> {
            rows.chunks_exact(2 * d)
                .enumerate()
                .flat_map(|(i, row)| {
                    let mut out = Vec::with_capacity(2 * nd);
                    out.extend_from_slice(&row[..d]);
                    out.push(extra(i));
                    out.extend_from_slice(&row[d..]);
                    out.push(0.0);
                    out
                })
                .collect()
        };
        Self {
            dim: nd,
            num_entities: self.num_entities,
            num_relations: self.num_relations,
            entities: widen(&self.entities, &|_| 1.0),
            relations: widen(&self.relations, &|r| relation_values[r]),
            seed: self.seed,
            normalization: self.normalization,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    /// Scalar complex arithmetic, written independently of the split layout
    /// shortcuts in `complex_score`.
    fn oracle_score(s: &[(f64, f64)], w: &[(f64, f64)], o: &[(f64, f64)]) -> f64 {
        let mul = |a: (f64, f64), b: (f64, f64)| (a.0 * b.0 - a.1 * b.1, a.0 * b.1 + a.1 * b.0);
        s.iter().zip(w).zip(o).map(|((&s, &w), &o)| mul(mul(s, w), (o.0, -o.1)).0).sum()
    }

    fn split(v: &[(f64, f64)]) -> Vec<f64> {
        v.iter().map(|c| c.0).chain(v.iter().map(|c| c.1)).collect()
    }

    #[test]
    fn score_examples() {
        assert_eq!(complex_score(&[0.0; 4], &[0.0; 4], &[0.0; 4]).unwrap(), 0.0);
        assert_eq!(complex_score(&[1.0, 0.0], &[1.0, 0.0], &[1.0, 0.0]).unwrap(), 1.0);
        assert!(matches!(complex_score(&[1.0, 0.0], &[1.0, 0.0, 0.0, 0.0], &[1.0, 0.0]), Err(Error::DimMismatch { .. })));

        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let mut c = || (rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
            let (s, w, o) = ([c(), c()], [c(), c()], [c(), c()]);
            let got = complex_score(&split(&s), &split(&w), &split(&o)).unwrap();
            assert!((got - oracle_score(&s, &w, &o)).abs() < 1e-12);
        }
    }

    #[test]
    fn score_all_objects_matches_pointwise() {
        let t = EmbeddingTable::random(3, 2, 4, 0.5, 1, Normalization::Sigmoid);
        let v = t.score_all_objects(1, 1);
        for (o, &x) in v.iter().enumerate() {
            assert!((x - t.score(1, 1, o as u32)).abs() < 1e-12);
        }
    }

    #[test]
    fn n3_examples() {
        assert_eq!(n3_penalty(std::iter::empty()), 0.0);
        let unit = [1.0, 0.0];
        assert_eq!(n3_penalty([(&unit[..], &unit[..], &unit[..])]), 3.0);
        let i = [0.0, 1.0];
        assert_eq!(n3_penalty([(&i[..], &i[..], &unit[..])]), 3.0);
    }

    #[test]
    fn n3_matches_scalar_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let rows: Vec<Vec<f64>> = (0..9).map(|_| (0..8).map(|_| rng.random_range(-2.0..2.0)).collect()).collect();
        let batch: Vec<_> = rows.chunks(3).map(|c| (&c[0][..], &c[1][..], &c[2][..])).collect();
        let got = n3_penalty(batch.iter().copied());
        let mut want = 0.0;
        for c in rows.chunks(3) {
            for v in c {
                for k in 0..4 {
                    let m = (v[k].powi(2) + v[4 + k].powi(2)).sqrt();
                    want += m * m * m;
                }
            }
        }
        want /= 3.0;
        assert!(((got - want) / want).abs() < 1e-6);
    }

    #[test]
    fn normalization_examples() {
        assert_eq!(normalize_scores(&[0.0], Normalization::Sigmoid), [0.5]);
        assert_eq!(normalize_scores(&[1.0, 2.0, 3.0], Normalization::MinMax), [0.0, 0.5, 1.0]);
        assert_eq!(normalize_scores(&[4.0, 4.0], Normalization::MinMax), [0.5, 0.5]);
    }

    #[test]
    fn score_offsets_shift_raw_scores() {
        let t = EmbeddingTable::random(4, 2, 3, 0.5, 2, Normalization::Sigmoid);
        let shifted = t.with_score_offsets(&[0.0, 2.5]);
        for o in 0..4 {
            assert!((shifted.score(1, 0, o) - t.score(1, 0, o)).abs() < 1e-12);
            assert!((shifted.score(1, 1, o) - t.score(1, 1, o) - 2.5).abs() < 1e-12);
        }
    }
}
