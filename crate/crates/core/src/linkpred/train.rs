use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{dot, query_vector, sigmoid, EmbeddingTable, Normalization};
use crate::error::{Error, Result};
use crate::kg::{KnowledgeGraph, Split, Triple};
use crate::optim::Adagrad;
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum LossKind {
    /// Cross-entropy of the true object against every entity.
    #[serde(rename = "1vsall")]
    OneVsAll,
    /// Binary cross-entropy with one uniformly drawn negative object.
    #[serde(rename = "bce")]
    Bce,
}

impl FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "1vsall" | "1-vs-all" => Ok(LossKind::OneVsAll),
            "bce" => Ok(LossKind::Bce),
            o => Err(Error::Config(format!("unknown loss `{o}` (expected 1vsall, bce)"))),
        }
    }
}

impl fmt::Display for LossKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LossKind::OneVsAll => "1vsall",
            LossKind::Bce => "bce",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LpTrainConfig {
    pub dim: usize,
    pub learning_rate: f64,
    pub steps: usize,
    pub batch_size: usize,
    pub n3_weight: f64,
    pub init_std: f64,
    pub seed: u64,
    pub loss: LossKind,
    pub normalization: Normalization,
}

impl Default for LpTrainConfig {
    fn default() -> Self {
        Self {
            dim: 1000,
            learning_rate: 0.1,
            steps: 50_000,
            batch_size: 1000,
            n3_weight: 0.005,
            init_std: 1e-3,
            seed: 0,
            loss: LossKind::OneVsAll,
            normalization: Normalization::Sigmoid,
        }
    }
}

impl LpTrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_owned()));
        if self.dim == 0 || self.steps == 0 || self.batch_size == 0 {
            return bad("dim, steps and batch size must be positive");
        }
        if !(self.learning_rate > 0.0 && self.init_std > 0.0 && self.n3_weight >= 0.0) {
            return bad("learning rate and init std must be positive, N3 weight non-negative");
        }
        Ok(())
    }
}

/// Gradients with the same layout as the table's entity and relation blocks.
#[derive(Debug, Clone, PartialEq)]
pub struct TripleGrads {
    pub entities: Vec<f64>,
    pub relations: Vec<f64>,
}

impl TripleGrads {
    pub(crate) fn zeros(t: &EmbeddingTable) -> Self {
        Self { entities: vec![0.0; t.entities.len()], relations: vec![0.0; t.relations.len()] }
    }
}

/// Adds the gradient of `<s ∘ w, ·>` given `dq = dL/d(s ∘ w)`.
pub(crate) fn backprop_query(d: usize, s: &[f64], w: &[f64], dq: &[f64], ds: &mut [f64], dw: &mut [f64]) {
    for k in 0..d {
        let (sr, si, wr, wi) = (s[k], s[d + k], w[k], w[d + k]);
        let (gr, gi) = (dq[k], dq[d + k]);
        ds[k] += gr * wr + gi * wi;
        ds[d + k] += -gr * wi + gi * wr;
        dw[k] += gr * sr + gi * si;
        dw[d + k] += -gr * si + gi * sr;
    }
}

/// d|z|^3 / dz for each complex component, scaled and accumulated.
fn add_n3_grad(v: &[f64], scale: f64, g: &mut [f64]) {
    let d = v.len() / 2;
    for k in 0..d {
        let m = (v[k] * v[k] + v[d + k] * v[d + k]).sqrt();
        g[k] += scale * 3.0 * m * v[k];
        g[d + k] += scale * 3.0 * m * v[d + k];
    }
}

fn logsumexp(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// Mean 1-vs-all cross-entropy over the batch plus `n3_weight` times the mean
/// N3 penalty, with its exact gradient.
pub fn one_vs_all_loss_and_grads(table: &EmbeddingTable, batch: &[Triple], n3_weight: f64) -> (f64, TripleGrads) {
    let d = table.dim;
    let w = 2 * d;
    let inv_b = 1.0 / batch.len() as f64;
    let mut grads = TripleGrads::zeros(table);
    let mut loss = 0.0;
    for t in batch {
        let (s, p, o) = (t.subject as usize, t.relation as usize, t.object as usize);
        let q = query_vector(table.entity(t.subject), table.relation(t.relation));
        let scores: Vec<f64> = table.entities.chunks_exact(w).map(|row| dot(&q, row)).collect();
        let lse = logsumexp(&scores);
        loss += (lse - scores[o]) * inv_b;
        let mut dq = vec![0.0; w];
        for (j, (row, &x)) in table.entities.chunks_exact(w).zip(&scores).enumerate() {
            let g = ((x - lse).exp() - if j == o { 1.0 } else { 0.0 }) * inv_b;
            if g == 0.0 {
                continue;
            }
            for (dqk, &rk) in dq.iter_mut().zip(row) {
                *dqk += g * rk;
            }
            for (gk, &qk) in grads.entities[j * w..(j + 1) * w].iter_mut().zip(&q) {
                *gk += g * qk;
            }
        }
        let mut ds = vec![0.0; w];
        let mut dw = vec![0.0; w];
        backprop_query(d, table.entity(t.subject), table.relation(t.relation), &dq, &mut ds, &mut dw);
        for (a, b) in grads.entities[s * w..(s + 1) * w].iter_mut().zip(&ds) {
            *a += b;
        }
        for (a, b) in grads.relations[p * w..(p + 1) * w].iter_mut().zip(&dw) {
            *a += b;
        }
        if n3_weight > 0.0 {
            let scale = n3_weight * inv_b;
            loss += scale
                * (super::cubed_moduli(table.entity(t.subject))
                    + super::cubed_moduli(table.relation(t.relation))
                    + super::cubed_moduli(table.entity(t.object)));
            add_n3_grad(table.entity(t.subject), scale, &mut grads.entities[s * w..(s + 1) * w]);
            add_n3_grad(table.relation(t.relation), scale, &mut grads.relations[p * w..(p + 1) * w]);
            add_n3_grad(table.entity(t.object), scale, &mut grads.entities[o * w..(o + 1) * w]);
        }
    }
    (loss, grads)
}

fn bce_loss_and_grads(
    table: &EmbeddingTable,
    batch: &[Triple],
    negatives: &[u32],
    n3_weight: f64,
) -> (f64, TripleGrads) {
    let d = table.dim;
    let w = 2 * d;
    let inv_b = 1.0 / batch.len() as f64;
    let mut grads = TripleGrads::zeros(table);
    let mut loss = 0.0;
    let softplus = |x: f64| if x > 0.0 { x + (-x).exp().ln_1p() } else { x.exp().ln_1p() };
    for (t, &neg) in batch.iter().zip(negatives) {
        let (s, p) = (t.subject as usize, t.relation as usize);
        let q = query_vector(table.entity(t.subject), table.relation(t.relation));
        let mut dq = vec![0.0; w];
        for (o, label) in [(t.object, true), (neg, false)] {
            let x = dot(&q, table.entity(o));
            let (l, g) = if label { (softplus(-x), sigmoid(x) - 1.0) } else { (softplus(x), sigmoid(x)) };
            loss += l * inv_b;
            let g = g * inv_b;
            let row = table.entity(o);
            for k in 0..w {
                dq[k] += g * row[k];
                grads.entities[o as usize * w + k] += g * q[k];
            }
        }
        let mut ds = vec![0.0; w];
        let mut dw = vec![0.0; w];
        backprop_query(d, table.entity(t.subject), table.relation(t.relation), &dq, &mut ds, &mut dw);
        for k in 0..w {
            grads.entities[s * w + k] += ds[k];
            grads.relations[p * w + k] += dw[k];
        }
        if n3_weight > 0.0 {
            let scale = n3_weight * inv_b;
            let o = t.object as usize;
            loss += scale
                * (super::cubed_moduli(table.entity(t.subject))
                    + super::cubed_moduli(table.relation(t.relation))
                    + super::cubed_moduli(table.entity(t.object)));
            add_n3_grad(table.entity(t.subject), scale, &mut grads.entities[s * w..(s + 1) * w]);
            add_n3_grad(table.relation(t.relation), scale, &mut grads.relations[p * w..(p + 1) * w]);
            add_n3_grad(table.entity(t.object), scale, &mut grads.entities[o * w..(o + 1) * w]);
        }
    }
    (loss, grads)
}

/// Trains ComplEx-N3 on the training split with minibatch AdaGrad. Batches
/// are drawn with replacement; when the graph has reciprocal relations both
/// directions of every fact are in the pool. `on_step` receives each step's
/// loss.
pub fn train_lp(
    kg: &KnowledgeGraph,
    config: &LpTrainConfig,
    mut on_step: impl FnMut(usize, f64),
) -> Result<EmbeddingTable> {
    config.validate()?;
    let train = kg.triples(Split::Train);
    if train.is_empty() {
        return Err(Error::Config("training split is empty".into()));
    }
    if !kg.has_reciprocals() {
        tracing::warn!("training without reciprocal relations; subject-side atoms will be poorly scored");
    }
    let mut table = EmbeddingTable::random(
        kg.num_entities(),
        kg.num_relations(),
        config.dim,
        config.init_std,
        rng::fork_seed(config.seed, "lp-init"),
        config.normalization,
    );
    table.seed = config.seed;
    let mut batch_rng = rng::stream(config.seed, "lp-batch");
    let ne = table.entities.len();
    let mut opt = Adagrad::new(ne + table.relations.len(), config.learning_rate);
    let mut batch = Vec::with_capacity(config.batch_size);
    for step in 0..config.steps {
        batch.clear();
        batch.extend((0..config.batch_size).map(|_| train[batch_rng.random_range(0..train.len())]));
        let (loss, grads) = match config.loss {
            LossKind::OneVsAll => one_vs_all_loss_and_grads(&table, &batch, config.n3_weight),
            LossKind::Bce => {
                let negs: Vec<u32> =
                    (0..batch.len()).map(|_| batch_rng.random_range(0..kg.num_entities() as u32)).collect();
                bce_loss_and_grads(&table, &batch, &negs, config.n3_weight)
            }
        };
        if !loss.is_finite() {
            let max_abs = table.entities.iter().chain(&table.relations).fold(0.0f64, |m, x| m.max(x.abs()));
            return Err(Error::NonFinite { step, detail: format!("loss={loss}, max |embedding|={max_abs}") });
        }
        on_step(step, loss);
        opt.step_block(0, &mut table.entities, &grads.entities);
        opt.step_block(ne, &mut table.relations, &grads.relations);
    }
    Ok(table)
}

/// Fraction of training triples whose true object has the highest score.
pub fn train_hits_at_1(table: &EmbeddingTable, kg: &KnowledgeGraph) -> f64 {
    let train = kg.triples(Split::Train);
    let hits = train
        .iter()
        .filter(|t| {
            let v = table.score_all_objects(t.subject, t.relation);
            let x = v[t.object as usize];
            v.iter().enumerate().all(|(j, &y)| j == t.object as usize || y < x)
        })
        .count();
    hits as f64 / train.len() as f64
}
