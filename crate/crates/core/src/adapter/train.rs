use rand::Rng;
use rayon::prelude::*;

use super::{AdapterConfig, AdapterParams, Conditioning};
use crate::error::{Error, Result};
use crate::fuzzy::FuzzySemantics;
use crate::kg::EntityId;
use crate::linkpred::{backprop_query, query_vector, EmbeddingTable, LossKind, Normalization, TripleGrads};
use crate::optim::Adagrad;
use crate::queries::{BranchPlan, LabeledQuery, QueryGraph, QueryType, Term, TARGET};
use crate::rng;

#[derive(Debug, Clone, PartialEq)]
pub struct AdapterTrainConfig {
    /// Query types drawn from the training set. Each must bind no
    /// existential variable.
    pub types: Vec<QueryType>,
    pub steps: usize,
    pub learning_rate: f64,
    /// Examples per step; a batch at least as large as the example pool uses
    /// the whole pool in order.
    pub batch_size: usize,
    pub loss: LossKind,
    pub unfreeze_lp: bool,
    pub seed: u64,
}

impl Default for AdapterTrainConfig {
    fn default() -> Self {
        Self {
            types: QueryType::TRAINING.to_vec(),
            steps: 1000,
            learning_rate: 0.1,
            batch_size: 256,
            loss: LossKind::OneVsAll,
            unfreeze_lp: false,
            seed: 0,
        }
    }
}

impl AdapterTrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.types.is_empty() {
            return Err(Error::Config("no training query types".into()));
        }
        if let Some(t) = self.types.iter().find(|t| t.template().num_vars() > 1) {
            return Err(Error::Config(format!("query type {t} needs existential bindings and cannot train the adapter")));
        }
        if self.batch_size == 0 || !(self.learning_rate > 0.0) {
            return Err(Error::Config("batch size and learning rate must be positive".into()));
        }
        Ok(())
    }
}

/// One `(query, answer)` training pair. `negative` is only read by the BCE
/// loss.
#[derive(Debug, Clone, Copy)]
pub struct AdapterExample<'q> {
    pub query: &'q QueryGraph,
    pub answer: EntityId,
    pub negative: EntityId,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdapterGrads {
    pub weights: Vec<f64>,
    /// Present when the link predictor is being fine-tuned.
    pub lp: Option<TripleGrads>,
}

pub struct TrainedAdapter {
    pub adapter: AdapterParams,
    /// Fine-tuned link predictor, when training unfroze it.
    pub lp: Option<EmbeddingTable>,
}

fn check_trainable(q: &QueryGraph) -> Result<()> {
    let ok = q.disjuncts.len() == 1
        && q.disjuncts[0].iter().all(|a| matches!(a.subject, Term::Anchor(_)) && a.object == Term::Var(TARGET));
    if ok {
        Ok(())
    } else {
        Err(Error::Config("adapter training needs single-branch queries whose atoms all link an anchor to the target".into()))
    }
}

struct AtomPass {
    s: EntityId,
    p: u32,
    negated: bool,
    n: Vec<f64>,
    /// dn/d(raw score).
    dn: Vec<f64>,
    /// One entry, or one per object in full conditioning.
    theta: Vec<Theta>,
    c: Vec<f64>,
    m: Vec<f64>,
}

struct Theta {
    input: Vec<f64>,
    cache: super::PsiCache,
    gain: f64,
    beta: f64,
    dgain: f64,
}

fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// Loss of one example, scaled by `scale`, with its gradients added into
/// `gw` and `glp`.
fn example_pass(
    lp: &EmbeddingTable,
    adapter: &AdapterParams,
    sem: FuzzySemantics,
    ex: &AdapterExample<'_>,
    loss_kind: LossKind,
    scale: f64,
    gw: &mut [f64],
    mut glp: Option<&mut TripleGrads>,
) -> f64 {
    let ne = lp.num_entities();
    let atoms = &ex.query.disjuncts[0];
    let plan = BranchPlan::new(ex.query, 0);
    let tn = sem.tnorm;
    let mut passes: Vec<AtomPass> = Vec::new();
    for i in plan.atom_order() {
        let a = atoms[i];
        let Term::Anchor(s) = a.subject else { unreachable!("checked by check_trainable") };
        let raw = lp.score_all_objects(s, a.relation);
        let (n, dn) = match lp.normalization {
            Normalization::Sigmoid => {
                let n: Vec<f64> = raw.iter().map(|&x| crate::linkpred::sigmoid(x)).collect();
                let dn = n.iter().map(|&y| y * (1.0 - y)).collect();
                (n, dn)
            }
            Normalization::MinMax => {
                let n = crate::linkpred::normalize_scores(&raw, Normalization::MinMax);
                let (lo, hi) = crate::linkpred::min_max(&raw);
                let g = if hi > lo { 1.0 / (hi - lo) } else { 0.0 };
                (n, vec![g; ne])
            }
        };
        let objects: Vec<EntityId> = if adapter.per_object() { (0..ne as EntityId).collect() } else { vec![0] };
        let theta: Vec<Theta> = objects
            .into_iter()
            .map(|o| {
                let input = adapter.input(lp, s, a.relation, o);
                let cache = adapter.forward(&input);
                let (gain, beta, dgain) = adapter.gain_of(cache.out);
                Theta { input, cache, gain, beta, dgain }
            })
            .collect();
        let th = |o: usize| &theta[if theta.len() == 1 { 0 } else { o }];
        let c: Vec<f64> = (0..ne).map(|o| n[o] * th(o).gain + th(o).beta).collect();
        let m: Vec<f64> = if a.negated { c.iter().map(|&x| sem.negation.apply_raw(x)).collect() } else { c.clone() };
        passes.push(AtomPass { s, p: a.relation, negated: a.negated, n, dn, theta, c, m });
    }

    // forward fold, keeping every prefix
    let mut prefix: Vec<Vec<f64>> = vec![passes[0].m.clone()];
    for pass in &passes[1..] {
        let prev = prefix.last().unwrap();
        prefix.push(prev.iter().zip(&pass.m).map(|(&x, &y)| tn.apply_raw(x, y)).collect());
    }
    let scores = prefix.last().unwrap();
    let a = ex.answer as usize;
    let mut ds = vec![0.0; ne];
    let loss = match loss_kind {
        LossKind::OneVsAll => {
            let mx = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = scores.iter().map(|x| (x - mx).exp()).sum();
            let lse = mx + z.ln();
            for (g, &x) in ds.iter_mut().zip(scores) {
                *g = (x - lse).exp() * scale;
            }
            ds[a] -= scale;
            lse - scores[a]
        }
        LossKind::Bce => {
            let (xp, xn) = (scores[a], scores[ex.negative as usize]);
            ds[a] += (crate::linkpred::sigmoid(xp) - 1.0) * scale;
            ds[ex.negative as usize] += crate::linkpred::sigmoid(xn) * scale;
            softplus(-xp) + softplus(xn)
        }
    };

    // backward through the fold, per object
    let j_last = passes.len() - 1;
    let mut gc: Vec<Vec<f64>> = vec![vec![0.0; ne]; passes.len()];
    for o in 0..ne {
        let mut g = ds[o];
        if g == 0.0 {
            continue;
        }
        for j in (1..=j_last).rev() {
            let (px, py) = tn.partials(prefix[j - 1][o], passes[j].m[o]);
            gc[j][o] = g * py;
            g *= px;
        }
        gc[0][o] = g;
    }
    let w = 2 * lp.dim();
    for (pass, gc) in passes.iter().zip(&mut gc) {
        if pass.negated {
            for (g, &c) in gc.iter_mut().zip(&pass.c) {
                *g *= sem.negation.derivative(c);
            }
        }
        // θ gradients
        let mut dtheta = vec![[0.0f64; 2]; pass.theta.len()];
        for o in 0..ne {
            let k = if pass.theta.len() == 1 { 0 } else { o };
            dtheta[k][0] += gc[o] * pass.n[o];
            dtheta[k][1] += gc[o];
        }
        for (k, (t, dt)) in pass.theta.iter().zip(&dtheta).enumerate() {
            let d_out = [dt[0] * t.dgain, dt[1]];
            if d_out == [0.0, 0.0] {
                continue;
            }
            match glp.as_deref_mut() {
                None => adapter.backward(&t.input, &t.cache, d_out, gw, None),
                Some(gl) => {
                    let mut gin = vec![0.0; t.input.len()];
                    adapter.backward(&t.input, &t.cache, d_out, gw, Some(&mut gin));
                    scatter_input(adapter.conditioning(), w, (pass.s as usize, pass.p as usize, k), &gin, gl);
                }
            }
        }
        // link-predictor gradients through the normalized score
        if let Some(gl) = glp.as_deref_mut() {
            let q = query_vector(lp.entity(pass.s), lp.relation(pass.p));
            let mut dq = vec![0.0; w];
            for o in 0..ne {
                let t = &pass.theta[if pass.theta.len() == 1 { 0 } else { o }];
                let dr = gc[o] * t.gain * pass.dn[o];
                if dr == 0.0 {
                    continue;
                }
                super::axpy(dr, &q, &mut gl.entities[o * w..(o + 1) * w]);
                super::axpy(dr, lp.entity(o as EntityId), &mut dq);
            }
            let (s, p) = (pass.s as usize, pass.p as usize);
            let mut dsub = vec![0.0; w];
            let mut drel = vec![0.0; w];
            backprop_query(lp.dim(), lp.entity(pass.s), lp.relation(pass.p), &dq, &mut dsub, &mut drel);
            super::axpy(1.0, &dsub, &mut gl.entities[s * w..(s + 1) * w]);
            super::axpy(1.0, &drel, &mut gl.relations[p * w..(p + 1) * w]);
        }
    }
    loss * scale
}

/// Routes a ψ input gradient back to the embedding rows it was read from.
fn scatter_input(mode: Conditioning, w: usize, (s, p, o): (usize, usize, usize), gin: &[f64], gl: &mut TripleGrads) {
    let add = |dst: &mut [f64], src: &[f64]| super::axpy(1.0, src, dst);
    match mode {
        Conditioning::Global => {}
        Conditioning::Predicate => add(&mut gl.relations[p * w..(p + 1) * w], gin),
        Conditioning::SubjectPredicate => {
            add(&mut gl.entities[s * w..(s + 1) * w], &gin[..w]);
            add(&mut gl.relations[p * w..(p + 1) * w], &gin[w..]);
        }
        Conditioning::Full => {
            add(&mut gl.entities[s * w..(s + 1) * w], &gin[..w]);
            add(&mut gl.relations[p * w..(p + 1) * w], &gin[w..2 * w]);
            add(&mut gl.entities[o * w..(o + 1) * w], &gin[2 * w..]);
        }
    }
}

/// Mean loss over `batch` and its exact gradient with respect to ψ, and to
/// the link predictor when `unfreeze_lp` is set. Examples are reduced in
/// batch order, so the result does not depend on thread scheduling.
pub fn adapter_gradients(
    lp: &EmbeddingTable,
    adapter: &AdapterParams,
    sem: FuzzySemantics,
    batch: &[AdapterExample<'_>],
    loss: LossKind,
    unfreeze_lp: bool,
) -> Result<(f64, AdapterGrads)> {
    if batch.is_empty() {
        return Err(Error::Config("empty adapter batch".into()));
    }
    if adapter.lp_dim() != lp.dim() {
        return Err(Error::DimMismatch { expected: lp.dim(), got: adapter.lp_dim() });
    }
    for ex in batch {
        check_trainable(ex.query)?;
    }
    let scale = 1.0 / batch.len() as f64;
    let np = adapter.num_params();
    if unfreeze_lp {
        let mut gw = vec![0.0; np];
        let mut gl = TripleGrads::zeros(lp);
        let mut total = 0.0;
        for ex in batch {
            total += example_pass(lp, adapter, sem, ex, loss, scale, &mut gw, Some(&mut gl));
        }
        return Ok((total, AdapterGrads { weights: gw, lp: Some(gl) }));
    }
    let parts: Vec<(f64, Vec<f64>)> = batch
        .par_iter()
        .map(|ex| {
            let mut gw = vec![0.0; np];
            let l = example_pass(lp, adapter, sem, ex, loss, scale, &mut gw, None);
            (l, gw)
        })
        .collect();
    let mut gw = vec![0.0; np];
    let mut total = 0.0;
    for (l, g) in parts {
        total += l;
        super::axpy(1.0, &g, &mut gw);
    }
    Ok((total, AdapterGrads { weights: gw, lp: None }))
}

/// Fits ψ by minibatch AdaGrad on every `(query, answer)` pair of the
/// selected types. `on_step` receives each step's mean loss.
pub fn train_adapter(
    lp: &EmbeddingTable,
    queries: &[LabeledQuery],
    sem: FuzzySemantics,
    arch: AdapterConfig,
    config: &AdapterTrainConfig,
    mut on_step: impl FnMut(usize, f64),
) -> Result<TrainedAdapter> {
    config.validate()?;
    let mut adapter = AdapterParams::new(arch, lp.dim())?;
    let pool: Vec<(&QueryGraph, EntityId)> = queries
        .iter()
        .filter(|q| config.types.contains(&q.query_type))
        .flat_map(|q| q.answers().map(move |a| (&q.graph, a)))
        .collect();
    if pool.is_empty() {
        return Err(Error::Config("no training answers for the selected query types".into()));
    }
    let mut tuned = config.unfreeze_lp.then(|| lp.clone());
    let ne = lp.num_entities() as EntityId;
    let mut r = rng::stream(config.seed, "adapter-batch");
    let mut opt = Adagrad::new(adapter.num_params(), config.learning_rate);
    let mut lp_opt = tuned.as_ref().map(|t| Adagrad::new(t.num_params(), config.learning_rate));
    let full = config.batch_size >= pool.len();
    for step in 0..config.steps {
        let picks: Vec<usize> =
            if full { (0..pool.len()).collect() } else { (0..config.batch_size).map(|_| r.random_range(0..pool.len())).collect() };
        let batch: Vec<AdapterExample<'_>> = picks
            .into_iter()
            .map(|i| AdapterExample {
                query: pool[i].0,
                answer: pool[i].1,
                negative: if config.loss == LossKind::Bce { r.random_range(0..ne) } else { 0 },
            })
            .collect();
        let table = tuned.as_ref().unwrap_or(lp);
        let (loss, grads) = adapter_gradients(table, &adapter, sem, &batch, config.loss, config.unfreeze_lp)?;
        if !loss.is_finite() {
            return Err(Error::NonFinite { step, detail: format!("adapter loss={loss}") });
        }
        on_step(step, loss);
        opt.step(adapter.weights_mut(), &grads.weights);
        if let (Some(t), Some(o), Some(g)) = (tuned.as_mut(), lp_opt.as_mut(), grads.lp.as_ref()) {
            let n = t.entity_block().len();
            o.step_block(0, t.entity_block_mut(), &g.entities);
            o.step_block(n, t.relation_block_mut(), &g.relations);
        }
    }
    Ok(TrainedAdapter { adapter, lp: tuned })
}
