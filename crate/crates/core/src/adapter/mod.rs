//! Score calibration: each atom score `x` becomes `x (1 + α) + β`, where
//! `θ = (α, β)` is produced by a small network ψ over the atom's embeddings.

mod checkpoint;
mod train;

use std::fmt;
use std::str::FromStr;

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fuzzy::FuzzySemantics;
use crate::inference;
use crate::kg::{EntityId, RelationId};
use crate::linkpred::EmbeddingTable;
use crate::queries::QueryGraph;
use crate::rng;

pub use checkpoint::{load_adapter, save_adapter};
pub use train::{adapter_gradients, train_adapter, AdapterExample, AdapterGrads, AdapterTrainConfig, TrainedAdapter};

/// Which embeddings ψ reads.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Conditioning {
    /// No input: θ is a pair of learned constants.
    #[serde(rename = "global")]
    Global,
    /// `e_p`.
    #[serde(rename = "pred")]
    Predicate,
    /// `[e_s; e_p]`.
    #[serde(rename = "subjpred")]
    SubjectPredicate,
    /// `[e_s; e_p; e_o]`.
    #[serde(rename = "full")]
    Full,
}

impl Conditioning {
    pub const ALL: [Conditioning; 4] =
        [Conditioning::Global, Conditioning::Predicate, Conditioning::SubjectPredicate, Conditioning::Full];

    fn blocks(self) -> usize {
        match self {
            Conditioning::Global => 0,
            Conditioning::Predicate => 1,
            Conditioning::SubjectPredicate => 2,
            Conditioning::Full => 3,
        }
    }
}

impl FromStr for Conditioning {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "global" => Ok(Conditioning::Global),
            "pred" => Ok(Conditioning::Predicate),
            "subjpred" => Ok(Conditioning::SubjectPredicate),
            "full" => Ok(Conditioning::Full),
            o => Err(Error::Config(format!("unknown conditioning `{o}` (expected global, pred, subjpred, full)"))),
        }
    }
}

impl fmt::Display for Conditioning {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Conditioning::Global => "global",
            Conditioning::Predicate => "pred",
            Conditioning::SubjectPredicate => "subjpred",
            Conditioning::Full => "full",
        })
    }
}

/// Architecture of ψ.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AdapterConfig {
    pub conditioning: Conditioning,
    /// 1 (linear) or 2 (one ReLU hidden layer).
    pub layers: usize,
    /// Hidden width of a 2-layer ψ; defaults to half the embedding rank.
    pub hidden: Option<usize>,
    /// Reparameterise `1 + α` through a softplus so calibration is always
    /// increasing.
    pub monotone: bool,
    pub seed: u64,
}

impl Default for AdapterConfig {
    fn default() -> Self {
        Self { conditioning: Conditioning::Predicate, layers: 1, hidden: None, monotone: false, seed: 0 }
    }
}

/// `ln(e - 1)`: the softplus shift that maps a zero head output to `1 + α = 1`.
const SOFTPLUS_SHIFT: f64 = 0.541_324_854_612_918_1;

fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// Weights of ψ, stored flat. A 1-layer ψ is `W (2 x D), b (2)`; a 2-layer ψ
/// is `W1 (H x D), b1 (H), W2 (2 x H), b2 (2)`. Row 0 of the head yields α,
/// row 1 yields β. The head starts at zero, so a fresh adapter is the
/// identity calibration.
#[derive(Debug, Clone, PartialEq)]
pub struct AdapterParams {
    conditioning: Conditioning,
    layers: usize,
    lp_dim: usize,
    hidden: usize,
    monotone: bool,
    seed: u64,
    weights: Vec<f64>,
}

/// Intermediate values of one ψ evaluation.
#[derive(Debug, Clone)]
pub(crate) struct PsiCache {
    hidden_pre: Vec<f64>,
    hidden: Vec<f64>,
    out: [f64; 2],
}

impl AdapterParams {
    pub fn new(config: AdapterConfig, lp_dim: usize) -> Result<Self> {
        if !(1..=2).contains(&config.layers) {
            return Err(Error::Config(format!("psi layers must be 1 or 2, got {}", config.layers)));
        }
        let hidden = if config.layers == 2 { config.hidden.unwrap_or((lp_dim / 2).max(1)) } else { 0 };
        if config.layers == 2 && hidden == 0 {
            return Err(Error::Config("psi hidden width must be positive".into()));
        }
        let input = config.conditioning.blocks() * 2 * lp_dim;
        let mut p = Self {
            conditioning: config.conditioning,
            layers: config.layers,
            lp_dim,
            hidden,
            monotone: config.monotone,
            seed: config.seed,
            weights: Vec::new(),
        };
        p.weights = vec![0.0; p.num_params()];
        if p.layers == 2 && input > 0 {
            let normal = Normal::new(0.0, 1.0 / (input as f64).sqrt()).expect("positive std");
            let mut r = rng::stream(config.seed, "adapter-init");
            for w in &mut p.weights[..hidden * input] {
                *w = normal.sample(&mut r);
            }
        }
        Ok(p)
    }

    /// The zero-initialised predicate-mode, 1-layer adapter.
    pub fn identity(lp_dim: usize) -> Self {
        Self::new(AdapterConfig::default(), lp_dim).expect("default config is valid")
    }

    pub fn from_parts(config: AdapterConfig, lp_dim: usize, weights: Vec<f64>) -> Result<Self> {
        let mut p = Self::new(config, lp_dim)?;
        if weights.len() != p.weights.len() {
            return Err(Error::Shape(format!("psi expects {} weights, got {}", p.weights.len(), weights.len())));
        }
        if let Some(i) = weights.iter().position(|w| !w.is_finite()) {
            return Err(Error::Format(format!("psi weight {i} is not finite")));
        }
        p.weights = weights;
        Ok(p)
    }

    pub fn config(&self) -> AdapterConfig {
        AdapterConfig {
            conditioning: self.conditioning,
            layers: self.layers,
            hidden: (self.layers == 2).then_some(self.hidden),
            monotone: self.monotone,
            seed: self.seed,
        }
    }

    pub fn conditioning(&self) -> Conditioning {
        self.conditioning
    }

    pub fn layers(&self) -> usize {
        self.layers
    }

    pub fn lp_dim(&self) -> usize {
        self.lp_dim
    }

    pub fn hidden(&self) -> usize {
        self.hidden
    }

    pub fn monotone(&self) -> bool {
        self.monotone
    }

    pub fn input_dim(&self) -> usize {
        self.conditioning.blocks() * 2 * self.lp_dim
    }

    pub fn num_params(&self) -> usize {
        let d = self.input_dim();
        match self.layers {
            1 => 2 * d + 2,
            _ => self.hidden * d + self.hidden + 2 * self.hidden + 2,
        }
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn weights_mut(&mut self) -> &mut [f64] {
        &mut self.weights
    }

    /// True when θ varies with the object, so it must be computed per candidate.
    pub fn per_object(&self) -> bool {
        self.conditioning == Conditioning::Full
    }

    /// ψ input for the atom `(s, p, o)`.
    pub(crate) fn input(&self, lp: &EmbeddingTable, s: EntityId, p: RelationId, o: EntityId) -> Vec<f64> {
        let mut x = Vec::with_capacity(self.input_dim());
        match self.conditioning {
            Conditioning::Global => {}
            Conditioning::Predicate => x.extend_from_slice(lp.relation(p)),
            Conditioning::SubjectPredicate => {
                x.extend_from_slice(lp.entity(s));
                x.extend_from_slice(lp.relation(p));
            }
            Conditioning::Full => {
                x.extend_from_slice(lp.entity(s));
                x.extend_from_slice(lp.relation(p));
                x.extend_from_slice(lp.entity(o));
            }
        }
        x
    }

    pub(crate) fn forward(&self, input: &[f64]) -> PsiCache {
        let d = input.len();
        let head = |w: &[f64], b: &[f64], x: &[f64]| -> [f64; 2] {
            let n = x.len();
            [b[0] + dot(&w[..n], x), b[1] + dot(&w[n..2 * n], x)]
        };
        if self.layers == 1 {
            let out = head(&self.weights[..2 * d], &self.weights[2 * d..], input);
            return PsiCache { hidden_pre: Vec::new(), hidden: Vec::new(), out };
        }
        let h = self.hidden;
        let (w1, rest) = self.weights.split_at(h * d);
        let (b1, rest) = rest.split_at(h);
        let (w2, b2) = rest.split_at(2 * h);
        let hidden_pre: Vec<f64> = (0..h).map(|j| b1[j] + dot(&w1[j * d..(j + 1) * d], input)).collect();
        let hidden: Vec<f64> = hidden_pre.iter().map(|&z| z.max(0.0)).collect();
        let out = head(w2, b2, &hidden);
        PsiCache { hidden_pre, hidden, out }
    }

    /// `(1 + α, β, d(1 + α)/d out[0])` from the raw head outputs. The slope
    /// is produced directly so that it stays exact at the identity and
    /// positive under `monotone` even when α is close to -1.
    pub(crate) fn gain_of(&self, out: [f64; 2]) -> (f64, f64, f64) {
        if self.monotone {
            let z = softplus(SOFTPLUS_SHIFT);
            let x = out[0] + SOFTPLUS_SHIFT;
            (softplus(x) / z, out[1], crate::linkpred::sigmoid(x) / z)
        } else {
            (1.0 + out[0], out[1], 1.0)
        }
    }

    /// Accumulates `d_out` (gradient w.r.t. the raw head outputs) into
    /// `grad_w`, and into `grad_input` when given.
    pub(crate) fn backward(
        &self,
        input: &[f64],
        cache: &PsiCache,
        d_out: [f64; 2],
        grad_w: &mut [f64],
        grad_input: Option<&mut [f64]>,
    ) {
        let d = input.len();
        if self.layers == 1 {
            for (r, &g) in d_out.iter().enumerate() {
                axpy(g, input, &mut grad_w[r * d..(r + 1) * d]);
                grad_w[2 * d + r] += g;
            }
            if let Some(gi) = grad_input {
                for (r, &g) in d_out.iter().enumerate() {
                    axpy(g, &self.weights[r * d..(r + 1) * d], gi);
                }
            }
            return;
        }
        let h = self.hidden;
        let (o_b1, o_w2) = (h * d, h * d + h);
        let o_b2 = o_w2 + 2 * h;
        let w2 = &self.weights[o_w2..o_b2];
        let mut d_hidden = vec![0.0; h];
        for (r, &g) in d_out.iter().enumerate() {
            axpy(g, &cache.hidden, &mut grad_w[o_w2 + r * h..o_w2 + (r + 1) * h]);
            grad_w[o_b2 + r] += g;
            axpy(g, &w2[r * h..(r + 1) * h], &mut d_hidden);
        }
        let mut gi = grad_input;
        for j in 0..h {
            if cache.hidden_pre[j] <= 0.0 || d_hidden[j] == 0.0 {
                continue;
            }
            let g = d_hidden[j];
            axpy(g, input, &mut grad_w[j * d..(j + 1) * d]);
            grad_w[o_b1 + j] += g;
            if let Some(gi) = gi.as_deref_mut() {
                axpy(g, &self.weights[j * d..(j + 1) * d], gi);
            }
        }
    }

    /// θ for explicit embeddings; blocks the conditioning mode ignores may be
    /// empty.
    pub fn compute_theta(&self, e_s: &[f64], e_p: &[f64], e_o: &[f64]) -> Result<(f64, f64)> {
        let w = 2 * self.lp_dim;
        let used: &[&[f64]] = match self.conditioning {
            Conditioning::Global => &[],
            Conditioning::Predicate => &[e_p],
            Conditioning::SubjectPredicate => &[e_s, e_p],
            Conditioning::Full => &[e_s, e_p, e_o],
        };
        let mut x = Vec::with_capacity(self.input_dim());
        for v in used {
            if v.len() != w {
                return Err(Error::DimMismatch { expected: w, got: v.len() });
            }
            x.extend_from_slice(v);
        }
        let (g, b, _) = self.gain_of(self.forward(&x).out);
        Ok((g - 1.0, b))
    }

    /// `(1 + α, β)` for the atom `(s, p, o)`.
    pub(crate) fn gain(&self, lp: &EmbeddingTable, s: EntityId, p: RelationId, o: EntityId) -> (f64, f64) {
        let (g, b, _) = self.gain_of(self.forward(&self.input(lp, s, p, o)).out);
        (g, b)
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
fn axpy(a: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

/// `score (1 + α) + β`, before clamping.
#[inline]
pub fn calibrate(score: f64, alpha: f64, beta: f64) -> f64 {
    score * (1.0 + alpha) + beta
}

/// [`calibrate`] clamped to `[0, 1]`, the form fuzzy operators consume.
#[inline]
pub fn calibrate_clamped(score: f64, alpha: f64, beta: f64) -> f64 {
    clamp_unit(calibrate(score, alpha, beta))
}

#[inline]
fn clamp_unit(c: f64) -> f64 {
    if c.is_nan() {
        0.0
    } else {
        c.clamp(0.0, 1.0)
    }
}

/// Link predictor plus optional adapter: the source of every atom truth
/// value. Without an adapter, atom scores are the normalized scores.
#[derive(Debug, Clone, Copy)]
pub struct CalibratedScorer<'a> {
    pub lp: &'a EmbeddingTable,
    pub adapter: Option<&'a AdapterParams>,
}

impl<'a> CalibratedScorer<'a> {
    pub fn new(lp: &'a EmbeddingTable, adapter: Option<&'a AdapterParams>) -> Result<Self> {
        if let Some(a) = adapter {
            if a.lp_dim != lp.dim() {
                return Err(Error::DimMismatch { expected: lp.dim(), got: a.lp_dim });
            }
        }
        Ok(Self { lp, adapter })
    }

    pub fn uncalibrated(lp: &'a EmbeddingTable) -> Self {
        Self { lp, adapter: None }
    }

    pub fn num_entities(&self) -> usize {
        self.lp.num_entities()
    }

    /// Calibrated, clamped truth of `(s, p, o)` for every object `o`.
    pub fn atom_scores(&self, s: EntityId, p: RelationId) -> Vec<f64> {
        let mut n = self.lp.normalized_scores(s, p);
        let Some(a) = self.adapter else { return n };
        if a.per_object() {
            for (o, x) in n.iter_mut().enumerate() {
                let (g, b) = a.gain(self.lp, s, p, o as EntityId);
                *x = clamp_unit(*x * g + b);
            }
        } else {
            let (g, b) = a.gain(self.lp, s, p, 0);
            for x in &mut n {
                *x = clamp_unit(*x * g + b);
            }
        }
        n
    }

    /// Pre-clamp calibrated scores, for diagnostics.
    pub fn unclamped_scores(&self, s: EntityId, p: RelationId) -> Vec<f64> {
        let n = self.lp.normalized_scores(s, p);
        let Some(a) = self.adapter else { return n };
        n.iter()
            .enumerate()
            .map(|(o, &x)| {
                let (g, b) = a.gain(self.lp, s, p, o as EntityId);
                x * g + b
            })
            .collect()
    }
}

/// Exact answer score of `candidate`: the fuzzy truth of the query with the
/// target bound to it, maximised over every binding of the existential
/// variables. Enumeration beyond `budget` evaluations is refused.
pub fn answer_score_exact(
    scorer: &CalibratedScorer<'_>,
    sem: FuzzySemantics,
    query: &QueryGraph,
    candidate: EntityId,
    budget: u64,
) -> Result<f64> {
    inference::exact_candidate_score(scorer, sem, query, candidate, budget)
}

/// Summary of a set of scores.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoreStats {
    pub count: usize,
    pub min: f64,
    pub max: f64,
    pub mean: f64,
    pub variance: f64,
}

impl ScoreStats {
    pub fn of(xs: &[f64]) -> Self {
        let count = xs.len();
        if count == 0 {
            return Self { count, min: 0.0, max: 0.0, mean: 0.0, variance: 0.0 };
        }
        let (min, max) = crate::linkpred::min_max(xs);
        let mean = xs.iter().sum::<f64>() / count as f64;
        let variance = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / count as f64;
        Self { count, min, max, mean, variance }
    }
}

/// Score distribution at each pipeline stage over a set of atoms.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationDiagnostic {
    pub raw: ScoreStats,
    pub normalized: ScoreStats,
    pub calibrated: ScoreStats,
    pub clamped: ScoreStats,
}

pub fn score_diagnostic(scorer: &CalibratedScorer<'_>, atoms: &[(EntityId, RelationId)]) -> CalibrationDiagnostic {
    let (mut raw, mut norm, mut cal, mut clamped) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    for &(s, p) in atoms {
        raw.extend(scorer.lp.score_all_objects(s, p));
        norm.extend(scorer.lp.normalized_scores(s, p));
        cal.extend(scorer.unclamped_scores(s, p));
        clamped.extend(scorer.atom_scores(s, p));
    }
    CalibrationDiagnostic {
        raw: ScoreStats::of(&raw),
        normalized: ScoreStats::of(&norm),
        calibrated: ScoreStats::of(&cal),
        clamped: ScoreStats::of(&clamped),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linkpred::Normalization;

    fn cfg(conditioning: Conditioning, layers: usize) -> AdapterConfig {
        AdapterConfig { conditioning, layers, hidden: Some(3), monotone: false, seed: 5 }
    }

    #[test]
    fn zero_init_is_identity() {
        for c in Conditioning::ALL {
            for layers in [1, 2] {
                let a = AdapterParams::new(cfg(c, layers), 2).unwrap();
                let e = [0.3, -0.2, 0.5, 0.1];
                assert_eq!(a.compute_theta(&e, &e, &e).unwrap(), (0.0, 0.0));
            }
        }
        let mono = AdapterParams::new(AdapterConfig { monotone: true, ..AdapterConfig::default() }, 2).unwrap();
        assert_eq!(mono.compute_theta(&[], &[0.0; 4], &[]).unwrap(), (0.0, 0.0));
    }

    #[test]
    fn predicate_mode_ignores_subject() {
        let mut a = AdapterParams::new(cfg(Conditioning::Predicate, 1), 2).unwrap();
        for (i, w) in a.weights_mut().iter_mut().enumerate() {
            *w = 0.1 * i as f64 - 0.3;
        }
        let p = [0.2, 0.4, -0.1, 0.7];
        let t1 = a.compute_theta(&[1.0, 2.0, 3.0, 4.0], &p, &[]).unwrap();
        let t2 = a.compute_theta(&[-1.0, 0.0, 0.5, 9.0], &p, &[]).unwrap();
        assert_eq!(t1, t2);
    }

    #[test]
    fn one_layer_matches_matrix_vector_loop() {
        let mut a = AdapterParams::new(cfg(Conditioning::Predicate, 1), 2).unwrap();
        let w: Vec<f64> = (0..10).map(|i| ((i * 7) % 5) as f64 * 0.25 - 0.5).collect();
        a.weights_mut().copy_from_slice(&w);
        let p = [0.2, 0.4, -0.1, 0.7];
        let mut expect = [w[8], w[9]];
        for r in 0..2 {
            for k in 0..4 {
                expect[r] += w[r * 4 + k] * p[k];
            }
        }
        let (al, be) = a.compute_theta(&[], &p, &[]).unwrap();
        assert!((al - expect[0]).abs() < 1e-15 && (be - expect[1]).abs() < 1e-15);
    }

    #[test]
    fn wrong_block_width_is_rejected() {
        let a = AdapterParams::new(cfg(Conditioning::SubjectPredicate, 1), 2).unwrap();
        assert!(matches!(a.compute_theta(&[0.0; 3], &[0.0; 4], &[]), Err(Error::DimMismatch { .. })));
    }

    #[test]
    fn parameter_counts() {
        let d = 1000;
        assert_eq!(AdapterParams::identity(d).num_params(), 4002);
        assert_eq!(AdapterParams::new(cfg(Conditioning::Global, 1), d).unwrap().num_params(), 2);
        let two = AdapterParams::new(cfg(Conditioning::Full, 2), 4).unwrap();
        assert_eq!(two.num_params(), 3 * 24 + 3 + 6 + 2);
        assert_eq!(two.weights().len(), two.num_params());
    }

    #[test]
    fn calibrate_examples() {
        assert_eq!(calibrate(0.37, 0.0, 0.0), 0.37);
        assert!((calibrate(0.5, 1.0, 0.1) - 1.1).abs() < 1e-15);
        assert_eq!(calibrate_clamped(0.5, 1.0, 0.1), 1.0);
        assert_eq!(calibrate_clamped(0.1, 0.0, -0.5), 0.0);
        assert!(calibrate(0.2, -0.5, 0.1) < calibrate(0.3, -0.5, 0.1));
    }

    #[test]
    fn monotone_keeps_slope_positive() {
        let mut a = AdapterParams::new(AdapterConfig { conditioning: Conditioning::Global, monotone: true, ..AdapterConfig::default() }, 2)
            .unwrap();
        a.weights_mut()[0] = -50.0;
        let (gain, _, _) = a.gain_of(a.forward(&[]).out);
        assert!(gain > 0.0);
    }

    #[test]
    fn identity_adapter_reproduces_uncalibrated_scores() {
        let lp = EmbeddingTable::random(6, 2, 3, 0.5, 1, Normalization::Sigmoid);
        let id = AdapterParams::identity(3);
        let plain = CalibratedScorer::uncalibrated(&lp);
        let cal = CalibratedScorer::new(&lp, Some(&id)).unwrap();
        assert_eq!(plain.atom_scores(1, 0), cal.atom_scores(1, 0));
        assert!(CalibratedScorer::new(&lp, Some(&AdapterParams::identity(4))).is_err());
    }

    #[test]
    fn diagnostic_clamped_range() {
        let lp = EmbeddingTable::random(6, 2, 3, 2.0, 1, Normalization::Sigmoid);
        let mut a = AdapterParams::new(cfg(Conditioning::Global, 1), 3).unwrap();
        a.weights_mut()[0] = 3.0;
        a.weights_mut()[1] = -0.5;
        let s = CalibratedScorer::new(&lp, Some(&a)).unwrap();
        let diag = score_diagnostic(&s, &[(0, 0), (1, 1)]);
        assert_eq!(diag.raw.count, 12);
        assert!(diag.calibrated.max > 1.0 || diag.calibrated.min < 0.0);
        assert!(diag.clamped.min >= 0.0 && diag.clamped.max <= 1.0);
    }
}
