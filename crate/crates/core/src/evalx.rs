//! Filtered mean-reciprocal-rank evaluation.

use std::collections::{BTreeMap, HashSet};
use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::inference::Engine;
use crate::kg::EntityId;
use crate::queries::{LabeledQuery, QueryType};

/// Rank of `target` among entities outside `exclude`. Equal scores held by
/// smaller ids count as ahead of the target.
pub fn filtered_rank(scores: &[f64], target: EntityId, exclude: &HashSet<EntityId>) -> Result<usize> {
    if exclude.contains(&target) {
        return Err(Error::Contract(format!("target {target} is in its own exclusion set")));
    }
    let t = scores[target as usize];
    let ahead = scores
        .iter()
        .enumerate()
        .filter(|&(e, &s)| {
            let e = e as EntityId;
            e != target && !exclude.contains(&e) && (s > t || (s == t && e < target))
        })
        .count();
    Ok(1 + ahead)
}

/// Mean reciprocal rank of a query's hard answers under `scores`, or `None`
/// when it has no hard answer.
pub fn query_mrr(scores: &[f64], query: &LabeledQuery) -> Result<Option<f64>> {
    if query.hard.is_empty() {
        return Ok(None);
    }
    let all: HashSet<EntityId> = query.answers().collect();
    let mut total = 0.0;
    for &h in &query.hard {
        let mut exclude = all.clone();
        exclude.remove(&h);
        total += 1.0 / filtered_rank(scores, h, &exclude)? as f64;
    }
    Ok(Some(total / query.hard.len() as f64))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TypeResult {
    pub mrr: f64,
    pub queries: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub per_type: BTreeMap<QueryType, TypeResult>,
    /// Mean over the positive (EPFO) types present.
    pub avg_p: Option<f64>,
    /// Mean over the negation types present.
    pub avg_n: Option<f64>,
    pub skipped: usize,
    pub config: BTreeMap<String, String>,
}

fn mean(xs: &[f64]) -> Option<f64> {
    (!xs.is_empty()).then(|| xs.iter().sum::<f64>() / xs.len() as f64)
}

impl EvalReport {
    /// Builds a report from per-query MRRs, averaging within each type and
    /// then across types.
    pub fn from_query_scores(scores: &[(QueryType, f64)], skipped: usize, config: BTreeMap<String, String>) -> Self {
        let mut grouped: BTreeMap<QueryType, Vec<f64>> = BTreeMap::new();
        for &(t, m) in scores {
            grouped.entry(t).or_default().push(m);
        }
        let per_type: BTreeMap<QueryType, TypeResult> = grouped
            .into_iter()
            .map(|(t, v)| (t, TypeResult { mrr: mean(&v).expect("non-empty group"), queries: v.len() }))
            .collect();
        let pick = |neg: bool| -> Vec<f64> {
            per_type.iter().filter(|(t, _)| t.has_negation() == neg).map(|(_, r)| r.mrr).collect()
        };
        let (avg_p, avg_n) = (mean(&pick(false)), mean(&pick(true)));
        Self { per_type, avg_p, avg_n, skipped, config }
    }

    /// Plain-text table, one column per query type in report order, values
    /// as percentages.
    pub fn table(&self) -> String {
        let mut header = String::from("      ");
        let mut row = String::from("MRR   ");
        let mut counts = String::from("n     ");
        for t in QueryType::ALL {
            let _ = write!(header, "{:>7}", t.name());
            match self.per_type.get(&t) {
                Some(r) => {
                    let _ = write!(row, "{:>7.1}", 100.0 * r.mrr);
                    let _ = write!(counts, "{:>7}", r.queries);
                }
                None => {
                    let _ = write!(row, "{:>7}", "-");
                    let _ = write!(counts, "{:>7}", 0);
                }
            }
        }
        let fmt_avg = |a: Option<f64>| a.map_or_else(|| "-".to_string(), |v| format!("{:.1}", 100.0 * v));
        let _ = write!(header, "{:>8}{:>8}", "avg_p", "avg_n");
        let _ = write!(row, "{:>8}{:>8}", fmt_avg(self.avg_p), fmt_avg(self.avg_n));
        format!("{header}\n{row}\n{counts}\n")
    }
}

/// Ranks every hard answer of every query with the engine's beam search.
/// Queries are processed in parallel and reduced in input order.
pub fn evaluate(engine: &Engine<'_>, queries: &[LabeledQuery]) -> Result<EvalReport> {
    let results: Vec<Result<Option<(QueryType, f64)>>> = queries
        .par_iter()
        .map(|q| {
            if q.hard.is_empty() {
                return Ok(None);
            }
            let scores = engine.score_vector(&q.graph)?;
            Ok(query_mrr(&scores, q)?.map(|m| (q.query_type, m)))
        })
        .collect();
    let mut scored = Vec::with_capacity(results.len());
    let mut skipped = 0;
    for r in results {
        match r? {
            Some(x) => scored.push(x),
            None => skipped += 1,
        }
    }
    if skipped > 0 {
        tracing::warn!(skipped, "queries without hard answers were skipped");
    }
    let mut config = BTreeMap::new();
    config.insert("beam_k".to_string(), engine.beam_k.to_string());
    config.insert("tnorm".to_string(), engine.semantics.tnorm.to_string());
    config.insert("negation".to_string(), engine.semantics.negation.to_string());
    config.insert("normalization".to_string(), engine.scorer.lp.normalization.to_string());
    config.insert("calibrated".to_string(), engine.scorer.adapter.is_some().to_string());
    Ok(EvalReport::from_query_scores(&scored, skipped, config))
}
