//! Retrieval metrics: (m)AP, mAP@K, topK-precision, precision-recall and recall@K.
//!
//! A database item is relevant to a query when the two share at least one label.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::dataset::LabelMatrix;
use crate::retrieval::RankedResult;
use crate::{Error, Result};

/// Decides relevance from query and database labels.
///
/// Database ids resolve to label rows either directly (id = row) or through
/// an explicit id list.
#[derive(Debug, Clone)]
pub struct RelevanceJudge {
    query_labels: LabelMatrix,
    db_labels: LabelMatrix,
    id_rows: Option<HashMap<u64, usize>>,
}

impl RelevanceJudge {
    pub fn new(query_labels: LabelMatrix, db_labels: LabelMatrix) -> Result<Self> {
        if query_labels.categories() != db_labels.categories() {
            return Err(Error::Dimension(format!(
                "query labels have {} categories, database labels have {}",
                query_labels.categories(),
                db_labels.categories()
            )));
        }
        Ok(Self {
            query_labels,
            db_labels,
            id_rows: None,
        })
    }

    /// Row `r` of the database labels belongs to `ids[r]`.
    pub fn with_ids(mut self, ids: &[u64]) -> Result<Self> {
        if ids.len() != self.db_labels.rows() {
            return Err(Error::InvalidArgument(format!(
                "{} ids for {} database label rows",
                ids.len(),
                self.db_labels.rows()
            )));
        }
        self.id_rows = Some(ids.iter().enumerate().map(|(r, id)| (*id, r)).collect());
        Ok(self)
    }

    pub fn num_queries(&self) -> usize {
        self.query_labels.rows()
    }

    pub fn db_size(&self) -> usize {
        self.db_labels.rows()
    }

    fn row_of(&self, id: u64) -> Option<usize> {
        match &self.id_rows {
            Some(map) => map.get(&id).copied(),
            None => (id < self.db_labels.rows() as u64).then_some(id as usize),
        }
    }

    pub fn is_relevant(&self, query: usize, id: u64) -> bool {
        self.row_of(id)
            .is_some_and(|row| self.query_labels.shares_label(query, &self.db_labels, row))
    }

    /// Relevance flag of every hit, in ranking order.
    pub fn flags(&self, query: usize, ranking: &RankedResult) -> Vec<bool> {
        ranking.ids().map(|id| self.is_relevant(query, id)).collect()
    }

    /// Number of relevant items in the whole database.
    pub fn total_relevant(&self, query: usize) -> usize {
        (0..self.db_labels.rows())
            .filter(|&r| self.query_labels.shares_label(query, &self.db_labels, r))
            .count()
    }
}

/// Normalizer used by AP under a cutoff.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ApNorm {
    /// Relevant items within the evaluated window.
    #[default]
    Window,
    /// Relevant items in the whole database.
    Database,
}

/// AP of a relevance sequence normalized by `m`; `None` when `m = 0`.
pub fn average_precision_from_flags(flags: &[bool], m: usize) -> Option<f64> {
    if m == 0 {
        return None;
    }
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (k, &rel) in flags.iter().enumerate() {
        if rel {
            hits += 1;
            sum += hits as f64 / (k + 1) as f64;
        }
    }
    Some(sum / m as f64)
}

/// `(1/m) Σ_k p(k) δ(k)` over the ranking (or its first `cutoff` items).
///
/// Returns `None` for queries with no relevant item in scope; those are
/// left out of [`mean_ap`].
pub fn average_precision(
    ranking: &RankedResult,
    judge: &RelevanceJudge,
    query: usize,
    cutoff: Option<usize>,
    norm: ApNorm,
) -> Option<f64> {
    let mut flags = judge.flags(query, ranking);
    if let Some(k) = cutoff {
        flags.truncate(k);
    }
    let m = match norm {
        ApNorm::Window => flags.iter().filter(|f| **f).count(),
        ApNorm::Database => judge.total_relevant(query),
    };
    average_precision_from_flags(&flags, m)
}

/// Mean of the non-null per-query APs; `rankings[i]` belongs to query `i`.
pub fn mean_ap(rankings: &[RankedResult], judge: &RelevanceJudge, cutoff: Option<usize>, norm: ApNorm) -> Result<f64> {
    let aps: Vec<f64> = rankings
        .iter()
        .enumerate()
        .filter_map(|(q, r)| average_precision(r, judge, q, cutoff, norm))
        .collect();
    if aps.is_empty() {
        return Err(Error::NoEvaluableQueries);
    }
    Ok(aps.iter().sum::<f64>() / aps.len() as f64)
}

fn hits_at(flags: &[bool], k: usize) -> usize {
    flags.iter().take(k).filter(|f| **f).count()
}

/// Fraction of relevant items among the first K, for each K.
pub fn topk_precision(ranking: &RankedResult, judge: &RelevanceJudge, query: usize, ks: &[usize]) -> Vec<f64> {
    let flags = judge.flags(query, ranking);
    ks.iter()
        .map(|&k| if k == 0 { 0.0 } else { hits_at(&flags, k) as f64 / k as f64 })
        .collect()
}

/// Fraction of the database's relevant items found in the first K, for each K.
/// `None` when the query has no relevant item.
pub fn recall_at_k(ranking: &RankedResult, judge: &RelevanceJudge, query: usize, ks: &[usize]) -> Option<Vec<f64>> {
    let m = judge.total_relevant(query);
    if m == 0 {
        return None;
    }
    let flags = judge.flags(query, ranking);
    Some(ks.iter().map(|&k| hits_at(&flags, k) as f64 / m as f64).collect())
}

/// `(recall, precision)` after every prefix of the ranking. `None` when the
/// query has no relevant item.
pub fn precision_recall_curve(ranking: &RankedResult, judge: &RelevanceJudge, query: usize) -> Option<Vec<(f64, f64)>> {
    let m = judge.total_relevant(query);
    if m == 0 {
        return None;
    }
    let mut hits = 0usize;
    Some(
        judge
            .flags(query, ranking)
            .iter()
            .enumerate()
            .map(|(k, &rel)| {
                hits += rel as usize;
                (hits as f64 / m as f64, hits as f64 / (k + 1) as f64)
            })
            .collect(),
    )
}

/// Expected mAP of a uniformly random ranking over the full database,
/// approximated by the mean fraction of relevant items per query.
pub fn random_baseline(judge: &RelevanceJudge) -> f64 {
    let n = judge.db_size() as f64;
    let fracs: Vec<f64> = (0..judge.num_queries())
        .map(|q| judge.total_relevant(q))
        .filter(|&m| m > 0)
        .map(|m| m as f64 / n)
        .collect();
    fracs.iter().sum::<f64>() / fracs.len().max(1) as f64
}

/// Aggregate metrics over a query set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub queries: usize,
    pub evaluable_queries: usize,
    pub map: f64,
    /// `(K, mAP@K)`.
    pub map_at: Vec<(usize, f64)>,
    /// `(K, mean precision@K)` over all queries.
    pub precision_at: Vec<(usize, f64)>,
    /// `(K, mean recall@K)` over queries with at least one relevant item.
    pub recall_at: Vec<(usize, f64)>,
    /// Mean `(recall, precision)` per prefix length.
    #[serde(skip)]
    pub pr_curve: Vec<(f64, f64)>,
}

/// Computes every metric for `rankings[i]` against query `i`.
pub fn report(
    rankings: &[RankedResult],
    judge: &RelevanceJudge,
    map_cutoffs: &[usize],
    ks: &[usize],
    norm: ApNorm,
) -> Result<MetricReport> {
    if rankings.is_empty() {
        return Err(Error::NoEvaluableQueries);
    }
    let map = mean_ap(rankings, judge, None, norm)?;
    let map_at = map_cutoffs
        .iter()
        .map(|&k| Ok((k, mean_ap(rankings, judge, Some(k), norm)?)))
        .collect::<Result<Vec<_>>>()?;

    let mut precision = vec![0.0; ks.len()];
    let mut recall = vec![0.0; ks.len()];
    let mut evaluable = 0usize;
    let prefix = rankings.iter().map(|r| r.len()).min().unwrap_or(0);
    let mut curve = vec![(0.0, 0.0); prefix];
    for (q, r) in rankings.iter().enumerate() {
        for (acc, p) in precision.iter_mut().zip(topk_precision(r, judge, q, ks)) {
            *acc += p;
        }
        if let Some(rec) = recall_at_k(r, judge, q, ks) {
            evaluable += 1;
            for (acc, v) in recall.iter_mut().zip(rec) {
                *acc += v;
            }
            let pr = precision_recall_curve(r, judge, q).unwrap_or_default();
            for (acc, (rc, pc)) in curve.iter_mut().zip(pr) {
                acc.0 += rc;
                acc.1 += pc;
            }
        }
    }
    let nq = rankings.len() as f64;
    let ne = evaluable.max(1) as f64;
    Ok(MetricReport {
        queries: rankings.len(),
        evaluable_queries: evaluable,
        map,
        map_at,
        precision_at: ks.iter().copied().zip(precision.into_iter().map(|p| p / nq)).collect(),
        recall_at: ks.iter().copied().zip(recall.into_iter().map(|r| r / ne)).collect(),
        pr_curve: curve.into_iter().map(|(r, p)| (r / ne, p / ne)).collect(),
    })
}
