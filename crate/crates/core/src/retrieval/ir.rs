use std::collections::{BTreeMap, BTreeSet};

use serde::Serialize;
use thiserror::Error;

use crate::num::Scalar;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum IrError {
    #[error("query {0} has no relevant ids")]
    EmptyRelevant(usize),
    #[error("{rankings} rankings but {relevants} relevance sets")]
    LengthMismatch { rankings: usize, relevants: usize },
    #[error("no queries")]
    NoQueries,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IrMetrics<S> {
    pub mrr: S,
    pub map: S,
    /// k -> fraction of queries with at least one relevant id in the top k
    pub recall_at: BTreeMap<usize, S>,
}

/// MRR, MAP and hit-rate recall over per-query rankings.
///
/// AP of one query is the mean of precision@i over the positions i holding
/// a relevant id (0 when nothing relevant was retrieved).
pub fn ir_metrics<S: Scalar>(
    rankings: &[Vec<String>],
    relevants: &[BTreeSet<String>],
    ks: &[usize],
) -> Result<IrMetrics<S>, IrError> {
    if rankings.len() != relevants.len() {
        return Err(IrError::LengthMismatch { rankings: rankings.len(), relevants: relevants.len() });
    }
    if rankings.is_empty() {
        return Err(IrError::NoQueries);
    }
    if let Some(q) = relevants.iter().position(BTreeSet::is_empty) {
        return Err(IrError::EmptyRelevant(q));
    }
    let n = rankings.len();
    let mut rr_sum = S::zero();
    let mut ap_sum = S::zero();
    let mut hits_at: BTreeMap<usize, usize> = ks.iter().map(|&k| (k, 0)).collect();
    for (ranking, relevant) in rankings.iter().zip(relevants) {
        let hit_positions: Vec<usize> =
            ranking.iter().enumerate().filter(|(_, id)| relevant.contains(*id)).map(|(i, _)| i + 1).collect();
        if let Some(&first) = hit_positions.first() {
            rr_sum = rr_sum + S::ratio(1, first);
            let mut ap = S::zero();
            for (h, &pos) in hit_positions.iter().enumerate() {
                ap = ap + S::ratio(h + 1, pos);
            }
            ap_sum = ap_sum + ap / S::from_count(hit_positions.len());
            for (&k, count) in hits_at.iter_mut() {
                if first <= k {
                    *count += 1;
                }
            }
        }
    }
    let total = S::from_count(n);
    Ok(IrMetrics {
        mrr: rr_sum / total.clone(),
        map: ap_sum / total,
        recall_at: hits_at.into_iter().map(|(k, c)| (k, S::ratio(c, n))).collect(),
    })
}
