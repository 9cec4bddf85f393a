//! Ranking evaluation: Hit@k, Recall@k, mean rank, mean reciprocal rank,
//! and Wu–Palmer similarity over the taxonomy.

use std::collections::BTreeMap;

use crate::error::{CoreError, Result};
use crate::inference::RankedList;
use crate::taxonomy::{lca, Taxonomy};

/// Aggregated metrics over a query set. Hit/recall/MRR are stored raw in
/// [0,1]; `mrr_scaled` carries the x100 presentation used by reports.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub k_values: Vec<usize>,
    pub hit_at: BTreeMap<usize, f64>,
    pub recall_at: BTreeMap<usize, f64>,
    pub mean_rank: f64,
    pub mrr: f64,
    pub mrr_scaled: f64,
    pub wu_palmer: Option<f64>,
    pub query_count: usize,
}

/// Computes rank-based metrics from ranked candidate lists and a gold map.
/// Ranks are 1-based positions in each prediction list, whose order is
/// already deterministic (score descending, id tie-break upstream).
pub fn evaluate(
    predictions: &[RankedList],
    gold: &BTreeMap<String, Vec<String>>,
    k_values: &[usize],
) -> Result<EvalReport> {
    if gold.is_empty() {
        return Err(CoreError::EmptyBatch);
    }
    let by_query: BTreeMap<&str, &RankedList> = predictions
        .iter()
        .map(|r| (r.query_id.as_str(), r))
        .collect();
    let mut hit_at: BTreeMap<usize, f64> = k_values.iter().map(|&k| (k, 0.0)).collect();
    let mut recall_at: BTreeMap<usize, f64> = k_values.iter().map(|&k| (k, 0.0)).collect();
    let mut rank_sum = 0.0;
    let mut rr_sum = 0.0;
    for (query, golds) in gold {
        let ranked = by_query
            .get(query.as_str())
            .ok_or_else(|| CoreError::MissingQuery(query.clone()))?;
        let rank_of = |id: &str| -> Option<usize> {
            ranked
                .entries
                .iter()
                .position(|(cand, _)| cand == id)
                .map(|p| p + 1)
        };
        let mut gold_ranks = Vec::with_capacity(golds.len());
        for g in golds {
            let r = rank_of(g).ok_or_else(|| CoreError::GoldNotRanked {
                query: query.clone(),
                gold: g.clone(),
            })?;
            gold_ranks.push(r);
        }
        let min_rank = *gold_ranks.iter().min().expect("gold nonempty") as f64;
        rank_sum += min_rank;
        rr_sum += 1.0 / min_rank;
        for &k in k_values {
            let in_top = gold_ranks.iter().filter(|&&r| r <= k).count();
            if in_top > 0 {
                *hit_at.get_mut(&k).unwrap() += 1.0;
            }
            *recall_at.get_mut(&k).unwrap() += in_top as f64 / golds.len() as f64;
        }
    }
    let n = gold.len() as f64;
    for v in hit_at.values_mut() {
        *v /= n;
    }
    for v in recall_at.values_mut() {
        *v /= n;
    }
    let mrr = rr_sum / n;
    Ok(EvalReport {
        k_values: k_values.to_vec(),
        hit_at,
        recall_at,
        mean_rank: rank_sum / n,
        mrr,
        mrr_scaled: 100.0 * mrr,
        wu_palmer: None,
        query_count: gold.len(),
    })
}

/// Wu–Palmer similarity 2 depth(LCA) / (depth(a) + depth(b)), with
/// depth(root) = 0; identical nodes score 1 even at the root.
pub fn wu_palmer(t: &Taxonomy, predicted: &str, gold: &str) -> Result<f64> {
    let pi = t.index_of(predicted)?;
    let gi = t.index_of(gold)?;
    if predicted == gold {
        return Ok(1.0);
    }
    let denom = (t.depth(pi) + t.depth(gi)) as f64;
    if denom == 0.0 {
        return Err(CoreError::UndefinedAtRoot);
    }
    let anc = lca(t, predicted, gold)?;
    let ai = t.index_of(&anc)?;
    Ok(2.0 * t.depth(ai) as f64 / denom)
}

/// Mean Wu–Palmer similarity between each query's top-ranked candidate and
/// its (single) gold parent. Queries whose Wu–Palmer value is undefined at
/// the root are skipped; returns None if nothing is measurable.
pub fn mean_wu_palmer(
    t: &Taxonomy,
    predictions: &[RankedList],
    gold: &BTreeMap<String, Vec<String>>,
) -> Option<f64> {
    let by_query: BTreeMap<&str, &RankedList> = predictions
        .iter()
        .map(|r| (r.query_id.as_str(), r))
        .collect();
    let mut sum = 0.0;
    let mut count = 0usize;
    for (query, golds) in gold {
        if golds.len() != 1 {
            continue;
        }
        let Some(ranked) = by_query.get(query.as_str()) else {
            continue;
        };
        let Some((top, _)) = ranked.entries.first() else {
            continue;
        };
        if let Ok(v) = wu_palmer(t, top, &golds[0]) {
            sum += v;
            count += 1;
        }
    }
    if count == 0 {
        None
    } else {
        Some(sum / count as f64)
    }
}
