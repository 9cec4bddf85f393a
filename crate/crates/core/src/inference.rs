//! Coupled orbital retrieval: cosine ranking of candidate parents with a
//! parabolic radius gate. Candidates whose angular similarity falls below
//! the gate threshold for their radial separation are zero-scored but kept
//! in the list (ordered by raw cosine after all passing candidates) so that
//! rank-based metrics remain defined over the full candidate set.

use crate::error::{CoreError, Result};
use crate::manifold::{dot, UnitVector};
use crate::taxonomy::{RadiusMap, Taxonomy};

/// Slack applied to the gate comparison to avoid float-equality pathology.
const GATE_SLACK: f64 = 1e-9;

/// How the radius of an unseen query is modeled.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QueryRadiusMode {
    /// The query is a prospective leaf child of each candidate:
    /// R_raw = 1 + (D(candidate) + 1), normalized with the seed extremes.
    PerCandidateLeaf,
    /// One global radius: the mean normalized r over the seed's leaves.
    GlobalLeafMean,
}

/// Gate settings.
#[derive(Debug, Clone, Copy)]
pub struct GateConfig {
    pub gamma: f64,
    pub gate_enabled: bool,
    pub query_radius_mode: QueryRadiusMode,
}

impl Default for GateConfig {
    fn default() -> Self {
        GateConfig {
            gamma: 1.0,
            gate_enabled: true,
            query_radius_mode: QueryRadiusMode::PerCandidateLeaf,
        }
    }
}

/// Ranked candidates for one query, descending score; zero-scored
/// candidates follow every positive score.
#[derive(Debug, Clone, PartialEq)]
pub struct RankedList {
    pub query_id: String,
    pub entries: Vec<(String, f64)>,
}

/// Normalized query radius for a given candidate under the configured mode.
pub fn query_radius(
    t: &Taxonomy,
    radii: &RadiusMap,
    candidate: usize,
    mode: QueryRadiusMode,
) -> f64 {
    match mode {
        QueryRadiusMode::PerCandidateLeaf => {
            let r_raw = 1.0 + (t.depth(candidate) as f64 + 1.0);
            if (radii.r_max - radii.r_min).abs() < 1e-12 {
                return if radii.inverted { 1.0 } else { 0.0 };
            }
            let normalized =
                ((r_raw - radii.r_min) / (radii.r_max - radii.r_min)).clamp(0.0, 1.0);
            if radii.inverted {
                1.0 - normalized
            } else {
                normalized
            }
        }
        QueryRadiusMode::GlobalLeafMean => {
            let leaves: Vec<usize> = (0..t.len()).filter(|&i| t.is_leaf(i)).collect();
            if leaves.is_empty() {
                return 1.0;
            }
            leaves.iter().map(|&i| radii.r[i]).sum::<f64>() / leaves.len() as f64
        }
    }
}

/// Parabolic decision boundary 1 - gamma * (delta r)^2.
pub fn gate_threshold(delta_r: f64, gamma: f64) -> f64 {
    1.0 - gamma * delta_r * delta_r
}

/// Gated cosine score: the raw cosine if the gate passes (or is disabled),
/// zero otherwise.
pub fn score(zq: &UnitVector, zc: &UnitVector, rq: f64, rc: f64, cfg: &GateConfig) -> f64 {
    let s = dot(zq.as_slice(), zc.as_slice());
    if !cfg.gate_enabled {
        return s;
    }
    let threshold = gate_threshold((rq - rc).abs(), cfg.gamma);
    if s >= threshold - GATE_SLACK {
        s
    } else {
        0.0
    }
}

/// Ranks every seed node as a candidate parent for the query embedding.
/// `embeddings` must align index-for-index with the taxonomy's nodes.
pub fn rank_candidates(
    query_id: &str,
    query_embedding: &UnitVector,
    t: &Taxonomy,
    radii: &RadiusMap,
    embeddings: &[UnitVector],
    cfg: &GateConfig,
    k: usize,
) -> Result<RankedList> {
    if t.is_empty() {
        return Err(CoreError::EmptyCandidateSet);
    }
    if embeddings.len() != t.len() {
        return Err(CoreError::DimensionMismatch {
            expected: t.len(),
            got: embeddings.len(),
        });
    }
    if k == 0 {
        return Err(CoreError::InvalidParameter("k must be at least 1".into()));
    }
    // (passed, sort key, id, reported score)
    let mut rows: Vec<(bool, f64, &str, f64)> = Vec::with_capacity(t.len());
    for c in 0..t.len() {
        let rq = query_radius(t, radii, c, cfg.query_radius_mode);
        let raw = dot(query_embedding.as_slice(), embeddings[c].as_slice());
        let gated = score(query_embedding, &embeddings[c], rq, radii.r[c], cfg);
        let passed = !cfg.gate_enabled || gated != 0.0 || raw == 0.0;
        // Filtered candidates keep their raw cosine as a secondary key so
        // they degrade gracefully behind every passing candidate.
        rows.push((passed, raw, t.ids()[c].as_str(), gated));
    }
    rows.sort_by(|a, b| {
        b.0.cmp(&a.0)
            .then_with(|| b.1.partial_cmp(&a.1).unwrap())
            .then_with(|| a.2.cmp(b.2))
    });
    let entries = rows
        .into_iter()
        .take(k)
        .map(|(_, _, id, s)| (id.to_string(), s))
        .collect();
    Ok(RankedList {
        query_id: query_id.to_string(),
        entries,
    })
}
