//! Single-query retrieval evaluation: distance matrix, CMC curve, mAP.
//!
//! For each query the gallery is sorted by ascending distance with ties
//! broken by original gallery index. Gallery items sharing both identity and
//! camera with the query are optionally discarded first (the usual
//! cross-camera protocol). CMC[k] is the fraction of queries whose first
//! correct match ranks within the top k; a query's average precision is the
//! mean of precision-at-r over its correct matches.

use crate::error::{Error, Result};
use ndarray::Array2;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    Euclidean,
    Cosine,
}

impl std::str::FromStr for Metric {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "euclidean" => Ok(Metric::Euclidean),
            "cosine" => Ok(Metric::Cosine),
            other => Err(Error::InvalidConfig(format!(
                "unknown metric '{other}' (expected euclidean|cosine)"
            ))),
        }
    }
}

/// Query and gallery embeddings with identity and optional camera labels.
#[derive(Debug, Clone)]
pub struct EvalSet {
    pub query: Array2<f64>,
    pub query_ids: Vec<usize>,
    pub query_cams: Option<Vec<u32>>,
    pub gallery: Array2<f64>,
    pub gallery_ids: Vec<usize>,
    pub gallery_cams: Option<Vec<u32>>,
}

impl EvalSet {
    pub fn validate(&self) -> Result<()> {
        if self.query.dim().1 != self.gallery.dim().1 {
            return Err(Error::DimensionMismatch(format!(
                "query dim {} vs gallery dim {}",
                self.query.dim().1,
                self.gallery.dim().1
            )));
        }
        if self.query.dim().0 != self.query_ids.len()
            || self.gallery.dim().0 != self.gallery_ids.len()
        {
            return Err(Error::DimensionMismatch(
                "embedding count does not match label count".into(),
            ));
        }
        Ok(())
    }
}

/// Ranking scores for one evaluation run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RankingResult {
    /// CMC over ranks 1..=K (index 0 is rank 1).
    pub cmc: Vec<f64>,
    pub map: f64,
    pub per_query_ap: Vec<f64>,
    pub num_skipped_queries: usize,
}

impl RankingResult {
    pub fn rank1(&self) -> f64 {
        self.cmc.first().copied().unwrap_or(0.0)
    }
}

/// Distance matrix D[q][g]. Euclidean uses the Gram-matrix expansion;
/// cosine distance is one minus cosine similarity.
pub fn pairwise_distances(
    queries: &Array2<f64>,
    gallery: &Array2<f64>,
    metric: Metric,
) -> Result<Array2<f64>> {
    if queries.dim().1 != gallery.dim().1 {
        return Err(Error::DimensionMismatch(format!(
            "query dim {} vs gallery dim {}",
            queries.dim().1,
            gallery.dim().1
        )));
    }
    let (nq, _) = queries.dim();
    let (ng, _) = gallery.dim();
    match metric {
        Metric::Euclidean => {
            let qn: Vec<f64> = queries
                .rows()
                .into_iter()
                .map(|r| r.iter().map(|v| v * v).sum())
                .collect();
            let gn: Vec<f64> = gallery
                .rows()
                .into_iter()
                .map(|r| r.iter().map(|v| v * v).sum())
                .collect();
            let cross = queries.dot(&gallery.t());
            let mut d = Array2::zeros((nq, ng));
            for i in 0..nq {
                for j in 0..ng {
                    d[[i, j]] = (qn[i] + gn[j] - 2.0 * cross[[i, j]]).max(0.0).sqrt();
                }
            }
            Ok(d)
        }
        Metric::Cosine => {
            let qn: Vec<f64> = queries
                .rows()
                .into_iter()
                .map(|r| r.iter().map(|v| v * v).sum::<f64>().sqrt())
                .collect();
            let gn: Vec<f64> = gallery
                .rows()
                .into_iter()
                .map(|r| r.iter().map(|v| v * v).sum::<f64>().sqrt())
                .collect();
            let cross = queries.dot(&gallery.t());
            let mut d = Array2::zeros((nq, ng));
            for i in 0..nq {
                for j in 0..ng {
                    let denom = qn[i] * gn[j];
                    let sim = if denom > 0.0 { cross[[i, j]] / denom } else { 0.0 };
                    d[[i, j]] = 1.0 - sim;
                }
            }
            Ok(d)
        }
    }
}

/// Full single-query evaluation. Queries with no valid gallery match after
/// filtering are skipped and counted.
pub fn evaluate(
    set: &EvalSet,
    metric: Metric,
    max_rank: usize,
    cross_camera_filter: bool,
) -> Result<RankingResult> {
    set.validate()?;
    let d = pairwise_distances(&set.query, &set.gallery, metric)?;
    evaluate_distances(&d, set, max_rank, cross_camera_filter)
}

/// Rank-and-score from a precomputed distance matrix. The scores depend on
/// distances only through their order.
pub fn evaluate_distances(
    d: &Array2<f64>,
    set: &EvalSet,
    max_rank: usize,
    cross_camera_filter: bool,
) -> Result<RankingResult> {
    if d.dim() != (set.query_ids.len(), set.gallery_ids.len()) {
        return Err(Error::DimensionMismatch(
            "distance matrix does not match label counts".into(),
        ));
    }
    let nq = set.query_ids.len();
    let mut cmc_hits = vec![0.0f64; max_rank];
    let mut per_query_ap = Vec::with_capacity(nq);
    let mut skipped = 0usize;
    for qi in 0..nq {
        let qid = set.query_ids[qi];
        let qcam = set.query_cams.as_ref().map(|c| c[qi]);
        // candidate gallery indices after the junk filter
        let mut candidates: Vec<usize> = (0..set.gallery_ids.len())
            .filter(|&gi| {
                if !cross_camera_filter {
                    return true;
                }
                match (qcam, set.gallery_cams.as_ref()) {
                    (Some(qc), Some(gcams)) => !(set.gallery_ids[gi] == qid && gcams[gi] == qc),
                    _ => true,
                }
            })
            .collect();
        if !candidates.iter().any(|&gi| set.gallery_ids[gi] == qid) {
            skipped += 1;
            continue;
        }
        // ascending distance, ties by original gallery index
        candidates.sort_by(|&a, &b| {
            d[[qi, a]]
                .partial_cmp(&d[[qi, b]])
                .unwrap()
                .then(a.cmp(&b))
        });
        let mut first_correct: Option<usize> = None;
        let mut num_correct = 0usize;
        let mut precision_sum = 0.0;
        for (rank0, &gi) in candidates.iter().enumerate() {
            if set.gallery_ids[gi] == qid {
                num_correct += 1;
                precision_sum += num_correct as f64 / (rank0 + 1) as f64;
                if first_correct.is_none() {
                    first_correct = Some(rank0);
                }
            }
        }
        let first = first_correct.expect("at least one match present");
        for k in first..max_rank {
            cmc_hits[k] += 1.0;
        }
        per_query_ap.push(precision_sum / num_correct as f64);
    }
    let evaluated = nq - skipped;
    if evaluated == 0 {
        return Err(Error::NoValidGallery);
    }
    let cmc: Vec<f64> = cmc_hits.iter().map(|&h| h / evaluated as f64).collect();
    let map = per_query_ap.iter().sum::<f64>() / evaluated as f64;
    Ok(RankingResult {
        cmc,
        map,
        per_query_ap,
        num_skipped_queries: skipped,
    })
}
