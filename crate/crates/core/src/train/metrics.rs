//! Retrieval metrics over ranked candidate lists.

use serde::{Deserialize, Serialize};

use crate::error::{GogError, Result};

/// Ranking of one round together with what it is judged against.
#[derive(Debug, Clone, PartialEq)]
pub struct RankedRound {
    /// Candidate indices, best first.
    pub ranking: Vec<usize>,
    pub gt_index: usize,
    pub relevance: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub mrr: f64,
    pub r_at_1: f64,
    pub r_at_5: f64,
    pub r_at_10: f64,
    pub mean_rank: f64,
    /// `None` when some round carries no relevance scores.
    pub ndcg: Option<f64>,
    /// 1-based rank of the ground truth in each round.
    pub ranks: Vec<usize>,
}

impl MetricsReport {
    /// One-line summary, percentages for the ratio metrics.
    pub fn summary(&self) -> String {
        let ndcg = self.ndcg.map_or_else(|| "n/a".to_string(), |v| format!("{:.2}", 100.0 * v));
        format!(
            "MRR {:.2}  R@1 {:.2}  R@5 {:.2}  R@10 {:.2}  Mean {:.2}  NDCG {ndcg}  rounds {}",
            100.0 * self.mrr,
            100.0 * self.r_at_1,
            100.0 * self.r_at_5,
            100.0 * self.r_at_10,
            self.mean_rank,
            self.ranks.len()
        )
    }
}

fn check_permutation(ranking: &[usize]) -> Result<()> {
    let mut seen = vec![false; ranking.len()];
    for &i in ranking {
        if i >= ranking.len() || std::mem::replace(&mut seen[i], true) {
            return Err(GogError::Validation(format!(
                "ranking of {} candidates is not a permutation",
                ranking.len()
            )));
        }
    }
    Ok(())
}

fn dcg(gains: impl Iterator<Item = f64>) -> f64 {
    gains
        .enumerate()
        .map(|(i, g)| g / ((i + 2) as f64).log2())
        .sum()
}

/// NDCG over the top `K` positions, `K` the number of candidates with
/// positive relevance. `None` when nothing is relevant.
pub fn ndcg_at_relevant(ranking: &[usize], relevance: &[f64]) -> Option<f64> {
    let k = relevance.iter().filter(|&&r| r > 0.0).count();
    if k == 0 {
        return None;
    }
    let got = dcg(ranking.iter().take(k).map(|&i| relevance[i]));
    let mut ideal: Vec<f64> = relevance.to_vec();
    ideal.sort_by(|a, b| b.total_cmp(a));
    let best = dcg(ideal.into_iter().take(k));
    Some(got / best)
}

pub fn compute_metrics(rounds: &[RankedRound]) -> Result<MetricsReport> {
    if rounds.is_empty() {
        return Err(GogError::Validation("no rounds to score".into()));
    }
    let mut ranks = Vec::with_capacity(rounds.len());
    let mut ndcg_sum = 0.0;
    let mut ndcg_rounds = 0usize;
    let mut ndcg_available = true;
    for r in rounds {
        check_permutation(&r.ranking)?;
        let pos = r.ranking.iter().position(|&i| i == r.gt_index).ok_or_else(|| {
            GogError::Validation(format!(
                "ground truth {} outside {} candidates",
                r.gt_index,
                r.ranking.len()
            ))
        })?;
        ranks.push(pos + 1);
        match &r.relevance {
            Some(rel) if rel.len() == r.ranking.len() => {
                if let Some(v) = ndcg_at_relevant(&r.ranking, rel) {
                    ndcg_sum += v;
                    ndcg_rounds += 1;
                }
            }
            Some(rel) => {
                return Err(GogError::Validation(format!(
                    "{} relevance scores for {} candidates",
                    rel.len(),
                    r.ranking.len()
                )))
            }
            None => ndcg_available = false,
        }
    }
    let n = ranks.len() as f64;
    let frac = |k: usize| ranks.iter().filter(|&&r| r <= k).count() as f64 / n;
    Ok(MetricsReport {
        mrr: ranks.iter().map(|&r| 1.0 / r as f64).sum::<f64>() / n,
        r_at_1: frac(1),
        r_at_5: frac(5),
        r_at_10: frac(10),
        mean_rank: ranks.iter().sum::<usize>() as f64 / n,
        ndcg: (ndcg_available && ndcg_rounds > 0).then(|| ndcg_sum / ndcg_rounds as f64),
        ranks,
    })
}

/// Expected MRR when the ground truth lands uniformly at random among `n`.
pub fn uniform_rank_mrr(n: usize) -> f64 {
    (1..=n).map(|k| 1.0 / k as f64).sum::<f64>() / n as f64
}
