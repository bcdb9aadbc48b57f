use std::collections::BTreeSet;
use std::fmt;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::negatives::sample_negatives;
use crate::data::{EventSequence, Holdout};
use crate::error::{Error, Result};
use crate::model::Model;
use crate::sm_layer::modulated_scores;

pub fn hit_rate_at_k(rank: usize, k: usize) -> f64 {
    if rank >= 1 && rank <= k {
        1.0
    } else {
        0.0
    }
}

pub fn ndcg_at_k(rank: usize, k: usize) -> f64 {
    if rank >= 1 && rank <= k {
        1.0 / ((rank + 1) as f64).log2()
    } else {
        0.0
    }
}

/// 1-based rank of `target` among `candidates` ordered by descending score,
/// ties broken by ascending item index.
pub fn rank_of(scores: &[f64], candidates: &[usize], target: usize) -> Result<usize> {
    let pos = candidates
        .iter()
        .position(|&c| c == target)
        .ok_or_else(|| Error::Config(format!("target {target} is not a candidate")))?;
    let s = scores[pos];
    let ahead = scores
        .iter()
        .zip(candidates)
        .filter(|&(&x, &c)| x > s || (x == s && c < target))
        .count();
    Ok(ahead + 1)
}

/// Candidate indices sorted by descending score, ties by ascending index.
pub fn order_by_score(scores: &[f64], candidates: &[usize]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..candidates.len()).collect();
    idx.sort_by(|&a, &b| {
        scores[b]
            .total_cmp(&scores[a])
            .then(candidates[a].cmp(&candidates[b]))
    });
    idx.into_iter().map(|i| candidates[i]).collect()
}

/// Modulated scores of the candidates given a context, at time `t_query`.
pub fn score_candidates(
    model: &Model,
    context: &EventSequence,
    t_query: f64,
    candidates: &[usize],
) -> Result<Vec<f64>> {
    let ctx = context.suffix(model.config.max_len);
    let out = model.attention(&ctx.items)?;
    modulated_scores(&out, &ctx, t_query, model, candidates)
}

pub fn rank_candidates(
    model: &Model,
    context: &EventSequence,
    t_query: f64,
    candidates: &[usize],
) -> Result<Vec<usize>> {
    let scores = score_candidates(model, context, t_query, candidates)?;
    Ok(order_by_score(&scores, candidates))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub k: usize,
    /// Rank against this many sampled negatives instead of the full catalog.
    pub sampled_negatives: Option<usize>,
    pub seed: u64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            k: 10,
            sampled_negatives: None,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedMetrics {
    pub seed: u64,
    pub hit_rate: f64,
    pub ndcg: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub k: usize,
    pub hit_rate: f64,
    pub ndcg: f64,
    pub users: usize,
    #[serde(default)]
    pub per_seed: Vec<SeedMetrics>,
}

impl fmt::Display for MetricsReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{:<8} {:>10} {:>10} {:>7}", "seed", format!("HR@{}", self.k), format!("NDCG@{}", self.k), "users")?;
        for s in &self.per_seed {
            writeln!(f, "{:<8} {:>10.5} {:>10.5} {:>7}", s.seed, s.hit_rate, s.ndcg, self.users)?;
        }
        write!(f, "{:<8} {:>10.5} {:>10.5} {:>7}", "mean", self.hit_rate, self.ndcg, self.users)
    }
}

/// Rank of each holdout's target under the model.
pub fn holdout_ranks(model: &Model, holdouts: &[Holdout], cfg: &EvalConfig) -> Result<Vec<usize>> {
    let n = model.n_items();
    let full: Vec<usize> = (0..n).collect();
    holdouts
        .par_iter()
        .map(|h| {
            let candidates = match cfg.sampled_negatives {
                None => full.clone(),
                Some(count) => {
                    let mut exclude: BTreeSet<usize> = h.context.items.iter().copied().collect();
                    exclude.insert(h.target_item);
                    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
                    rng.set_stream(h.user as u64);
                    let count = count.min(n - exclude.len());
                    let mut c = sample_negatives(n, &exclude, count, &mut rng)?;
                    c.push(h.target_item);
                    c.sort_unstable();
                    c
                }
            };
            let scores = score_candidates(model, &h.context, h.target_time, &candidates)?;
            rank_of(&scores, &candidates, h.target_item)
        })
        .collect()
}

/// Mean HR@K and NDCG@K over the held-out users.
pub fn evaluate(model: &Model, holdouts: &[Holdout], cfg: &EvalConfig) -> Result<MetricsReport> {
    if holdouts.is_empty() {
        return Err(Error::EmptyDataset("no held-out users to evaluate".into()));
    }
    let ranks = holdout_ranks(model, holdouts, cfg)?;
    Ok(report_from_ranks(&ranks, cfg.k))
}

pub fn report_from_ranks(ranks: &[usize], k: usize) -> MetricsReport {
    let m = ranks.len().max(1) as f64;
    MetricsReport {
        k,
        hit_rate: ranks.iter().map(|&r| hit_rate_at_k(r, k)).sum::<f64>() / m,
        ndcg: ranks.iter().map(|&r| ndcg_at_k(r, k)).sum::<f64>() / m,
        users: ranks.len(),
        per_seed: Vec::new(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn closed_forms() {
        assert_eq!((hit_rate_at_k(1, 10), ndcg_at_k(1, 10)), (1.0, 1.0));
        assert_eq!((hit_rate_at_k(3, 10), ndcg_at_k(3, 10)), (1.0, 0.5));
        assert_eq!((hit_rate_at_k(11, 10), ndcg_at_k(11, 10)), (0.0, 0.0));
        assert_eq!(hit_rate_at_k(10, 10), 1.0);
    }

    #[test]
    fn ties_go_to_lower_index() {
        let c = [4, 1, 7];
        let s = [0.2, 0.2, 0.2];
        assert_eq!(order_by_score(&s, &c), vec![1, 4, 7]);
        assert_eq!(rank_of(&s, &c, 1).unwrap(), 1);
        assert_eq!(rank_of(&s, &c, 7).unwrap(), 3);
    }

    #[test]
    fn singleton_is_first() {
        assert_eq!(order_by_score(&[-3.0], &[9]), vec![9]);
        assert_eq!(rank_of(&[-3.0], &[9], 9).unwrap(), 1);
    }

    #[test]
    fn missing_target_is_an_error() {
        assert!(rank_of(&[1.0], &[0], 2).is_err());
    }

    #[test]
    fn report_means() {
        let r = report_from_ranks(&[1, 3, 20], 10);
        assert!((r.hit_rate - 2.0 / 3.0).abs() < 1e-15);
        assert!((r.ndcg - 0.5).abs() < 1e-15);
        assert_eq!(r.users, 3);
    }
}
