use std::fmt;

use log::info;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{evaluate, train, Arm, SeedMetrics, TrainConfig};
use crate::data::{EventSequence, SplitPlan};
use crate::error::{Error, Result};
use crate::model::{Model, ModelConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub arm: Arm,
    pub label: String,
    pub hr_mean: f64,
    pub hr_std: f64,
    pub ndcg_mean: f64,
    pub ndcg_std: f64,
    pub per_seed: Vec<SeedMetrics>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationTable {
    pub k: usize,
    pub users: usize,
    pub rows: Vec<AblationRow>,
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

impl fmt::Display for AblationTable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let hr = format!("HR@{}", self.k);
        let nd = format!("NDCG@{}", self.k);
        writeln!(f, "{:<16} {:>20} {:>20}", "arm", hr, nd)?;
        for r in &self.rows {
            writeln!(
                f,
                "{:<16} {:>11.5} ± {:<6.4} {:>11.5} ± {:<6.4}",
                r.label, r.hr_mean, r.hr_std, r.ndcg_mean, r.ndcg_std
            )?;
        }
        write!(f, "({} test users, {} seeds)", self.users, self.rows.first().map_or(0, |r| r.per_seed.len()))
    }
}

/// A trained arm for one seed.
#[derive(Debug, Clone)]
pub struct AblationRun {
    pub arm: Arm,
    pub seed: u64,
    pub best_epoch: usize,
    pub model: Model,
}

/// Trains every arm once per seed on the same data and split, and reports
/// test-set HR@K / NDCG@K as mean ± sample standard deviation.
///
/// A seed drives both the initialization and the training randomness, so
/// the arms of one seed start from identical parameters.
pub fn ablate(
    sequences: &[EventSequence],
    groups: Option<&[usize]>,
    split: &SplitPlan,
    model_cfg: &ModelConfig,
    base: &TrainConfig,
    seeds: &[u64],
) -> Result<AblationTable> {
    ablate_with_models(sequences, groups, split, model_cfg, base, seeds).map(|(table, _)| table)
}

/// As [`ablate`], also returning the trained models in arm-major order.
/// Seeds train concurrently; results do not depend on the thread count.
pub fn ablate_with_models(
    sequences: &[EventSequence],
    groups: Option<&[usize]>,
    split: &SplitPlan,
    model_cfg: &ModelConfig,
    base: &TrainConfig,
    seeds: &[u64],
) -> Result<(AblationTable, Vec<AblationRun>)> {
    if seeds.is_empty() {
        return Err(Error::Config("ablation needs at least one seed".into()));
    }
    if split.test_holdouts.is_empty() {
        return Err(Error::EmptyDataset("no test users to evaluate".into()));
    }
    let mut rows = Vec::with_capacity(Arm::ALL.len());
    let mut runs = Vec::with_capacity(Arm::ALL.len() * seeds.len());
    for arm in Arm::ALL {
        let results: Vec<Result<(SeedMetrics, AblationRun)>> = seeds
            .par_iter()
            .map(|&seed| {
                let model = Model::new(arm.model_config(model_cfg), groups, seed)?;
                let cfg = TrainConfig {
                    arm,
                    seed,
                    ..base.clone()
                };
                let outcome = train(model, sequences, split, &cfg)?;
                let report = evaluate(&outcome.model, &split.test_holdouts, &base.eval)?;
                info!(
                    "{} seed {seed}: HR {:.5} NDCG {:.5} (best epoch {})",
                    arm.label(),
                    report.hit_rate,
                    report.ndcg,
                    outcome.best_epoch
                );
                let metrics = SeedMetrics {
                    seed,
                    hit_rate: report.hit_rate,
                    ndcg: report.ndcg,
                };
                let run = AblationRun {
                    arm,
                    seed,
                    best_epoch: outcome.best_epoch,
                    model: outcome.model,
                };
                Ok((metrics, run))
            })
            .collect();
        let mut per_seed = Vec::with_capacity(seeds.len());
        for r in results {
            let (metrics, run) = r?;
            per_seed.push(metrics);
            runs.push(run);
        }
        let (hr_mean, hr_std) = mean_std(&per_seed.iter().map(|s| s.hit_rate).collect::<Vec<_>>());
        let (ndcg_mean, ndcg_std) = mean_std(&per_seed.iter().map(|s| s.ndcg).collect::<Vec<_>>());
        rows.push(AblationRow {
            arm,
            label: arm.label().to_string(),
            hr_mean,
            hr_std,
            ndcg_mean,
            ndcg_std,
            per_seed,
        });
    }
    let table = AblationTable {
        k: base.eval.k,
        users: split.test_holdouts.len(),
        rows,
    };
    Ok((table, runs))
}

#[cfg(test)]
mod tests {
    use super::mean_std;

    #[test]
    fn sample_standard_deviation() {
        let (m, s) = mean_std(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(m, 2.5);
        assert!((s - (5.0f64 / 3.0).sqrt()).abs() < 1e-15);
        assert_eq!(mean_std(&[0.3]), (0.3, 0.0));
    }
}
