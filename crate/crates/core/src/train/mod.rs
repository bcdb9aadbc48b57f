//! Training loop, evaluation metrics and the three-arm ablation.

mod ablation;
mod loss;
mod metrics;
mod negatives;
mod optim;

pub use ablation::{ablate, ablate_with_models, AblationRow, AblationRun, AblationTable};
pub use loss::{bce, ranking_loss, sequence_objective, SequenceTerms};
pub use metrics::{
    evaluate, hit_rate_at_k, holdout_ranks, ndcg_at_k, order_by_score, rank_candidates, rank_of,
    report_from_ranks, score_candidates, EvalConfig, MetricsReport, SeedMetrics,
};
pub use negatives::{position_negatives, sample_negatives};
pub use optim::{Optimizer, OptimizerConfig, OptimizerKind};

use log::{debug, info};
use rand::seq::SliceRandom;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{EventSequence, Holdout, SplitPlan};
use crate::error::{Error, Result};
use crate::model::{Modulation, Model, ModelConfig};
use crate::numeric::{Gradients, Tape, Var};
use crate::regularizer::{regularizer_tape, IntegratorConfig};

/// Ablation arm.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Arm {
    /// Plain causal attention: no modulation, no regularizer.
    Origin,
    /// Modulated scores without the regularizer.
    SmLayer,
    /// Modulated scores with the regularizer.
    #[default]
    SmLayerCtReg,
}

impl Arm {
    pub const ALL: [Arm; 3] = [Arm::Origin, Arm::SmLayer, Arm::SmLayerCtReg];

    pub fn label(self) -> &'static str {
        match self {
            Arm::Origin => "origin",
            Arm::SmLayer => "+SMLayer",
            Arm::SmLayerCtReg => "+SMLayer+CTReg",
        }
    }

    /// Model configuration for this arm. The origin arm switches modulation
    /// off unless it is already frozen to a constant.
    pub fn model_config(self, base: &ModelConfig) -> ModelConfig {
        let mut cfg = base.clone();
        if self == Arm::Origin && cfg.modulation == Modulation::Learned {
            cfg.modulation = Modulation::Off;
        }
        cfg
    }

    pub fn gamma(self, gamma: f64) -> f64 {
        match self {
            Arm::SmLayerCtReg => gamma,
            _ => 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub optimizer: OptimizerConfig,
    pub epochs: usize,
    /// Users per step.
    pub batch_size: usize,
    /// Negatives per positive.
    pub negatives: usize,
    /// Regularizer weight.
    pub gamma: f64,
    pub integrator: IntegratorConfig,
    pub arm: Arm,
    pub eval: EvalConfig,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            optimizer: OptimizerConfig::default(),
            epochs: 20,
            batch_size: 32,
            negatives: 1,
            gamma: 1e-5,
            integrator: IntegratorConfig::default(),
            arm: Arm::SmLayerCtReg,
            eval: EvalConfig::default(),
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.optimizer.validate()?;
        if !(self.gamma >= 0.0 && self.gamma.is_finite()) {
            return Err(Error::Config(format!("gamma {} must be non-negative", self.gamma)));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be positive".into()));
        }
        if self.eval.k == 0 {
            return Err(Error::Config("K must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean over steps of the minimized objective.
    pub loss: f64,
    /// Mean over steps of the per-position cross-entropy.
    pub ranking: f64,
    /// Mean over steps of the batch-mean regularizer (0 when unused).
    pub regularizer: f64,
    pub val_hit_rate: Option<f64>,
    pub val_ndcg: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters of the best validation epoch (the last epoch without
    /// validation users).
    pub model: Model,
    pub best_epoch: usize,
    pub trace: Vec<EpochRecord>,
}

fn epoch_seed(seed: u64, epoch: usize) -> u64 {
    seed ^ (epoch as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

fn user_rng(seed: u64, epoch: usize, user: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(epoch_seed(seed, epoch));
    rng.set_stream(user as u64 + 1);
    rng
}

struct UserPass {
    ranking: f64,
    regularizer: f64,
    loss: f64,
    grads: Gradients,
}

/// Forward and backward pass of one user's share of the batch objective
/// `Σ CE / positions − γ · mean_u R(u)`.
fn user_pass(
    model: &Model,
    seq: &EventSequence,
    negatives: &[Vec<usize>],
    mc_seed: u64,
    cfg: &TrainConfig,
    gamma: f64,
    positions: usize,
    batch_users: usize,
) -> Result<UserPass> {
    let mut tape = Tape::new();
    let bound = model.bind(&mut tape)?;
    let integrator = (gamma > 0.0).then_some((&cfg.integrator, mc_seed));
    let terms = sequence_objective(model, &mut tape, &bound, seq, negatives, integrator)?;
    let mut parts: Vec<Var> = Vec::new();
    let mut ranking = 0.0;
    let mut regularizer = 0.0;
    if let Some(r) = terms.ranking {
        ranking = tape.value(r).item() / positions as f64;
        parts.push(tape.scale(r, 1.0 / positions as f64)?);
    }
    if let Some(reg) = terms.regularizer {
        regularizer = tape.value(reg.total).item() / batch_users as f64;
        parts.push(tape.scale(reg.total, -gamma / batch_users as f64)?);
    }
    let Some(mut loss) = parts.first().copied() else {
        return Ok(UserPass {
            ranking,
            regularizer,
            loss: 0.0,
            grads: Gradients::default(),
        });
    };
    for &p in &parts[1..] {
        loss = tape.add(loss, p)?;
    }
    Ok(UserPass {
        ranking,
        regularizer,
        loss: tape.value(loss).item(),
        grads: tape.backward(loss)?,
    })
}

fn diverged(model: &Model, epoch: usize, batch: usize, cause: &str) -> Error {
    let norms: Vec<String> = model
        .params
        .norms()
        .into_iter()
        .map(|(n, v)| format!("{n}={v:.6e}"))
        .collect();
    Error::Diverged {
        epoch,
        batch,
        diagnostics: format!("{cause}; parameter norms: {}", norms.join(", ")),
    }
}

/// Mini-batch training on the split's training users, validating on its
/// validation holdouts after every epoch.
///
/// Users within a step are processed in parallel; their gradients are summed
/// in user order so results do not depend on the thread count.
pub fn train(
    mut model: Model,
    sequences: &[EventSequence],
    split: &SplitPlan,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let users: Vec<usize> = split.train.iter().copied().filter(|&u| sequences[u].len() >= 2).collect();
    if users.is_empty() {
        return Err(Error::EmptyDataset("no training user has two events".into()));
    }
    if cfg.arm == Arm::Origin && model.config.modulation == Modulation::Learned {
        model.config.modulation = Modulation::Off;
    }
    let gamma = cfg.arm.gamma(cfg.gamma);
    if gamma > 0.0 && model.config.modulation == Modulation::Off {
        return Err(Error::Config("the regularizer needs a modulated model".into()));
    }
    let max_len = model.config.max_len;
    let train_seqs: Vec<EventSequence> = sequences.iter().map(|s| s.suffix(max_len)).collect();
    let n = model.n_items();

    let mut opt = Optimizer::new(cfg.optimizer.clone())?;
    let mut trace = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(f64, usize, Model)> = None;

    for epoch in 0..cfg.epochs {
        let mut order = users.clone();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(epoch_seed(cfg.seed, epoch)));
        let (mut loss_sum, mut rank_sum, mut reg_sum) = (0.0, 0.0, 0.0);
        let batches: Vec<&[usize]> = order.chunks(cfg.batch_size).collect();
        for (b, batch) in batches.iter().enumerate() {
            let positions: usize = batch.iter().map(|&u| train_seqs[u].len() - 1).sum();
            let passes: Vec<Result<UserPass>> = batch
                .par_iter()
                .map(|&u| {
                    let seq = &train_seqs[u];
                    let mut rng = user_rng(cfg.seed, epoch, u);
                    let negatives = position_negatives(n, &seq.items, cfg.negatives, &mut rng)?;
                    let mc_seed = rng.next_u64();
                    user_pass(&model, seq, &negatives, mc_seed, cfg, gamma, positions, batch.len())
                })
                .collect();
            let mut grads = Gradients::default();
            let (mut loss, mut ranking, mut reg) = (0.0, 0.0, 0.0);
            for pass in passes {
                let pass = pass.map_err(|e| match e {
                    Error::NonFinite(what) => diverged(&model, epoch, b, &format!("non-finite {what}")),
                    other => other,
                })?;
                grads.accumulate(&pass.grads);
                loss += pass.loss;
                ranking += pass.ranking;
                reg += pass.regularizer;
            }
            if !loss.is_finite() || !grads.global_norm().is_finite() {
                return Err(diverged(&model, epoch, b, &format!("loss {loss}")));
            }
            opt.step(&mut model.params, &grads);
            loss_sum += loss;
            rank_sum += ranking;
            reg_sum += reg;
        }
        let steps = batches.len() as f64;
        let (val_hit_rate, val_ndcg) = if split.validation_holdouts.is_empty() {
            (None, None)
        } else {
            let r = evaluate(&model, &split.validation_holdouts, &cfg.eval)?;
            (Some(r.hit_rate), Some(r.ndcg))
        };
        let record = EpochRecord {
            epoch,
            loss: loss_sum / steps,
            ranking: rank_sum / steps,
            regularizer: reg_sum / steps,
            val_hit_rate,
            val_ndcg,
        };
        info!(
            "epoch {epoch}: loss {:.6} ranking {:.6} reg {:.4} val HR {:?}",
            record.loss, record.ranking, record.regularizer, record.val_hit_rate
        );
        let score = val_hit_rate.unwrap_or(f64::NEG_INFINITY);
        let improves = match &best {
            None => true,
            Some((s, _, _)) => score > *s || val_hit_rate.is_none(),
        };
        if improves {
            best = Some((score, epoch, model.clone()));
        }
        trace.push(record);
    }
    let (best_epoch, best_model) = match best {
        Some((_, e, m)) => (e, m),
        None => (0, model),
    };
    debug!("best epoch {best_epoch}");
    Ok(TrainOutcome {
        model: best_model,
        best_epoch,
        trace,
    })
}

/// Records the full objective of a set of sequences on one tape, with fixed
/// negatives and Monte Carlo seeds. Used for gradient checks.
pub fn batch_objective(
    model: &Model,
    tape: &mut Tape,
    batch: &[(EventSequence, Vec<Vec<usize>>, u64)],
    gamma: f64,
    integrator: &IntegratorConfig,
) -> Result<Var> {
    let bound = model.bind(tape)?;
    let positions: usize = batch.iter().map(|(s, _, _)| s.len().saturating_sub(1)).sum::<usize>().max(1);
    let mut total: Option<Var> = None;
    for (seq, negs, mc_seed) in batch {
        let integ = (gamma > 0.0).then_some((integrator, *mc_seed));
        let terms = sequence_objective(model, tape, &bound, seq, negs, integ)?;
        let mut parts = Vec::new();
        if let Some(r) = terms.ranking {
            parts.push(tape.scale(r, 1.0 / positions as f64)?);
        }
        if let Some(reg) = terms.regularizer {
            parts.push(tape.scale(reg.total, -gamma / batch.len() as f64)?);
        }
        for p in parts {
            total = Some(match total {
                None => p,
                Some(t) => tape.add(t, p)?,
            });
        }
    }
    total.ok_or_else(|| Error::EmptyDataset("objective has no terms".into()))
}

/// Fixed negatives and Monte Carlo seeds for a deterministic batch.
pub fn fixed_batch(
    sequences: &[EventSequence],
    n_items: usize,
    negatives: usize,
    seed: u64,
) -> Result<Vec<(EventSequence, Vec<Vec<usize>>, u64)>> {
    sequences
        .iter()
        .enumerate()
        .map(|(u, s)| {
            let mut rng = user_rng(seed, 0, u);
            let negs = position_negatives(n_items, &s.items, negatives, &mut rng)?;
            Ok((s.clone(), negs, rng.next_u64()))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitConfig {
    pub optimizer: OptimizerConfig,
    pub steps: usize,
    pub integrator: IntegratorConfig,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            optimizer: OptimizerConfig {
                lr: 0.05,
                ..OptimizerConfig::default()
            },
            steps: 300,
            integrator: IntegratorConfig::default(),
        }
    }
}

/// Maximizes the mean point-process objective `R(u)` over the sequences by
/// full-batch gradient steps; returns the fitted model and the objective per
/// step.
pub fn fit_point_process(
    mut model: Model,
    sequences: &[EventSequence],
    cfg: &FitConfig,
) -> Result<(Model, Vec<f64>)> {
    if sequences.is_empty() {
        return Err(Error::EmptyDataset("nothing to fit".into()));
    }
    let seqs: Vec<EventSequence> = sequences.iter().map(|s| s.suffix(model.config.max_len)).collect();
    let mut opt = Optimizer::new(cfg.optimizer.clone())?;
    let m = seqs.len() as f64;
    let mut trace = Vec::with_capacity(cfg.steps);
    for step in 0..cfg.steps {
        let passes: Vec<Result<(f64, Gradients)>> = seqs
            .par_iter()
            .enumerate()
            .map(|(u, s)| {
                let mut tape = Tape::new();
                let bound = model.bind(&mut tape)?;
                let enc = model.encode(&mut tape, &bound, &s.items)?;
                let mc_seed = epoch_seed(cfg.integrator.seed, step) ^ u as u64;
                let reg = regularizer_tape(&model, &mut tape, &bound, enc.h, s, &cfg.integrator, mc_seed)?;
                let loss = tape.scale(reg.total, -1.0 / m)?;
                Ok((tape.value(reg.total).item(), tape.backward(loss)?))
            })
            .collect();
        let mut grads = Gradients::default();
        let mut total = 0.0;
        for p in passes {
            let (r, g) = p?;
            total += r;
            grads.accumulate(&g);
        }
        if !total.is_finite() {
            return Err(diverged(&model, step, 0, "non-finite point-process objective"));
        }
        trace.push(total / m);
        opt.step(&mut model.params, &grads);
    }
    Ok((model, trace))
}

/// Holdouts of the given users.
pub fn holdouts_of(sequences: &[EventSequence], users: &[usize]) -> Vec<Holdout> {
    users
        .iter()
        .filter_map(|&u| Holdout::from_sequence(u, &sequences[u]))
        .collect()
}
