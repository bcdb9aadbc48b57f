//! Binary cross-entropy ranking loss on modulated logits.
//!
//! A candidate's training logit is `h·B_i + ln λ_{head(i)}`, the log of its
//! unnormalized modulated score; with modulation off it is `h·B_i`.

use crate::data::EventSequence;
use crate::error::{Error, Result};
use crate::model::{Bound, Modulation, Model};
use crate::numeric::{Tape, Var};
use crate::regularizer::{event_points, point_intensities, regularizer_from_events, IntegratorConfig, RegularizerVars};
use crate::sm_layer::{candidate_logits, head_intensity};

/// `−ln σ(z⁺) − Σ ln(1 − σ(z⁻))`.
pub fn bce(positive: f64, negatives: &[f64]) -> f64 {
    let ln_sig = |z: f64| z.min(0.0) - (-z.abs()).exp().ln_1p();
    -ln_sig(positive) - negatives.iter().map(|&z| ln_sig(-z)).sum::<f64>()
}

/// Loss of predicting `target` after `context` at `t_query` against the
/// given negatives.
pub fn ranking_loss(
    context: &EventSequence,
    target: usize,
    negatives: &[usize],
    model: &Model,
    t_query: f64,
) -> Result<f64> {
    if negatives.contains(&target) {
        return Err(Error::Sampling(format!("target {target} listed among its negatives")));
    }
    let ctx = context.suffix(model.config.max_len);
    let out = model.attention(&ctx.items)?;
    let h = out.h.row(out.h.rows() - 1);
    let mut candidates = vec![target];
    candidates.extend_from_slice(negatives);
    let mut z = candidate_logits(model, h, &candidates)?;
    if model.config.modulation != Modulation::Off {
        for (zi, &c) in z.iter_mut().zip(&candidates) {
            let lam = head_intensity(model, h, t_query, ctx.last_time(), model.head_of_item[c])?;
            *zi += lam.ln();
        }
    }
    Ok(bce(z[0], &z[1..]))
}

/// Tape handles of one sequence's training objective.
#[derive(Debug, Clone, Copy)]
pub struct SequenceTerms {
    /// Summed cross-entropy over all positions, `None` for one-event
    /// sequences.
    pub ranking: Option<Var>,
    pub positions: usize,
    pub regularizer: Option<RegularizerVars>,
}

/// Records the teacher-forced ranking loss of a sequence: position `e`
/// predicts event `e` from events `0..e`, at the event's own time.
/// `negatives[e - 1]` lists position `e`'s negatives.
///
/// When `integrator` is given the continuous-time regularizer is recorded
/// too, sharing the event-time intensities with the ranking terms.
pub fn sequence_objective(
    model: &Model,
    tape: &mut Tape,
    bound: &Bound,
    seq: &EventSequence,
    negatives: &[Vec<usize>],
    integrator: Option<(&IntegratorConfig, u64)>,
) -> Result<SequenceTerms> {
    let l = seq.len();
    if negatives.len() != l.saturating_sub(1) {
        return Err(Error::Dimension(format!(
            "{} negative lists for {} positions",
            negatives.len(),
            l.saturating_sub(1)
        )));
    }
    let enc = model.encode(tape, bound, &seq.items)?;
    let table = model.anchor_table(tape, enc.h)?;
    let lambda = match model.config.modulation {
        Modulation::Off => None,
        _ => Some(point_intensities(model, tape, bound, table, &event_points(&seq.times))?),
    };

    let ranking = if l < 2 {
        None
    } else {
        let prefix = tape.gather_rows(enc.h, (0..l - 1).collect())?;
        let logits = tape.matmul_nt(prefix, bound.out_emb)?;
        let pos_idx: Vec<(usize, usize)> = (1..l).map(|e| (e, seq.items[e])).collect();
        let neg_idx: Vec<(usize, usize)> = negatives
            .iter()
            .enumerate()
            .flat_map(|(p, ns)| ns.iter().map(move |&i| (p + 1, i)))
            .collect();

        let logit_of = |tape: &mut Tape, idx: &[(usize, usize)]| -> Result<Var> {
            let z = tape.pick(logits, idx.iter().map(|&(e, i)| (e - 1, i)).collect())?;
            match lambda {
                None => Ok(z),
                Some(lam) => {
                    let own = tape.pick(lam, idx.iter().map(|&(e, i)| (e, model.head_of_item[i])).collect())?;
                    let ln = tape.ln(own)?;
                    tape.add(z, ln)
                }
            }
        };
        let z_pos = logit_of(tape, &pos_idx)?;
        let pos = tape.log_sigmoid(z_pos)?;
        let mut total = tape.sum(pos)?;
        if !neg_idx.is_empty() {
            let z_neg = logit_of(tape, &neg_idx)?;
            let flipped = tape.scale(z_neg, -1.0)?;
            let neg = tape.log_sigmoid(flipped)?;
            let neg = tape.sum(neg)?;
            total = tape.add(total, neg)?;
        }
        Some(tape.scale(total, -1.0)?)
    };

    let regularizer = match (integrator, lambda) {
        (Some((cfg, seed)), Some(lam)) => Some(regularizer_from_events(model, tape, bound, table, lam, seq, cfg, seed)?),
        (Some(_), None) => {
            return Err(Error::Config("the regularizer needs a modulated model".into()));
        }
        (None, _) => None,
    };
    Ok(SequenceTerms {
        ranking,
        positions: l.saturating_sub(1),
        regularizer,
    })
}
