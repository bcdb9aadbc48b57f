//! The self-modulating layer: per-head modulator features, conditional
//! intensities and intensity-modulated ranking scores.
//!
//! For head `k`, anchored on the history representation `h(t_j)` of the most
//! recent event at `t_j <= t`,
//!
//! ```text
//! g_k(t)  = tanh(W_k h(t_j) + b_k (t - t_j))
//! λ_k(t)  = φ_k · ln(1 + exp((w_k·g_k(t) + μ_k) / φ_k))
//! ```
//!
//! and a candidate item `i` scored by head `k = head(i)` receives
//! `p_i · λ_k(t)`, where `p` is the softmax of `h(t_L)·B_i` over the
//! candidate set.
//!
//! The functions here evaluate one head at a time on plain slices. Training
//! evaluates all heads at once through [`Model::intensities`]; tests check the
//! two agree.

use std::io::Write;

use crate::attention::AttentionOutput;
use crate::data::EventSequence;
use crate::error::{Error, Result};
use crate::model::{names, Modulation, Model};
use crate::numeric::{dot, scaled_softplus_scalar, NumArray};

/// Parameters of a single intensity head.
#[derive(Debug, Clone, Copy)]
pub struct HeadParams<'a> {
    /// `d_g x d`, row-major.
    pub w_g: &'a [f64],
    pub b_g: &'a [f64],
    pub w: &'a [f64],
    pub mu: f64,
    pub phi: f64,
}

/// Read-only view of the modulator parameters of a model.
#[derive(Debug, Clone, Copy)]
pub struct ModulatorParams<'a> {
    w_g: &'a NumArray,
    b_g: &'a NumArray,
    w: &'a NumArray,
    mu: &'a NumArray,
    log_phi: &'a NumArray,
    d_g: usize,
}

impl<'a> ModulatorParams<'a> {
    pub fn of(model: &'a Model) -> Self {
        let get = |n: &str| model.params.get(n).expect("modulator parameter present");
        Self {
            w_g: get(names::MOD_W_G),
            b_g: get(names::MOD_B_G),
            w: get(names::MOD_W),
            mu: get(names::MOD_MU),
            log_phi: get(names::MOD_LOG_PHI),
            d_g: model.config.feature_width(),
        }
    }

    pub fn heads(&self) -> usize {
        self.mu.cols()
    }

    pub fn head(&self, k: usize) -> HeadParams<'a> {
        let dg = self.d_g;
        let d = self.w_g.cols();
        HeadParams {
            w_g: &self.w_g.values()[k * dg * d..(k + 1) * dg * d],
            b_g: &self.b_g.values()[k * dg..(k + 1) * dg],
            w: &self.w.values()[k * dg..(k + 1) * dg],
            mu: self.mu.values()[k],
            phi: self.log_phi.values()[k].exp(),
        }
    }
}

/// `g_k(t) = tanh(W_k h + b_k (t - t_anchor))`.
pub fn modulator_features(h: &[f64], t: f64, t_anchor: f64, head: &HeadParams) -> Result<Vec<f64>> {
    if t < t_anchor {
        return Err(Error::TemporalOrder { t, anchor: t_anchor });
    }
    let d = h.len();
    if head.w_g.len() != head.b_g.len() * d {
        return Err(Error::Dimension(format!(
            "modulator weights of {} entries for {} features of width {d}",
            head.w_g.len(),
            head.b_g.len()
        )));
    }
    let dt = t - t_anchor;
    Ok(head
        .b_g
        .iter()
        .enumerate()
        .map(|(r, b)| (dot(&head.w_g[r * d..(r + 1) * d], h) + b * dt).tanh())
        .collect())
}

/// `λ_k(t) = softplus_φ(w_k·g_k(t) + μ_k)`; always strictly positive.
pub fn intensity(h: &[f64], t: f64, t_anchor: f64, head: &HeadParams) -> Result<f64> {
    let g = modulator_features(h, t, t_anchor, head)?;
    if !(head.phi > 0.0) {
        return Err(Error::ParameterDomain(format!("timescale {} must be positive", head.phi)));
    }
    Ok(scaled_softplus_scalar(dot(head.w, &g) + head.mu, head.phi))
}

/// Intensity of head `k` under the model's modulation mode.
pub fn head_intensity(model: &Model, h: &[f64], t: f64, t_anchor: f64, k: usize) -> Result<f64> {
    match model.config.modulation {
        Modulation::Learned => intensity(h, t, t_anchor, &ModulatorParams::of(model).head(k)),
        Modulation::Constant(c) => {
            if t < t_anchor {
                return Err(Error::TemporalOrder { t, anchor: t_anchor });
            }
            Ok(c)
        }
        Modulation::Off => Err(Error::Config("modulation is off; no intensity to evaluate".into())),
    }
}

/// Raw attention logits `h·B_i` for each candidate.
pub fn candidate_logits(model: &Model, h: &[f64], candidates: &[usize]) -> Result<Vec<f64>> {
    let b = model.params.get(names::OUT_EMB).expect("output embeddings present");
    candidates
        .iter()
        .map(|&c| {
            if c >= b.rows() {
                Err(Error::Vocabulary(format!("candidate {c} outside catalog of {}", b.rows())))
            } else {
                Ok(dot(h, b.row(c)))
            }
        })
        .collect()
}

/// Ranking scores for `candidates` at query time `t >= t_L`.
///
/// The base distribution is the softmax of the attention logits over the
/// candidate set; each entry is multiplied by its head's intensity unless
/// modulation is off.
pub fn modulated_scores(
    out: &AttentionOutput,
    seq: &EventSequence,
    t: f64,
    model: &Model,
    candidates: &[usize],
) -> Result<Vec<f64>> {
    if candidates.is_empty() {
        return Err(Error::Config("empty candidate set".into()));
    }
    let t_last = seq.last_time();
    if t < t_last {
        return Err(Error::TemporalOrder { t, anchor: t_last });
    }
    let h = out.h.row(out.h.rows() - 1);
    let logits = candidate_logits(model, h, candidates)?;
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    let probs = exps.iter().map(|e| e / total);
    if model.config.modulation == Modulation::Off {
        return Ok(probs.collect());
    }
    let mut cache: Vec<Option<f64>> = vec![None; model.head_count()];
    probs
        .zip(candidates)
        .map(|(p, &c)| {
            let k = model.head_of_item[c];
            let lam = match cache[k] {
                Some(v) => v,
                None => {
                    let v = head_intensity(model, h, t, t_last, k)?;
                    cache[k] = Some(v);
                    v
                }
            };
            Ok(p * lam)
        })
        .collect()
}

/// Index of the latest event at or before `t`.
pub fn anchor_index(times: &[f64], t: f64) -> Option<usize> {
    let n = times.partition_point(|&x| x <= t);
    n.checked_sub(1)
}

/// `λ_k(grid_g)` for each grid time and requested head, anchored on the most
/// recent event at or before the grid time.
pub fn intensity_matrix(
    seq: &EventSequence,
    model: &Model,
    grid: &[f64],
    heads: &[usize],
) -> Result<NumArray> {
    if let Some(&k) = heads.iter().find(|&&k| k >= model.head_count()) {
        return Err(Error::Config(format!("head {k} outside {} heads", model.head_count())));
    }
    let out = model.attention(&seq.items)?;
    let mut values = Vec::with_capacity(grid.len() * heads.len());
    for &t in grid {
        let j = anchor_index(&seq.times, t).ok_or_else(|| {
            Error::Config(format!("grid time {t} precedes the first event at {}", seq.times[0]))
        })?;
        for &k in heads {
            values.push(head_intensity(model, out.h.row(j), t, seq.times[j], k)?);
        }
    }
    NumArray::new(vec![grid.len(), heads.len()], values)
}

/// Evenly spaced grid from the first event to `horizon` past the last one.
pub fn uniform_grid(seq: &EventSequence, horizon: f64, points: usize) -> Vec<f64> {
    let start = seq.times[0];
    let end = seq.last_time() + horizon.max(0.0);
    if points <= 1 || end == start {
        return vec![start];
    }
    let step = (end - start) / (points - 1) as f64;
    (0..points).map(|i| start + step * i as f64).collect()
}

/// Writes `time,head_<k>,...` followed by one row per grid time.
pub fn write_intensity_csv<W: Write>(
    out: W,
    grid: &[f64],
    heads: &[usize],
    matrix: &NumArray,
) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["time".to_string()];
    header.extend(heads.iter().map(|k| format!("head_{k}")));
    w.write_record(&header).map_err(|e| Error::Io(e.to_string()))?;
    for (g, &t) in grid.iter().enumerate() {
        let mut row = vec![t.to_string()];
        row.extend(matrix.row(g).iter().map(|v| v.to_string()));
        w.write_record(&row).map_err(|e| Error::Io(e.to_string()))?;
    }
    w.flush()?;
    Ok(())
}
