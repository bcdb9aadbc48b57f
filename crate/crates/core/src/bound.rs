//! Generalization-bound diagnostics: attention sparsity `ρ`, per-term score
//! magnitude `μ`, the capacity constant `C = d(m+n)·log(48·e·m·n)` and the
//! complexity term
//!
//! ```text
//! L·μ·sqrt(C·ρ·ln|Ω| / |Ω|) + sqrt(ln(1/δ) / |Ω|)
//! ```

use serde::{Deserialize, Serialize};

use crate::data::Holdout;
use crate::error::{Error, Result};
use crate::model::{names, Model};
use crate::numeric::{dot, NumArray};

/// Base of the logarithm inside `C`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum LogBase {
    #[default]
    Natural,
    Two,
    Ten,
}

impl LogBase {
    pub fn log(self, x: f64) -> f64 {
        match self {
            LogBase::Natural => x.ln(),
            LogBase::Two => x.log2(),
            LogBase::Ten => x.log10(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundInputs {
    /// Lipschitz constant of the loss.
    pub lipschitz: f64,
    pub mu: f64,
    pub rho: f64,
    pub omega_size: usize,
    pub delta: f64,
    pub d: usize,
    pub m: usize,
    pub n: usize,
    #[serde(default)]
    pub log_base: LogBase,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundTerms {
    pub c: f64,
    /// `L·μ·sqrt(C·ρ·ln|Ω| / |Ω|)`
    pub capacity: f64,
    /// `sqrt(ln(1/δ) / |Ω|)`
    pub confidence: f64,
    pub total: f64,
}

pub fn capacity_constant(d: usize, m: usize, n: usize, base: LogBase) -> f64 {
    let (m, n) = (m as f64, n as f64);
    d as f64 * (m + n) * base.log(48.0 * std::f64::consts::E * m * n)
}

pub fn bound_complexity_term(inputs: &BoundInputs) -> Result<BoundTerms> {
    let domain = |m: &str| Err(Error::ParameterDomain(m.into()));
    if !(inputs.delta > 0.0 && inputs.delta < 1.0) {
        return domain("delta must lie in (0, 1)");
    }
    if inputs.omega_size == 0 || inputs.d == 0 || inputs.m == 0 || inputs.n == 0 {
        return domain("|Ω|, d, m and n must be positive");
    }
    if !(inputs.lipschitz >= 0.0 && inputs.mu >= 0.0 && inputs.rho >= 0.0) {
        return domain("L, μ and ρ must be non-negative");
    }
    let omega = inputs.omega_size as f64;
    let c = capacity_constant(inputs.d, inputs.m, inputs.n, inputs.log_base);
    let capacity = inputs.lipschitz * inputs.mu * (c * inputs.rho * omega.ln() / omega).sqrt();
    let confidence = ((1.0 / inputs.delta).ln() / omega).sqrt();
    Ok(BoundTerms {
        c,
        capacity,
        confidence,
        total: capacity + confidence,
    })
}

/// Mean number of entries with magnitude above `epsilon` per row.
pub fn empirical_rho(rows: &[Vec<f64>], epsilon: f64) -> Result<f64> {
    if rows.is_empty() {
        return Err(Error::ParameterDomain("empty sample set".into()));
    }
    if !(epsilon >= 0.0) {
        return Err(Error::ParameterDomain(format!("epsilon {epsilon} must be non-negative")));
    }
    let count: usize = rows
        .iter()
        .map(|r| r.iter().filter(|v| v.abs() > epsilon).count())
        .sum();
    Ok(count as f64 / rows.len() as f64)
}

/// One sampled `(user, item)` pair: the user's attention row, value rows and
/// the sampled item.
#[derive(Debug, Clone, PartialEq)]
pub struct MuSample {
    /// Length-`L` attention row.
    pub p: Vec<f64>,
    /// `L x d` value rows.
    pub v: NumArray,
    pub item: usize,
}

/// `max |P_k · (V B)_{k,i}|` over samples and positions `k`, with
/// `(V B)_{k,i} = V_k · B_i`.
pub fn empirical_mu(samples: &[MuSample], b: &NumArray) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::ParameterDomain("empty sample set".into()));
    }
    let mut best = 0.0f64;
    for s in samples {
        if s.p.len() != s.v.rows() || s.v.cols() != b.cols() || s.item >= b.rows() {
            return Err(Error::Dimension(format!(
                "attention row of {}, values {:?}, item {} against B {:?}",
                s.p.len(),
                s.v.shape(),
                s.item,
                b.shape()
            )));
        }
        for (k, &pk) in s.p.iter().enumerate() {
            best = best.max((pk * dot(s.v.row(k), b.row(s.item))).abs());
        }
    }
    Ok(best)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub rho: f64,
    pub mu: f64,
    #[serde(rename = "C")]
    pub c: f64,
    pub complexity_term: f64,
    pub epsilon: f64,
    pub omega_size: usize,
    pub delta: f64,
    pub lipschitz: f64,
    /// Which rows stand in for `P`.
    pub p_rows: String,
}

/// Bound diagnostics of a model over held-out users: each user contributes
/// its last-position attention row and its target item.
pub fn bound_report(
    model: &Model,
    holdouts: &[Holdout],
    m_users: usize,
    epsilon: f64,
    delta: f64,
    lipschitz: f64,
    log_base: LogBase,
) -> Result<BoundReport> {
    let mut rows = Vec::with_capacity(holdouts.len());
    let mut samples = Vec::with_capacity(holdouts.len());
    for h in holdouts {
        let ctx = h.context.suffix(model.config.max_len);
        let out = model.attention(&ctx.items)?;
        let last = out.p.row(out.p.rows() - 1).to_vec();
        rows.push(last.clone());
        samples.push(MuSample {
            p: last,
            v: out.v,
            item: h.target_item,
        });
    }
    let rho = empirical_rho(&rows, epsilon)?;
    let b = model.params.get(names::OUT_EMB).expect("output embeddings present");
    let mu = empirical_mu(&samples, b)?;
    let terms = bound_complexity_term(&BoundInputs {
        lipschitz,
        mu,
        rho,
        omega_size: holdouts.len(),
        delta,
        d: model.config.d,
        m: m_users,
        n: model.n_items(),
        log_base,
    })?;
    Ok(BoundReport {
        rho,
        mu,
        c: terms.c,
        complexity_term: terms.total,
        epsilon,
        omega_size: holdouts.len(),
        delta,
        lipschitz,
        p_rows: "last-position attention row of each held-out user".into(),
    })
}
