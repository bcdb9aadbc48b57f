//! Item embedding, positional encoding and single-head causal self-attention.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::{causal_mask, NumArray, Tape, Var};

/// Which index the sine/cosine parity alternates on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Parity {
    /// Parity of the position index selects sine or cosine.
    #[default]
    Position,
    /// Parity of the dimension index selects sine or cosine (the usual
    /// transformer layout).
    Dimension,
}

/// Sinusoidal positional encoding, `l` rows by `d_pe` columns.
///
/// Entry `(i, j)` is `sin(i / 10000^(j/d_pe))` when the selected index is even
/// and `cos(i / 10000^((j-1)/d_pe))` when it is odd; both indices start at 0.
pub fn positional_encoding(l: usize, d_pe: usize, parity: Parity) -> Result<NumArray> {
    if l == 0 {
        return Err(Error::Config("positional encoding needs at least one row".into()));
    }
    if d_pe % 2 != 0 {
        return Err(Error::Config(format!("positional width {d_pe} must be even")));
    }
    let d = d_pe as f64;
    let mut values = Vec::with_capacity(l * d_pe);
    for i in 0..l {
        for j in 0..d_pe {
            let selector = match parity {
                Parity::Position => i,
                Parity::Dimension => j,
            };
            let pos = i as f64;
            let v = if selector % 2 == 0 {
                (pos / 10000f64.powf(j as f64 / d)).sin()
            } else {
                (pos / 10000f64.powf((j as f64 - 1.0) / d)).cos()
            };
            values.push(v);
        }
    }
    NumArray::new(vec![l, d_pe], values)
}

/// Tape handles for one attention block.
#[derive(Debug, Clone, Copy)]
pub struct BlockVars {
    pub w_q: Var,
    pub w_k: Var,
    pub w_v: Var,
    pub bias: Option<(Var, Var, Var)>,
}

/// Per-position history representations and the causal attention weights.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionOutput {
    /// `L x d`; row `j` summarizes events `0..=j`.
    pub h: NumArray,
    /// `L x L` lower-triangular row-stochastic weights of the last block.
    pub p: NumArray,
    /// `L x d` value rows of the last block.
    pub v: NumArray,
}

/// Records `concat(Y[items], Z)` on the tape.
pub fn embed_tape(tape: &mut Tape, table: Var, items: &[usize], z: &NumArray) -> Result<Var> {
    let n = tape.value(table).rows();
    if let Some(bad) = items.iter().find(|&&i| i >= n) {
        return Err(Error::Vocabulary(format!(
            "item index {bad} outside embedding table of {n} rows"
        )));
    }
    if z.rows() != items.len() {
        return Err(Error::Dimension(format!(
            "{} positional rows for {} events",
            z.rows(),
            items.len()
        )));
    }
    let y = tape.gather_rows(table, items.to_vec())?;
    let zc = tape.constant(z.clone());
    tape.concat_cols(y, zc)
}

/// Plain-value form of [`embed_tape`].
pub fn embed(items: &[usize], table: &NumArray, z: &NumArray) -> Result<NumArray> {
    let mut tape = Tape::new();
    let t = tape.constant(table.clone());
    let x = embed_tape(&mut tape, t, items, z)?;
    Ok(tape.value(x).clone())
}

/// Records one masked attention block: `softmax(QKᵀ/√d) V` with future
/// positions masked. Returns `(H, P, V)`.
pub fn attention_block_tape(
    tape: &mut Tape,
    x: Var,
    block: &BlockVars,
    residual: bool,
) -> Result<(Var, Var, Var)> {
    let mut q = tape.matmul(x, block.w_q)?;
    let mut k = tape.matmul(x, block.w_k)?;
    let mut v = tape.matmul(x, block.w_v)?;
    if let Some((bq, bk, bv)) = block.bias {
        q = tape.add_row(q, bq)?;
        k = tape.add_row(k, bk)?;
        v = tape.add_row(v, bv)?;
    }
    let l = tape.value(x).rows();
    let d = tape.value(q).cols() as f64;
    let raw = tape.matmul_nt(q, k)?;
    let scores = tape.scale(raw, 1.0 / d.sqrt())?;
    let p = tape.masked_softmax_rows(scores, causal_mask(l))?;
    let mut h = tape.matmul(p, v)?;
    if residual {
        h = tape.add(h, x)?;
    }
    Ok((h, p, v))
}

/// Plain-value single-block attention over `x` with projections `w_q`, `w_k`,
/// `w_v` (no bias, no residual).
pub fn causal_attention(
    x: &NumArray,
    w_q: &NumArray,
    w_k: &NumArray,
    w_v: &NumArray,
) -> Result<AttentionOutput> {
    let mut tape = Tape::new();
    let xv = tape.constant(x.clone());
    let block = BlockVars {
        w_q: tape.constant(w_q.clone()),
        w_k: tape.constant(w_k.clone()),
        w_v: tape.constant(w_v.clone()),
        bias: None,
    };
    let (h, p, v) = attention_block_tape(&mut tape, xv, &block, false)?;
    Ok(AttentionOutput {
        h: tape.value(h).clone(),
        p: tape.value(p).clone(),
        v: tape.value(v).clone(),
    })
}
