//! Model configuration, parameter initialization and the tape-recorded
//! forward pieces shared by training, evaluation and export.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::attention::{attention_block_tape, embed_tape, positional_encoding, AttentionOutput, BlockVars, Parity};
use crate::error::{Error, Result};
use crate::numeric::{NumArray, ParamStore, Tape, Var};

/// How intensities enter the ranking score.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case", tag = "kind", content = "value")]
pub enum Modulation {
    /// Learned conditional intensities.
    #[default]
    Learned,
    /// Every intensity frozen to the same positive constant.
    Constant(f64),
    /// Plain attention scores, no intensity at all.
    Off,
}

/// Granularity of the intensity heads.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum HeadMode {
    #[default]
    ItemWise,
    GroupWise,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub n_items: usize,
    /// Item embedding width.
    pub d_e: usize,
    /// Positional encoding width (even).
    pub d_pe: usize,
    /// Attention output width.
    pub d: usize,
    /// Modulator feature width; 0 means "same as `d`".
    pub d_g: usize,
    pub blocks: usize,
    pub residual: bool,
    pub qkv_bias: bool,
    pub parity: Parity,
    pub heads: HeadMode,
    pub modulation: Modulation,
    /// Half-width of the uniform initializer for the modulator weights.
    pub modulator_init: f64,
    /// Most recent events kept per sequence; 0 keeps all.
    pub max_len: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            n_items: 0,
            d_e: 26,
            d_pe: 24,
            d: 50,
            d_g: 0,
            blocks: 1,
            residual: false,
            qkv_bias: false,
            parity: Parity::Position,
            heads: HeadMode::ItemWise,
            modulation: Modulation::Learned,
            modulator_init: 0.1,
            max_len: 50,
        }
    }
}

impl ModelConfig {
    pub fn d_in(&self) -> usize {
        self.d_e + self.d_pe
    }

    pub fn feature_width(&self) -> usize {
        if self.d_g == 0 {
            self.d
        } else {
            self.d_g
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_items == 0 {
            return Err(Error::Config("model needs at least one item".into()));
        }
        if self.d_pe % 2 != 0 {
            return Err(Error::Config(format!("d_pe = {} must be even", self.d_pe)));
        }
        if self.d == 0 || self.d_e == 0 || self.blocks == 0 {
            return Err(Error::Config("widths and block count must be positive".into()));
        }
        if self.residual && self.d != self.d_in() {
            return Err(Error::Config(format!(
                "residual connections need d ({}) = d_e + d_pe ({})",
                self.d,
                self.d_in()
            )));
        }
        if let Modulation::Constant(c) = self.modulation {
            if !(c > 0.0) || !c.is_finite() {
                return Err(Error::Config(format!("constant modulation {c} must be positive")));
            }
        }
        Ok(())
    }
}

pub mod names {
    pub const ITEM_EMB: &str = "item_emb";
    pub const OUT_EMB: &str = "out_emb";
    pub const MOD_W_G: &str = "mod.w_g";
    pub const MOD_B_G: &str = "mod.b_g";
    pub const MOD_W: &str = "mod.w";
    pub const MOD_MU: &str = "mod.mu";
    pub const MOD_LOG_PHI: &str = "mod.log_phi";

    pub fn block(b: usize, what: &str) -> String {
        format!("block{b}.{what}")
    }

    pub const MODULATOR: [&str; 5] = [MOD_W_G, MOD_B_G, MOD_W, MOD_MU, MOD_LOG_PHI];
}

/// Configuration, head assignment and learnable parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Model {
    pub config: ModelConfig,
    /// `head_of_item[i]` is the intensity head scoring item `i`.
    pub head_of_item: Vec<usize>,
    pub params: ParamStore,
}

/// Tape handles for every parameter of a [`Model`].
#[derive(Debug, Clone)]
pub struct Bound {
    pub item_emb: Var,
    pub blocks: Vec<BlockVars>,
    pub out_emb: Var,
    pub w_g: Var,
    pub b_g: Var,
    pub w: Var,
    pub mu: Var,
    /// `exp(log_phi)`, recorded once per tape.
    pub phi: Var,
}

/// Tape outputs of the sequence encoder.
#[derive(Debug, Clone, Copy)]
pub struct Encoded {
    pub h: Var,
    pub p: Var,
    pub v: Var,
}

fn uniform(rng: &mut ChaCha8Rng, rows: usize, cols: usize, half: f64) -> NumArray {
    let v = (0..rows * cols).map(|_| rng.gen_range(-half..half)).collect();
    NumArray::new(vec![rows, cols], v).expect("sized")
}

impl Model {
    /// Item-wise heads (`head_of_item = identity`) when `groups` is `None`.
    pub fn new(config: ModelConfig, groups: Option<&[usize]>, seed: u64) -> Result<Self> {
        config.validate()?;
        let head_of_item: Vec<usize> = match (config.heads, groups) {
            (HeadMode::ItemWise, _) => (0..config.n_items).collect(),
            (HeadMode::GroupWise, Some(g)) => {
                if g.len() != config.n_items {
                    return Err(Error::Config(format!(
                        "group map covers {} of {} items",
                        g.len(),
                        config.n_items
                    )));
                }
                g.to_vec()
            }
            (HeadMode::GroupWise, None) => {
                return Err(Error::Config("group-wise heads need a group map".into()))
            }
        };
        let heads = head_of_item.iter().max().map_or(0, |m| m + 1);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        let (n, d, dg) = (config.n_items, config.d, config.feature_width());

        params.insert(names::ITEM_EMB, uniform(&mut rng, n, config.d_e, 1.0 / (config.d_e as f64).sqrt()));
        let mut width = config.d_in();
        for b in 0..config.blocks {
            let half = (6.0 / (width + d) as f64).sqrt();
            for w in ["w_q", "w_k", "w_v"] {
                params.insert(names::block(b, w), uniform(&mut rng, width, d, half));
            }
            if config.qkv_bias {
                for w in ["b_q", "b_k", "b_v"] {
                    params.insert(names::block(b, w), NumArray::zeros(1, d));
                }
            }
            width = d;
        }
        params.insert(names::OUT_EMB, uniform(&mut rng, n, d, 1.0 / (d as f64).sqrt()));
        let a = config.modulator_init;
        params.insert(names::MOD_W_G, uniform(&mut rng, heads * dg, d, a));
        params.insert(names::MOD_B_G, uniform(&mut rng, 1, heads * dg, a));
        params.insert(names::MOD_W, uniform(&mut rng, 1, heads * dg, a));
        params.insert(names::MOD_MU, NumArray::zeros(1, heads));
        params.insert(names::MOD_LOG_PHI, NumArray::zeros(1, heads));

        Ok(Self {
            config,
            head_of_item,
            params,
        })
    }

    pub fn head_count(&self) -> usize {
        self.params.get(names::MOD_MU).map_or(0, NumArray::cols)
    }

    pub fn n_items(&self) -> usize {
        self.config.n_items
    }

    fn p(&self, name: &str) -> &NumArray {
        self.params
            .get(name)
            .unwrap_or_else(|| panic!("model parameter `{name}` missing"))
    }

    /// Registers every parameter on the tape.
    pub fn bind(&self, tape: &mut Tape) -> Result<Bound> {
        let item_emb = tape.param(names::ITEM_EMB, self.p(names::ITEM_EMB));
        let mut blocks = Vec::with_capacity(self.config.blocks);
        for b in 0..self.config.blocks {
            let w_q = tape.param(&names::block(b, "w_q"), self.p(&names::block(b, "w_q")));
            let w_k = tape.param(&names::block(b, "w_k"), self.p(&names::block(b, "w_k")));
            let w_v = tape.param(&names::block(b, "w_v"), self.p(&names::block(b, "w_v")));
            let bias = if self.config.qkv_bias {
                Some((
                    tape.param(&names::block(b, "b_q"), self.p(&names::block(b, "b_q"))),
                    tape.param(&names::block(b, "b_k"), self.p(&names::block(b, "b_k"))),
                    tape.param(&names::block(b, "b_v"), self.p(&names::block(b, "b_v"))),
                ))
            } else {
                None
            };
            blocks.push(BlockVars { w_q, w_k, w_v, bias });
        }
        let out_emb = tape.param(names::OUT_EMB, self.p(names::OUT_EMB));
        let w_g = tape.param(names::MOD_W_G, self.p(names::MOD_W_G));
        let b_g = tape.param(names::MOD_B_G, self.p(names::MOD_B_G));
        let w = tape.param(names::MOD_W, self.p(names::MOD_W));
        let mu = tape.param(names::MOD_MU, self.p(names::MOD_MU));
        let log_phi = tape.param(names::MOD_LOG_PHI, self.p(names::MOD_LOG_PHI));
        let phi = tape.exp(log_phi)?;
        Ok(Bound {
            item_emb,
            blocks,
            out_emb,
            w_g,
            b_g,
            w,
            mu,
            phi,
        })
    }

    /// Embedding, positional encoding and the attention stack.
    pub fn encode(&self, tape: &mut Tape, bound: &Bound, items: &[usize]) -> Result<Encoded> {
        let z = positional_encoding(items.len(), self.config.d_pe, self.config.parity)?;
        let mut x = embed_tape(tape, bound.item_emb, items, &z)?;
        let mut last = None;
        for block in &bound.blocks {
            let (h, p, v) = attention_block_tape(tape, x, block, self.config.residual)?;
            last = Some((p, v));
            x = h;
        }
        let (p, v) = last.expect("at least one block");
        Ok(Encoded { h: x, p, v })
    }

    /// Intensities of every head at `M` query points.
    ///
    /// `anchors` is `M x d` (the history representation each point conditions
    /// on) and `elapsed[m]` the time since that anchor. Returns `None` when
    /// modulation is off.
    pub fn intensities(
        &self,
        tape: &mut Tape,
        bound: &Bound,
        anchors: Var,
        elapsed: &[f64],
    ) -> Result<Option<Var>> {
        let m = tape.value(anchors).rows();
        if elapsed.len() != m {
            return Err(Error::Dimension(format!(
                "{} elapsed times for {} anchors",
                elapsed.len(),
                m
            )));
        }
        if let Some(&e) = elapsed.iter().find(|&&e| e < 0.0) {
            return Err(Error::TemporalOrder { t: e, anchor: 0.0 });
        }
        match self.config.modulation {
            Modulation::Off => Ok(None),
            Modulation::Constant(c) => Ok(Some(tape.constant(NumArray::filled(m, self.head_count(), c)))),
            Modulation::Learned => {
                let endo = tape.matmul_nt(anchors, bound.w_g)?;
                let dt = tape.constant(NumArray::col_vector(elapsed.to_vec()));
                let pre = tape.add_outer(endo, dt, bound.b_g)?;
                let g = tape.tanh(pre)?;
                let a = tape.block_dot(g, bound.w, self.config.feature_width())?;
                let a = tape.add_row(a, bound.mu)?;
                Ok(Some(tape.scaled_softplus(a, bound.phi)?))
            }
        }
    }

    /// `[0; H]`: row 0 is the empty-history anchor, row `j` is `h(t_j)`
    /// (1-based event numbering).
    pub fn anchor_table(&self, tape: &mut Tape, h: Var) -> Result<Var> {
        let zero = tape.constant(NumArray::zeros(1, self.config.d));
        tape.concat_rows(zero, h)
    }

    /// Plain values of the encoder for one item sequence.
    pub fn attention(&self, items: &[usize]) -> Result<AttentionOutput> {
        let mut tape = Tape::new();
        let bound = self.bind(&mut tape)?;
        let enc = self.encode(&mut tape, &bound, items)?;
        Ok(AttentionOutput {
            h: tape.value(enc.h).clone(),
            p: tape.value(enc.p).clone(),
            v: tape.value(enc.v).clone(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg() -> ModelConfig {
        ModelConfig {
            n_items: 6,
            d_e: 4,
            d_pe: 4,
            d: 5,
            ..ModelConfig::default()
        }
    }

    #[test]
    fn same_seed_same_params() {
        let a = Model::new(cfg(), None, 3).unwrap();
        let b = Model::new(cfg(), None, 3).unwrap();
        assert_eq!(a, b);
        let c = Model::new(cfg(), None, 4).unwrap();
        assert_ne!(a.params, c.params);
    }

    #[test]
    fn modulator_initialization() {
        let m = Model::new(cfg(), None, 1).unwrap();
        assert_eq!(m.head_count(), 6);
        assert!(m.params.get(names::MOD_MU).unwrap().values().iter().all(|&v| v == 0.0));
        assert!(m.params.get(names::MOD_LOG_PHI).unwrap().values().iter().all(|&v| v == 0.0));
        for name in [names::MOD_W_G, names::MOD_B_G, names::MOD_W] {
            assert!(m.params.get(name).unwrap().values().iter().all(|v| v.abs() <= 0.1));
        }
        assert_eq!(m.params.get(names::MOD_W_G).unwrap().shape(), &[6 * 5, 5]);
    }

    #[test]
    fn group_heads_need_a_map() {
        let c = ModelConfig {
            heads: HeadMode::GroupWise,
            ..cfg()
        };
        assert!(Model::new(c.clone(), None, 0).is_err());
        let m = Model::new(c, Some(&[0, 0, 1, 1, 2, 2]), 0).unwrap();
        assert_eq!(m.head_count(), 3);
    }

    #[test]
    fn residual_needs_matching_widths() {
        let c = ModelConfig {
            residual: true,
            ..cfg()
        };
        assert!(Model::new(c, None, 0).is_err());
        let c = ModelConfig {
            residual: true,
            d: 8,
            blocks: 2,
            qkv_bias: true,
            ..cfg()
        };
        let m = Model::new(c, None, 0).unwrap();
        let out = m.attention(&[0, 3, 2]).unwrap();
        assert_eq!(out.h.shape(), &[3, 8]);
    }

    #[test]
    fn constant_modulation_must_be_positive() {
        let c = ModelConfig {
            modulation: Modulation::Constant(0.0),
            ..cfg()
        };
        assert!(Model::new(c, None, 0).is_err());
    }
}
