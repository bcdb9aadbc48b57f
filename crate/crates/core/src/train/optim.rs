use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::{Gradients, NumArray, ParamStore};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    Sgd,
    #[default]
    Adam,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerConfig {
    pub kind: OptimizerKind,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Parameters left untouched by updates.
    pub freeze: Vec<String>,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            kind: OptimizerKind::Adam,
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            freeze: Vec::new(),
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("learning rate {} must be positive", self.lr)));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || !(self.eps > 0.0) {
            return Err(Error::Config("Adam needs beta1, beta2 in [0, 1) and eps > 0".into()));
        }
        Ok(())
    }
}

/// Stateful first-order optimizer.
#[derive(Debug, Clone)]
pub struct Optimizer {
    cfg: OptimizerConfig,
    frozen: BTreeSet<String>,
    step: i32,
    moments: BTreeMap<String, (NumArray, NumArray)>,
}

impl Optimizer {
    pub fn new(cfg: OptimizerConfig) -> Result<Self> {
        cfg.validate()?;
        let frozen = cfg.freeze.iter().cloned().collect();
        Ok(Self {
            cfg,
            frozen,
            step: 0,
            moments: BTreeMap::new(),
        })
    }

    pub fn step(&mut self, params: &mut ParamStore, grads: &Gradients) {
        self.step += 1;
        let lr = self.cfg.lr;
        for (name, p) in params.iter_mut() {
            if self.frozen.contains(name) {
                continue;
            }
            let Some(g) = grads.get(name) else { continue };
            match self.cfg.kind {
                OptimizerKind::Sgd => {
                    for (x, d) in p.values_mut().iter_mut().zip(g.values()) {
                        *x -= lr * d;
                    }
                }
                OptimizerKind::Adam => {
                    let (b1, b2, eps) = (self.cfg.beta1, self.cfg.beta2, self.cfg.eps);
                    let (m, v) = self.moments.entry(name.clone()).or_insert_with(|| {
                        let zero = NumArray::new(g.shape().to_vec(), vec![0.0; g.len()]).expect("sized");
                        (zero.clone(), zero)
                    });
                    let c1 = 1.0 - b1.powi(self.step);
                    let c2 = 1.0 - b2.powi(self.step);
                    for (((x, d), mi), vi) in p
                        .values_mut()
                        .iter_mut()
                        .zip(g.values())
                        .zip(m.values_mut().iter_mut())
                        .zip(v.values_mut().iter_mut())
                    {
                        *mi = b1 * *mi + (1.0 - b1) * d;
                        *vi = b2 * *vi + (1.0 - b2) * d * d;
                        *x -= lr * (*mi / c1) / ((*vi / c2).sqrt() + eps);
                    }
                }
            }
        }
    }
}
