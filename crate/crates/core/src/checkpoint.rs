//! Portable JSON checkpoints: model configuration, head map and every
//! parameter as a shape plus flat values, with the training config and seed
//! echoed alongside.
//!
//! Floats are written in shortest round-trip form, so a save/load cycle
//! reproduces every parameter bit for bit.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::Vocabulary;
use crate::error::{Error, Result};
use crate::model::Model;

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format_version: u32,
    pub model: Model,
    pub seed: u64,
    /// Item identifiers behind the model's item indices.
    #[serde(default)]
    pub vocabulary: Option<Vocabulary>,
    /// Free-form configuration echo.
    #[serde(default)]
    pub config: serde_json::Value,
}

impl Checkpoint {
    pub fn new(model: Model, seed: u64, config: serde_json::Value) -> Self {
        Self {
            format_version: FORMAT_VERSION,
            model,
            seed,
            vocabulary: None,
            config,
        }
    }

    pub fn to_writer<W: Write>(&self, out: W) -> Result<()> {
        serde_json::to_writer(out, self).map_err(|e| Error::Io(e.to_string()))
    }

    pub fn from_reader<R: Read>(input: R) -> Result<Self> {
        let ck: Checkpoint =
            serde_json::from_reader(input).map_err(|e| Error::Config(format!("checkpoint: {e}")))?;
        if ck.format_version != FORMAT_VERSION {
            return Err(Error::Config(format!(
                "checkpoint format {} is not supported",
                ck.format_version
            )));
        }
        ck.model.config.validate()?;
        if let Some(v) = &ck.vocabulary {
            if v.len() != ck.model.n_items() {
                return Err(Error::Config(format!(
                    "checkpoint vocabulary has {} items, model {}",
                    v.len(),
                    ck.model.n_items()
                )));
            }
        }
        for (name, value) in ck.model.params.iter() {
            if value.shape().iter().product::<usize>() != value.len() {
                return Err(Error::Config(format!("parameter `{name}` has inconsistent shape")));
            }
        }
        if ck.model.head_of_item.len() != ck.model.n_items() {
            return Err(Error::Config(format!(
                "head map covers {} of {} items",
                ck.model.head_of_item.len(),
                ck.model.n_items()
            )));
        }
        // Shapes must match a freshly built model of the same configuration.
        let reference = Model::new(ck.model.config.clone(), Some(&ck.model.head_of_item), 0)?;
        if reference.params.len() != ck.model.params.len() {
            return Err(Error::Config("checkpoint parameter set does not match its config".into()));
        }
        for (name, want) in reference.params.iter() {
            match ck.model.params.get(name) {
                Some(got) if got.shape() == want.shape() => {}
                Some(got) => {
                    return Err(Error::Config(format!(
                        "parameter `{name}` has shape {:?}, config implies {:?}",
                        got.shape(),
                        want.shape()
                    )))
                }
                None => return Err(Error::Config(format!("parameter `{name}` missing"))),
            }
        }
        Ok(ck)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        self.to_writer(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_reader(BufReader::new(File::open(path)?))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelConfig;

    #[test]
    fn round_trip_is_bit_exact() {
        let cfg = ModelConfig {
            n_items: 7,
            d_e: 4,
            d_pe: 4,
            d: 6,
            ..ModelConfig::default()
        };
        let model = Model::new(cfg, None, 11).unwrap();
        let ck = Checkpoint::new(model, 11, serde_json::json!({"lr": 0.001}));
        let mut buf = Vec::new();
        ck.to_writer(&mut buf).unwrap();
        let back = Checkpoint::from_reader(&buf[..]).unwrap();
        for ((n1, a), (n2, b)) in ck.model.params.iter().zip(back.model.params.iter()) {
            assert_eq!(n1, n2);
            assert_eq!(a.shape(), b.shape());
            for (x, y) in a.values().iter().zip(b.values()) {
                assert_eq!(x.to_bits(), y.to_bits());
            }
        }
        assert_eq!(back, ck);
    }

    #[test]
    fn unknown_version_rejected() {
        let model = Model::new(
            ModelConfig {
                n_items: 2,
                d_e: 2,
                d_pe: 2,
                d: 2,
                ..ModelConfig::default()
            },
            None,
            0,
        )
        .unwrap();
        let mut ck = Checkpoint::new(model, 0, serde_json::Value::Null);
        ck.format_version = 99;
        let mut buf = Vec::new();
        ck.to_writer(&mut buf).unwrap();
        assert!(Checkpoint::from_reader(&buf[..]).is_err());
    }
}
