//! From configuration to model-ready sequences and a user split.

use std::fs::File;
use std::io::BufReader;

use log::info;
use smattn_core::data::{
    build_sequences, normalize_time, parse_events, parse_group_map, split_strong_generalization, Event,
    EventSequence, SplitPlan, TimeScheme, Vocabulary,
};
use smattn_core::model::ModelConfig;
use smattn_core::simulator::{category_map, simulate_events};
use smattn_core::{Error, Result};

use crate::config::RunConfig;

pub struct Prepared {
    pub vocab: Vocabulary,
    /// Times in days since each user's first event.
    pub sequences: Vec<EventSequence>,
    pub split: SplitPlan,
    pub events: usize,
}

impl Prepared {
    pub fn groups(&self) -> Option<&[usize]> {
        self.vocab.groups()
    }

    pub fn model_config(&self, base: &ModelConfig) -> ModelConfig {
        ModelConfig {
            n_items: self.vocab.len(),
            ..base.clone()
        }
    }

    pub fn user_index(&self, user_id: &str) -> Result<usize> {
        self.sequences
            .iter()
            .position(|s| s.user_id == user_id)
            .ok_or_else(|| Error::Config(format!("unknown user `{user_id}`")))
    }
}

/// Raw events and an optional `(item, group)` map.
pub fn load_events(cfg: &RunConfig) -> Result<(Vec<Event>, Option<Vec<(String, String)>>)> {
    let groups_file = match &cfg.data.groups {
        Some(p) => {
            let f = File::open(p).map_err(|e| Error::Io(format!("{}: {e}", p.display())))?;
            Some(parse_group_map(BufReader::new(f))?)
        }
        None => None,
    };
    if let Some(path) = &cfg.data.events {
        let f = File::open(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
        let events = parse_events(BufReader::new(f), cfg.data.format)?;
        return Ok((events, groups_file));
    }
    let sim = cfg.simulate.as_ref().ok_or_else(|| {
        Error::Config("no data: set `data.events` or provide a `simulate` section".into())
    })?;
    let events = simulate_events(&sim.config, sim.seed)?;
    let groups = groups_file.or_else(|| sim.category_groups.then(|| category_map(&sim.config)));
    Ok((events, groups))
}

pub fn prepare(cfg: &RunConfig) -> Result<Prepared> {
    let (events, groups) = load_events(cfg)?;
    let (mut vocab, raw) = build_sequences(&events, cfg.data.min_user_events, cfg.data.min_item_count)?;
    if let Some(pairs) = groups {
        vocab = vocab.with_group_map(&pairs)?;
    }
    let sequences: Vec<EventSequence> = raw
        .iter()
        .map(|s| normalize_time(s, TimeScheme::DaysFromFirst))
        .collect();
    let [a, b, c] = cfg.data.split;
    let split = split_strong_generalization(&sequences, (a, b, c), cfg.data.split_seed)?;
    info!(
        "{} events, {} users, {} items; split {}/{}/{}",
        events.len(),
        sequences.len(),
        vocab.len(),
        split.train.len(),
        split.validation.len(),
        split.test.len()
    );
    Ok(Prepared {
        vocab,
        sequences,
        split,
        events: events.len(),
    })
}
