//! Event logs, per-user sequences, time normalization and the
//! held-out-user split.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::io::{BufRead, Write};
use std::str::FromStr;

use log::warn;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const SECONDS_PER_DAY: f64 = 86_400.0;

/// One raw interaction.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Event {
    pub user_id: String,
    pub item_id: String,
    /// Seconds since the epoch.
    pub timestamp: i64,
}

impl Event {
    pub fn new(user_id: impl Into<String>, item_id: impl Into<String>, timestamp: i64) -> Self {
        Self {
            user_id: user_id.into(),
            item_id: item_id.into(),
            timestamp,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EventFormat {
    Csv,
    Jsonl,
}

impl FromStr for EventFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "csv" => Ok(EventFormat::Csv),
            "jsonl" => Ok(EventFormat::Jsonl),
            other => Err(Error::Config(format!("unknown event format `{other}`"))),
        }
    }
}

#[derive(Deserialize, Serialize)]
struct JsonEvent {
    user: String,
    item: String,
    ts: i64,
}

/// Reads every event from `input`, preserving line order.
///
/// CSV rows are `user_id,item_id,timestamp`; a first row whose third field is
/// not an integer is treated as a header. JSONL rows are objects with keys
/// `user`, `item` and `ts`. Blank lines are skipped.
pub fn parse_events<R: BufRead>(input: R, format: EventFormat) -> Result<Vec<Event>> {
    match format {
        EventFormat::Csv => parse_csv(input),
        EventFormat::Jsonl => parse_jsonl(input),
    }
}

fn parse_csv<R: BufRead>(input: R) -> Result<Vec<Event>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_reader(input);
    let mut events = Vec::new();
    for (idx, record) in reader.records().enumerate() {
        let line = idx + 1;
        let record = record.map_err(|e| Error::Parse {
            line: e.position().map_or(line, |p| p.line() as usize),
            message: e.to_string(),
        })?;
        if record.len() == 1 && record[0].is_empty() {
            continue;
        }
        if record.len() != 3 {
            return Err(Error::Parse {
                line,
                message: format!("expected 3 fields, found {}", record.len()),
            });
        }
        let ts = match record[2].parse::<i64>() {
            Ok(ts) => ts,
            Err(_) if idx == 0 => continue,
            Err(e) => {
                return Err(Error::Parse {
                    line,
                    message: format!("timestamp `{}`: {e}", &record[2]),
                })
            }
        };
        if ts < 0 {
            return Err(Error::Parse {
                line,
                message: format!("negative timestamp {ts}"),
            });
        }
        events.push(Event::new(&record[0], &record[1], ts));
    }
    Ok(events)
}

fn parse_jsonl<R: BufRead>(input: R) -> Result<Vec<Event>> {
    let mut events = Vec::new();
    for (idx, line) in input.lines().enumerate() {
        let line_no = idx + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let ev: JsonEvent = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: line_no,
            message: e.to_string(),
        })?;
        if ev.ts < 0 {
            return Err(Error::Parse {
                line: line_no,
                message: format!("negative timestamp {}", ev.ts),
            });
        }
        events.push(Event::new(ev.user, ev.item, ev.ts));
    }
    Ok(events)
}

/// Writes events in the given format (CSV with a header row).
pub fn write_events<W: Write>(out: W, events: &[Event], format: EventFormat) -> Result<()> {
    match format {
        EventFormat::Csv => {
            let mut w = csv::Writer::from_writer(out);
            w.write_record(["user_id", "item_id", "timestamp"])
                .map_err(|e| Error::Io(e.to_string()))?;
            for e in events {
                w.write_record([&e.user_id, &e.item_id, &e.timestamp.to_string()])
                    .map_err(|e| Error::Io(e.to_string()))?;
            }
            w.flush()?;
        }
        EventFormat::Jsonl => {
            let mut out = out;
            for e in events {
                let line = serde_json::to_string(&JsonEvent {
                    user: e.user_id.clone(),
                    item: e.item_id.clone(),
                    ts: e.timestamp,
                })
                .map_err(|e| Error::Io(e.to_string()))?;
                writeln!(out, "{line}")?;
            }
        }
    }
    Ok(())
}

/// Bijection between item identifiers and dense indices, with an optional
/// item-to-group map.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "VocabularyRepr", into = "VocabularyRepr")]
pub struct Vocabulary {
    items: Vec<String>,
    index: HashMap<String, usize>,
    groups: Option<Vec<usize>>,
    group_count: usize,
}

impl Vocabulary {
    pub fn new(items: Vec<String>) -> Result<Self> {
        let mut index = HashMap::with_capacity(items.len());
        for (i, id) in items.iter().enumerate() {
            if index.insert(id.clone(), i).is_some() {
                return Err(Error::Vocabulary(format!("duplicate item id `{id}`")));
            }
        }
        Ok(Self {
            items,
            index,
            groups: None,
            group_count: 0,
        })
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    pub fn id_of(&self, index: usize) -> Option<&str> {
        self.items.get(index).map(String::as_str)
    }

    pub fn item_ids(&self) -> &[String] {
        &self.items
    }

    /// Attaches a dense group map; `groups[i]` is the group of item `i`.
    pub fn with_group_indices(mut self, groups: Vec<usize>) -> Result<Self> {
        if groups.len() != self.items.len() {
            return Err(Error::Vocabulary(format!(
                "group map covers {} of {} items",
                groups.len(),
                self.items.len()
            )));
        }
        let count = groups.iter().max().map_or(0, |m| m + 1);
        let used: HashSet<usize> = groups.iter().copied().collect();
        if used.len() != count {
            return Err(Error::Vocabulary("group indices are not dense".into()));
        }
        self.groups = Some(groups);
        self.group_count = count;
        Ok(self)
    }

    /// Attaches a group map given as `(item_id, group_id)` pairs. Group
    /// identifiers are ordered numerically when they are all integers and
    /// lexically otherwise, then numbered densely from zero.
    pub fn with_group_map(self, pairs: &[(String, String)]) -> Result<Self> {
        let lookup: HashMap<&str, &str> = pairs
            .iter()
            .map(|(i, g)| (i.as_str(), g.as_str()))
            .collect();
        let mut labels: Vec<&str> = self
            .items
            .iter()
            .filter_map(|id| lookup.get(id.as_str()).copied())
            .collect::<HashSet<_>>()
            .into_iter()
            .collect();
        if labels.iter().all(|g| g.parse::<i64>().is_ok()) {
            labels.sort_by_key(|g| g.parse::<i64>().unwrap_or_default());
        } else {
            labels.sort_unstable();
        }
        let dense: HashMap<&str, usize> = labels.iter().enumerate().map(|(i, g)| (*g, i)).collect();
        let mut groups = Vec::with_capacity(self.items.len());
        for id in &self.items {
            let g = lookup
                .get(id.as_str())
                .ok_or_else(|| Error::Vocabulary(format!("item `{id}` missing from group map")))?;
            groups.push(dense[g]);
        }
        self.with_group_indices(groups)
    }

    pub fn group_of(&self, item: usize) -> Option<usize> {
        self.groups.as_ref().map(|g| g[item])
    }

    pub fn groups(&self) -> Option<&[usize]> {
        self.groups.as_deref()
    }

    pub fn group_count(&self) -> usize {
        self.group_count
    }
}

#[derive(Serialize, Deserialize)]
struct VocabularyRepr {
    items: Vec<String>,
    groups: Option<Vec<usize>>,
}

impl TryFrom<VocabularyRepr> for Vocabulary {
    type Error = Error;

    fn try_from(r: VocabularyRepr) -> Result<Self> {
        let v = Vocabulary::new(r.items)?;
        match r.groups {
            Some(g) => v.with_group_indices(g),
            None => Ok(v),
        }
    }
}

impl From<Vocabulary> for VocabularyRepr {
    fn from(v: Vocabulary) -> Self {
        Self {
            items: v.items,
            groups: v.groups,
        }
    }
}

/// Reads a CSV group map of `item_id,group_id` rows (header optional when the
/// first row is literally `item_id,group_id`).
pub fn parse_group_map<R: BufRead>(input: R) -> Result<Vec<(String, String)>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_reader(input);
    let mut pairs = Vec::new();
    for (idx, record) in reader.records().enumerate() {
        let record = record.map_err(|e| Error::Parse {
            line: idx + 1,
            message: e.to_string(),
        })?;
        if record.len() != 2 {
            return Err(Error::Parse {
                line: idx + 1,
                message: format!("expected 2 fields, found {}", record.len()),
            });
        }
        if idx == 0 && &record[0] == "item_id" && &record[1] == "group_id" {
            continue;
        }
        pairs.push((record[0].to_string(), record[1].to_string()));
    }
    Ok(pairs)
}

/// One user's time-ordered interactions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventSequence {
    pub user_id: String,
    /// Event times: raw seconds straight out of [`build_sequences`], days
    /// since the first event after [`normalize_time`].
    pub times: Vec<f64>,
    pub items: Vec<usize>,
    /// Raw timestamp of the first event.
    pub origin_ts: i64,
}

impl EventSequence {
    pub fn new(user_id: impl Into<String>, times: Vec<f64>, items: Vec<usize>) -> Result<Self> {
        if times.len() != items.len() {
            return Err(Error::Dimension(format!(
                "{} times for {} items",
                times.len(),
                items.len()
            )));
        }
        if times.is_empty() {
            return Err(Error::EmptyDataset("a sequence needs at least one event".into()));
        }
        if times.windows(2).any(|w| w[1] < w[0]) {
            return Err(Error::Config("sequence times must be nondecreasing".into()));
        }
        Ok(Self {
            user_id: user_id.into(),
            times,
            items,
            origin_ts: 0,
        })
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    /// The first `len` events.
    pub fn prefix(&self, len: usize) -> EventSequence {
        EventSequence {
            user_id: self.user_id.clone(),
            times: self.times[..len].to_vec(),
            items: self.items[..len].to_vec(),
            origin_ts: self.origin_ts,
        }
    }

    /// The last `len` events (all of them when `len` is 0 or too large).
    pub fn suffix(&self, len: usize) -> EventSequence {
        let start = if len == 0 { 0 } else { self.len().saturating_sub(len) };
        EventSequence {
            user_id: self.user_id.clone(),
            times: self.times[start..].to_vec(),
            items: self.items[start..].to_vec(),
            origin_ts: self.origin_ts,
        }
    }

    pub fn last_time(&self) -> f64 {
        *self.times.last().expect("nonempty sequence")
    }

    /// Raw timestamp (seconds) of a normalized time.
    pub fn absolute_seconds(&self, t_days: f64) -> f64 {
        self.origin_ts as f64 + t_days * SECONDS_PER_DAY
    }
}

/// Filters rare users and items to a joint fixed point, then groups the
/// surviving events per user sorted by `(timestamp, file order)`.
///
/// Times in the returned sequences are raw seconds; see [`normalize_time`].
pub fn build_sequences(
    events: &[Event],
    min_user_events: usize,
    min_item_count: usize,
) -> Result<(Vocabulary, Vec<EventSequence>)> {
    if min_user_events < 1 || min_item_count < 1 {
        return Err(Error::Config("filter thresholds must be at least 1".into()));
    }
    let mut alive = vec![true; events.len()];
    loop {
        let mut user_counts: HashMap<&str, usize> = HashMap::new();
        let mut item_counts: HashMap<&str, usize> = HashMap::new();
        for (e, _) in events.iter().zip(&alive).filter(|(_, a)| **a) {
            *user_counts.entry(&e.user_id).or_default() += 1;
            *item_counts.entry(&e.item_id).or_default() += 1;
        }
        let mut changed = false;
        for (e, a) in events.iter().zip(alive.iter_mut()) {
            if *a
                && (user_counts[e.user_id.as_str()] < min_user_events
                    || item_counts[e.item_id.as_str()] < min_item_count)
            {
                *a = false;
                changed = true;
            }
        }
        if !changed {
            break;
        }
    }

    let kept: Vec<(usize, &Event)> = events
        .iter()
        .enumerate()
        .filter(|(i, _)| alive[*i])
        .collect();
    if kept.is_empty() {
        return Err(Error::EmptyDataset(
            "no events survive the user/item filters".into(),
        ));
    }

    let mut item_ids: Vec<String> = Vec::new();
    let mut item_index: HashMap<&str, usize> = HashMap::new();
    let mut user_order: Vec<&str> = Vec::new();
    let mut per_user: BTreeMap<usize, Vec<(i64, usize, usize)>> = BTreeMap::new();
    let mut user_slot: HashMap<&str, usize> = HashMap::new();
    for &(pos, e) in &kept {
        let item = *item_index.entry(&e.item_id).or_insert_with(|| {
            item_ids.push(e.item_id.clone());
            item_ids.len() - 1
        });
        let slot = *user_slot.entry(&e.user_id).or_insert_with(|| {
            user_order.push(&e.user_id);
            user_order.len() - 1
        });
        per_user.entry(slot).or_default().push((e.timestamp, pos, item));
    }

    let vocab = Vocabulary::new(item_ids)?;
    let mut sequences = Vec::with_capacity(per_user.len());
    for (slot, mut rows) in per_user {
        rows.sort_by_key(|&(ts, pos, _)| (ts, pos));
        let origin_ts = rows[0].0;
        let mut seq = EventSequence::new(
            user_order[slot],
            rows.iter().map(|r| r.0 as f64).collect(),
            rows.iter().map(|r| r.2).collect(),
        )?;
        seq.origin_ts = origin_ts;
        sequences.push(seq);
    }
    Ok((vocab, sequences))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum TimeScheme {
    #[default]
    DaysFromFirst,
}

/// Rescales raw-second times to days elapsed since the first event.
pub fn normalize_time(seq: &EventSequence, scheme: TimeScheme) -> EventSequence {
    match scheme {
        TimeScheme::DaysFromFirst => {
            let first = seq.times[0];
            EventSequence {
                user_id: seq.user_id.clone(),
                times: seq
                    .times
                    .iter()
                    .map(|t| (t - first) / SECONDS_PER_DAY)
                    .collect(),
                items: seq.items.clone(),
                origin_ts: first as i64,
            }
        }
    }
}

/// A held-out final event together with the prefix that precedes it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Holdout {
    pub user: usize,
    pub context: EventSequence,
    pub target_item: usize,
    pub target_time: f64,
}

impl Holdout {
    pub fn from_sequence(user: usize, seq: &EventSequence) -> Option<Self> {
        let l = seq.len();
        if l < 2 {
            return None;
        }
        Some(Self {
            user,
            context: seq.prefix(l - 1),
            target_item: seq.items[l - 1],
            target_time: seq.times[l - 1],
        })
    }
}

/// Partition of users into training, validation and test sets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitPlan {
    pub train: Vec<usize>,
    pub validation: Vec<usize>,
    pub test: Vec<usize>,
    pub validation_holdouts: Vec<Holdout>,
    pub test_holdouts: Vec<Holdout>,
    pub seed: u64,
}

/// Shuffles users with `seed` and allocates `floor(n·r/Σr)` to validation and
/// test, the remainder to training. Held-out users keep their last event as
/// the target; single-event users are left out of the metric sets.
pub fn split_strong_generalization(
    users: &[EventSequence],
    ratios: (u32, u32, u32),
    seed: u64,
) -> Result<SplitPlan> {
    let n = users.len();
    if n < 3 {
        return Err(Error::Config(format!("need at least 3 users to split, got {n}")));
    }
    let (rt, rv, rs) = ratios;
    if rt == 0 || rv == 0 || rs == 0 {
        return Err(Error::Config("split ratios must be positive".into()));
    }
    let total = (rt + rv + rs) as usize;
    let n_val = n * rv as usize / total;
    let n_test = n * rs as usize / total;
    let n_train = n - n_val - n_test;

    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);

    let mut train = order[..n_train].to_vec();
    let mut validation = order[n_train..n_train + n_val].to_vec();
    let mut test = order[n_train + n_val..].to_vec();
    train.sort_unstable();
    validation.sort_unstable();
    test.sort_unstable();

    let holdouts = |set: &[usize]| -> Vec<Holdout> {
        set.iter()
            .filter_map(|&u| {
                let h = Holdout::from_sequence(u, &users[u]);
                if h.is_none() {
                    warn!(
                        "user `{}` has a single event; excluded from holdout metrics",
                        users[u].user_id
                    );
                }
                h
            })
            .collect()
    };
    Ok(SplitPlan {
        validation_holdouts: holdouts(&validation),
        test_holdouts: holdouts(&test),
        train,
        validation,
        test,
        seed,
    })
}
