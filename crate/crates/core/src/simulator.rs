//! Synthetic event generators: homogeneous Poisson, exponential-kernel
//! Hawkes (Ogata thinning), and a per-user drifting category preference
//! model whose active categories change between time windows.
//!
//! Times are in days; generated [`Event`]s carry integer-second timestamps.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};
use serde::{Deserialize, Serialize};

use crate::data::{Event, SECONDS_PER_DAY};
use crate::error::{Error, Result};

/// A time window with its active categories and their per-user daily rates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Regime {
    pub start: f64,
    pub end: f64,
    pub categories: Vec<usize>,
    pub rates: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Generator {
    Poisson { rate: f64 },
    Hawkes { mu: f64, alpha: f64, beta: f64 },
    Drift { regimes: Vec<Regime> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    pub horizon: f64,
    pub users: usize,
    pub items: usize,
    #[serde(default = "default_categories")]
    pub categories: usize,
    #[serde(default = "default_retries")]
    pub max_retries: usize,
    pub generator: Generator,
}

fn default_categories() -> usize {
    1
}

fn default_retries() -> usize {
    100
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.horizon > 0.0 && self.horizon.is_finite()) {
            return bad(format!("horizon must be positive, got {}", self.horizon));
        }
        if self.users == 0 || self.items == 0 {
            return bad("users and items must be positive".into());
        }
        if self.categories == 0 || self.categories > self.items {
            return bad(format!(
                "{} categories cannot partition {} items",
                self.categories, self.items
            ));
        }
        match &self.generator {
            Generator::Poisson { rate } => {
                if !(*rate > 0.0) {
                    return bad(format!("Poisson rate must be positive, got {rate}"));
                }
            }
            Generator::Hawkes { mu, alpha, beta } => {
                if !(*mu > 0.0 && *alpha >= 0.0 && *beta > 0.0) {
                    return bad("Hawkes needs mu > 0, alpha >= 0, beta > 0".into());
                }
                if alpha >= beta {
                    return Err(Error::Stationarity {
                        alpha: *alpha,
                        beta: *beta,
                    });
                }
            }
            Generator::Drift { regimes } => {
                if regimes.is_empty() {
                    return bad("drift generator needs at least one regime".into());
                }
                let mut edge = 0.0;
                for (r, regime) in regimes.iter().enumerate() {
                    if regime.start != edge || !(regime.end > regime.start) {
                        return bad(format!("regime {r} does not continue the partition at {edge}"));
                    }
                    edge = regime.end;
                    if regime.categories.len() != regime.rates.len() {
                        return bad(format!("regime {r}: categories and rates differ in length"));
                    }
                    if let Some(c) = regime.categories.iter().find(|&&c| c >= self.categories) {
                        return bad(format!("regime {r}: category {c} out of range"));
                    }
                    if regime.rates.iter().any(|&x| !(x >= 0.0 && x.is_finite())) {
                        return bad(format!("regime {r}: rates must be finite and non-negative"));
                    }
                }
                if edge != self.horizon {
                    return bad(format!("regimes end at {edge}, horizon is {}", self.horizon));
                }
            }
        }
        Ok(())
    }

    /// Category of an item: categories are contiguous, near-equal blocks of
    /// item indices.
    pub fn category_of(&self, item: usize) -> usize {
        category_of(item, self.items, self.categories)
    }
}

pub fn category_of(item: usize, items: usize, categories: usize) -> usize {
    item * categories / items
}

/// Item indices `[lo, hi)` of a category.
pub fn category_items(category: usize, items: usize, categories: usize) -> (usize, usize) {
    let lo = (category * items).div_ceil(categories);
    let hi = ((category + 1) * items).div_ceil(categories);
    (lo, hi)
}

fn poisson_times(rng: &mut ChaCha8Rng, rate: f64, start: f64, end: f64) -> Vec<f64> {
    let mut out = Vec::new();
    if rate <= 0.0 {
        return out;
    }
    let exp = Exp::new(rate).expect("positive rate");
    let mut t = start;
    loop {
        t += exp.sample(rng);
        if t > end {
            return out;
        }
        out.push(t);
    }
}

/// Event times of a homogeneous Poisson process on `(0, horizon]`.
pub fn simulate_poisson(rate: f64, horizon: f64, seed: u64) -> Result<Vec<f64>> {
    if !(rate > 0.0 && horizon > 0.0) {
        return Err(Error::Config(format!(
            "Poisson simulation needs rate > 0 and horizon > 0, got {rate}, {horizon}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(poisson_times(&mut rng, rate, 0.0, horizon))
}

fn hawkes_times(rng: &mut ChaCha8Rng, mu: f64, alpha: f64, beta: f64, horizon: f64) -> Vec<f64> {
    let mut out = Vec::new();
    let mut t = 0.0;
    // excitation carried by past events, valued at time `t`
    let mut excite = 0.0;
    loop {
        let bound = mu + excite;
        let w = Exp::new(bound).expect("positive bound").sample(rng);
        let candidate = t + w;
        if candidate > horizon {
            return out;
        }
        excite *= (-beta * w).exp();
        t = candidate;
        if rng.gen::<f64>() * bound <= mu + excite {
            out.push(t);
            excite += alpha;
        }
    }
}

/// Event times of a Hawkes process with intensity
/// `mu + Σ alpha·exp(−beta (t − t_i))` on `(0, horizon]`, by thinning.
pub fn simulate_hawkes(mu: f64, alpha: f64, beta: f64, horizon: f64, seed: u64) -> Result<Vec<f64>> {
    if !(mu > 0.0 && alpha >= 0.0 && beta > 0.0 && horizon > 0.0) {
        return Err(Error::Config(
            "Hawkes simulation needs mu > 0, alpha >= 0, beta > 0, horizon > 0".into(),
        ));
    }
    if alpha >= beta {
        return Err(Error::Stationarity { alpha, beta });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(hawkes_times(&mut rng, mu, alpha, beta, horizon))
}

/// Integer-second timestamp of a time in days, kept inside `(0, horizon]`.
pub fn to_timestamp(t_days: f64, horizon: f64) -> i64 {
    let hi = (horizon * SECONDS_PER_DAY).floor() as i64;
    ((t_days * SECONDS_PER_DAY).ceil() as i64).clamp(1, hi.max(1))
}

pub fn user_id(u: usize) -> String {
    format!("u{u}")
}

pub fn item_id(i: usize) -> String {
    format!("i{i}")
}

fn user_rng(seed: u64, user: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(user as u64);
    rng
}

/// One user's `(time, item)` stream.
fn user_stream(cfg: &SimConfig, rng: &mut ChaCha8Rng) -> Vec<(f64, usize)> {
    let uniform_items = |rng: &mut ChaCha8Rng, times: Vec<f64>| -> Vec<(f64, usize)> {
        times.into_iter().map(|t| (t, rng.gen_range(0..cfg.items))).collect()
    };
    match &cfg.generator {
        Generator::Poisson { rate } => {
            let times = poisson_times(rng, *rate, 0.0, cfg.horizon);
            uniform_items(rng, times)
        }
        Generator::Hawkes { mu, alpha, beta } => {
            let times = hawkes_times(rng, *mu, *alpha, *beta, cfg.horizon);
            uniform_items(rng, times)
        }
        Generator::Drift { regimes } => {
            let mut events = Vec::new();
            for regime in regimes {
                for (&c, &rate) in regime.categories.iter().zip(&regime.rates) {
                    let (lo, hi) = category_items(c, cfg.items, cfg.categories);
                    for t in poisson_times(rng, rate, regime.start, regime.end) {
                        events.push((t, rng.gen_range(lo..hi)));
                    }
                }
            }
            events.sort_by(|a, b| a.0.total_cmp(&b.0));
            events
        }
    }
}

/// Events for every user of the configuration. Users whose stream has fewer
/// than two events are redrawn, up to `max_retries` times each.
///
/// Each user draws from its own stream of the seeded generator, so users are
/// independent of one another and of the user count.
pub fn simulate_events(cfg: &SimConfig, seed: u64) -> Result<Vec<Event>> {
    cfg.validate()?;
    let mut out = Vec::new();
    for u in 0..cfg.users {
        let mut rng = user_rng(seed, u);
        let mut stream = user_stream(cfg, &mut rng);
        let mut attempts = 0;
        while stream.len() < 2 {
            if attempts == cfg.max_retries {
                return Err(Error::Simulation(format!(
                    "user {u} still has {} events after {attempts} redraws",
                    stream.len()
                )));
            }
            attempts += 1;
            stream = user_stream(cfg, &mut rng);
        }
        let uid = user_id(u);
        out.extend(
            stream
                .into_iter()
                .map(|(t, i)| Event::new(uid.clone(), item_id(i), to_timestamp(t, cfg.horizon))),
        );
    }
    Ok(out)
}

/// [`simulate_events`] for a drifting-preference configuration.
pub fn simulate_drifting_preferences(cfg: &SimConfig, seed: u64) -> Result<Vec<Event>> {
    if !matches!(cfg.generator, Generator::Drift { .. }) {
        return Err(Error::Config("expected a drift generator".into()));
    }
    simulate_events(cfg, seed)
}

/// `(item id, category id)` pairs for the configuration's catalog.
pub fn category_map(cfg: &SimConfig) -> Vec<(String, String)> {
    (0..cfg.items)
        .map(|i| (item_id(i), cfg.category_of(i).to_string()))
        .collect()
}

/// The shipped benchmark: 500 users, 30 items in 6 categories, and two
/// 50-day regimes over disjoint category sets.
pub fn drift_benchmark() -> SimConfig {
    SimConfig {
        horizon: 100.0,
        users: 500,
        items: 30,
        categories: 6,
        max_retries: 100,
        generator: Generator::Drift {
            regimes: vec![
                Regime {
                    start: 0.0,
                    end: 50.0,
                    categories: vec![0, 1, 2],
                    rates: vec![0.3, 0.2, 0.1],
                },
                Regime {
                    start: 50.0,
                    end: 100.0,
                    categories: vec![3, 4, 5],
                    rates: vec![0.01, 0.01, 0.01],
                },
            ],
        },
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn poisson_times_are_sorted_and_in_range() {
        let t = simulate_poisson(2.0, 10.0, 1).unwrap();
        assert!(t.windows(2).all(|w| w[0] < w[1]));
        assert!(t.iter().all(|&x| x > 0.0 && x <= 10.0));
        assert_eq!(t, simulate_poisson(2.0, 10.0, 1).unwrap());
    }

    #[test]
    fn domain_edges_rejected() {
        assert!(simulate_poisson(1.0, 0.0, 0).is_err());
        assert!(simulate_poisson(0.0, 1.0, 0).is_err());
        assert!(matches!(
            simulate_hawkes(1.0, 2.0, 2.0, 1.0, 0),
            Err(Error::Stationarity { .. })
        ));
    }

    #[test]
    fn hawkes_strictly_increasing() {
        let t = simulate_hawkes(0.5, 0.8, 1.2, 200.0, 4).unwrap();
        assert!(t.len() > 10);
        assert!(t.windows(2).all(|w| w[0] < w[1]));
        assert!(t.iter().all(|&x| x > 0.0 && x <= 200.0));
    }

    #[test]
    fn categories_are_contiguous_blocks() {
        for (items, cats) in [(30, 6), (7, 3), (5, 5), (4, 1)] {
            let mut next = 0;
            for c in 0..cats {
                let (lo, hi) = category_items(c, items, cats);
                assert_eq!(lo, next);
                assert!(hi > lo);
                for i in lo..hi {
                    assert_eq!(category_of(i, items, cats), c);
                }
                next = hi;
            }
            assert_eq!(next, items);
        }
    }

    #[test]
    fn timestamps_stay_inside_horizon() {
        assert_eq!(to_timestamp(0.0, 1.0), 1);
        assert_eq!(to_timestamp(1.0, 1.0), 86_400);
        assert_eq!(to_timestamp(0.5, 1.0), 43_200);
    }

    #[test]
    fn partition_is_validated() {
        let mut cfg = drift_benchmark();
        if let Generator::Drift { regimes } = &mut cfg.generator {
            regimes[1].start = 40.0;
        }
        assert!(cfg.validate().is_err());
        let mut cfg = drift_benchmark();
        cfg.horizon = 120.0;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn drift_users_are_independent_of_user_count() {
        let mut cfg = drift_benchmark();
        cfg.users = 3;
        let small = simulate_drifting_preferences(&cfg, 8).unwrap();
        cfg.users = 5;
        let big = simulate_drifting_preferences(&cfg, 8).unwrap();
        assert_eq!(&big[..small.len()], &small[..]);
    }

    #[test]
    fn retry_budget_exhaustion_is_reported() {
        let cfg = SimConfig {
            horizon: 1.0,
            users: 1,
            items: 2,
            categories: 1,
            max_retries: 3,
            generator: Generator::Poisson { rate: 1e-9 },
        };
        assert!(matches!(simulate_events(&cfg, 0), Err(Error::Simulation(_))));
    }

    #[test]
    fn config_round_trips_through_json() {
        let cfg = drift_benchmark();
        let text = serde_json::to_string(&cfg).unwrap();
        assert_eq!(serde_json::from_str::<SimConfig>(&text).unwrap(), cfg);
    }
}
