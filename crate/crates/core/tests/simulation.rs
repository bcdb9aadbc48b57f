use std::collections::BTreeSet;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use smattn_core::data::SECONDS_PER_DAY;
use smattn_core::simulator::{
    category_of, drift_benchmark, simulate_drifting_preferences, simulate_hawkes, simulate_poisson,
    Generator, SimConfig,
};
use smattn_core::train::sample_negatives;

#[test]
fn poisson_counts_and_gaps() {
    let (rate, horizon) = (0.5, 400.0);
    let runs: Vec<Vec<f64>> = (0..200).map(|s| simulate_poisson(rate, horizon, s).unwrap()).collect();
    let mean_count = runs.iter().map(|r| r.len() as f64).sum::<f64>() / 200.0;
    // Count variance is 200 per run, so the mean has SE 1.
    assert!((mean_count - rate * horizon).abs() < 4.0, "{mean_count}");
    let gaps: Vec<f64> = runs.iter().flat_map(|r| r.windows(2).map(|w| w[1] - w[0])).collect();
    let mean_gap = gaps.iter().sum::<f64>() / gaps.len() as f64;
    assert!((mean_gap - 1.0 / rate).abs() < 0.05, "{mean_gap}");
    assert!(runs.iter().all(|r| r.windows(2).all(|w| w[0] <= w[1]) && r.iter().all(|&t| t > 0.0 && t <= horizon)));
}

#[test]
fn hawkes_mean_count_matches_stationary_rate() {
    let (mu, alpha, beta, horizon) = (0.2, 0.5, 1.0, 500.0);
    let counts: Vec<f64> = (0..100)
        .map(|s| simulate_hawkes(mu, alpha, beta, horizon, s).unwrap().len() as f64)
        .collect();
    let mean = counts.iter().sum::<f64>() / 100.0;
    let expected = mu * horizon / (1.0 - alpha / beta);
    assert!((mean - expected).abs() / expected < 0.05, "{mean} vs {expected}");
}

#[test]
fn drift_event_frequencies_follow_regime_rates() {
    let cfg = SimConfig {
        users: 4000,
        ..drift_benchmark()
    };
    let Generator::Drift { regimes } = &cfg.generator else { unreachable!() };
    let events = simulate_drifting_preferences(&cfg, 21).unwrap();
    for regime in regimes {
        let mut counts = vec![0usize; cfg.categories];
        for e in &events {
            let t = e.timestamp as f64 / SECONDS_PER_DAY;
            if t > regime.start && t <= regime.end {
                counts[category_of(e.item_id[1..].parse().unwrap(), cfg.items, cfg.categories)] += 1;
            }
        }
        let window = regime.end - regime.start;
        let expected: f64 = regime.rates.iter().sum::<f64>() * window * cfg.users as f64;
        let observed: usize = regime.categories.iter().map(|&c| counts[c]).sum();
        assert!(
            (observed as f64 - expected).abs() / expected < 0.05,
            "{observed} vs {expected}"
        );
        let inactive: usize = (0..cfg.categories).filter(|c| !regime.categories.contains(c)).map(|c| counts[c]).sum();
        assert_eq!(inactive, 0);
        for (&c, &rate) in regime.categories.iter().zip(&regime.rates) {
            if rate * window * cfg.users as f64 > 10_000.0 {
                let exp = rate * window * cfg.users as f64;
                assert!((counts[c] as f64 - exp).abs() / exp < 0.05, "category {c}");
            }
        }
    }
}

#[test]
fn negatives_are_uniform_over_eligible_items() {
    let exclude: BTreeSet<usize> = [2, 5].into_iter().collect();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let draws = 16_000;
    let mut counts = [0usize; 10];
    for _ in 0..draws {
        let s = sample_negatives(10, &exclude, 1, &mut rng).unwrap();
        counts[s[0]] += 1;
    }
    assert_eq!(counts[2] + counts[5], 0);
    let expected = draws as f64 / 8.0;
    let chi2: f64 = (0..10)
        .filter(|i| !exclude.contains(i))
        .map(|i| (counts[i] as f64 - expected).powi(2) / expected)
        .sum();
    // 99.9th percentile of chi-square with 7 degrees of freedom.
    assert!(chi2 < 24.32, "chi-square {chi2}");
}

#[test]
fn forced_single_negative() {
    let exclude: BTreeSet<usize> = [0, 1, 3, 4].into_iter().collect();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    assert_eq!(sample_negatives(5, &exclude, 1, &mut rng).unwrap(), vec![2]);
    assert!(sample_negatives(5, &exclude, 2, &mut rng).is_err());
}
