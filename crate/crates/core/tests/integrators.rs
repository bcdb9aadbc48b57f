use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use smattn_core::data::EventSequence;
use smattn_core::model::{Modulation, Model, ModelConfig};
use smattn_core::regularizer::{
    integrate, integrate_mc, integrate_trapezoid, monte_carlo_rule, trapezoid_rule,
};
use smattn_core::sm_layer::head_intensity;

fn random_times(rng: &mut ChaCha8Rng, len: usize, span: f64) -> Vec<f64> {
    let mut t: Vec<f64> = (0..len).map(|_| rng.gen_range(0.0..span)).collect();
    t.sort_by(f64::total_cmp);
    t
}

fn sequence(rng: &mut ChaCha8Rng, n: usize, len: usize) -> EventSequence {
    let times = random_times(rng, len, 20.0);
    let items = (0..len).map(|_| rng.gen_range(0..n)).collect();
    EventSequence::new("u", times, items).unwrap()
}

/// Composite Simpson rule with an even number of intervals.
fn simpson(f: impl Fn(f64) -> f64, lo: f64, hi: f64, intervals: usize) -> f64 {
    let h = (hi - lo) / intervals as f64;
    let inner: f64 = (1..intervals)
        .map(|i| if i % 2 == 1 { 4.0 } else { 2.0 } * f(lo + h * i as f64))
        .sum();
    (f(lo) + f(hi) + inner) * h / 3.0
}

#[test]
fn trapezoid_is_exact_for_piecewise_linear_intensity() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..50 {
        let times = random_times(&mut rng, 12, 50.0);
        let (a, b, c) = (rng.gen_range(0.5..2.0), rng.gen_range(-0.01..0.01), rng.gen_range(-0.01..0.01));
        let kink = times[rng.gen_range(0..12)];
        let f = |t: f64| a + b * t + c * (t - kink).max(0.0);
        let prim = |t: f64| a * t + b * t * t / 2.0 + c * (t - kink).max(0.0).powi(2) / 2.0;
        let exact = prim(times[11]) - prim(times[0]);
        let trap = integrate(&trapezoid_rule(&times), |p| f(p.time));
        assert!((trap - exact).abs() <= 1e-12 * exact.abs(), "{trap} vs {exact}");
    }
}

#[test]
fn monte_carlo_is_unbiased_for_linear_intensity() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let times = random_times(&mut rng, 10, 30.0);
    let f = |t: f64| 0.3 + 0.02 * t;
    let exact = 0.3 * (times[9] - times[0]) + 0.01 * (times[9].powi(2) - times[0].powi(2));
    let draws: Vec<f64> = (0..200)
        .map(|s| integrate(&monte_carlo_rule(&times, 4, s).unwrap(), |p| f(p.time)))
        .collect();
    let mean = draws.iter().sum::<f64>() / 200.0;
    let sd = (draws.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / 199.0).sqrt();
    assert!((mean - exact).abs() < 3.0 * sd / 200f64.sqrt(), "{mean} vs {exact}");
}

#[test]
fn constant_model_integrates_exactly() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let cfg = ModelConfig {
        n_items: 5,
        d_e: 2,
        d_pe: 2,
        d: 4,
        modulation: Modulation::Constant(0.25),
        ..ModelConfig::default()
    };
    let model = Model::new(cfg, None, 0).unwrap();
    let seq = sequence(&mut rng, 5, 9);
    let exact = 5.0 * 0.25 * (seq.last_time() - seq.times[0]);
    assert!((integrate_trapezoid(&seq, &model).unwrap() - exact).abs() < 1e-12);
    assert!((integrate_mc(&seq, &model, 3, 9).unwrap() - exact).abs() < 1e-12);
}

#[test]
fn trapezoid_tracks_fine_grid_on_random_models() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for seed in 0..20 {
        let cfg = ModelConfig {
            n_items: 8,
            d_e: 4,
            d_pe: 4,
            d: 8,
            ..ModelConfig::default()
        };
        let model = Model::new(cfg, None, seed).unwrap();
        let seq = sequence(&mut rng, 8, 10);
        let out = model.attention(&seq.items).unwrap();
        let fine: f64 = (1..seq.len())
            .map(|j| {
                let (lo, hi) = (seq.times[j - 1], seq.times[j]);
                let total = |t: f64| {
                    (0..8)
                        .map(|k| head_intensity(&model, out.h.row(j - 1), t, lo, k).unwrap())
                        .sum::<f64>()
                };
                simpson(total, lo, hi, 1000)
            })
            .sum();
        let trap = integrate_trapezoid(&seq, &model).unwrap();
        assert!((trap - fine).abs() / fine.max(1.0) < 0.05, "seed {seed}: {trap} vs {fine}");
    }
}
