//! Point-process log-likelihood of a sequence's timestamps and the
//! compensator integral that turns it into a regularizer:
//!
//! ```text
//! R(u) = Σ_j ln λ_{k_j}(t_j | H_j) − ∫_{t_1}^{t_L} Σ_k λ_k(t | H_t) dt
//! ```
//!
//! The integral is approximated by a quadrature rule: a list of points, each
//! conditioning on a history prefix, with weights. The trapezoid rule places
//! its points at the event times; the Monte Carlo rule draws `N` uniform
//! points per inter-event interval.
//!
//! A point's `anchor` counts the events in its history: anchor 0 is the empty
//! history (zero representation, zero elapsed time) and anchor `a > 0`
//! conditions on `h(t_a)` with elapsed time `t - t_a` (1-based event numbers).

use log::warn;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::EventSequence;
use crate::error::{Error, Result};
use crate::model::{Bound, Model};
use crate::numeric::{NumArray, Tape, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum IntegratorMethod {
    MonteCarlo,
    #[default]
    Trapezoid,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IntegratorConfig {
    pub method: IntegratorMethod,
    pub mc_samples: usize,
    pub seed: u64,
}

impl Default for IntegratorConfig {
    fn default() -> Self {
        Self {
            method: IntegratorMethod::Trapezoid,
            mc_samples: 5,
            seed: 0,
        }
    }
}

/// One quadrature node.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadPoint {
    pub anchor: usize,
    pub time: f64,
    pub elapsed: f64,
    pub weight: f64,
}

/// Conditional-intensity query points at each event time: event `j`
/// (0-based) conditions on the `j` events before it.
pub fn event_points(times: &[f64]) -> Vec<QuadPoint> {
    times
        .iter()
        .enumerate()
        .map(|(j, &t)| QuadPoint {
            anchor: j,
            time: t,
            elapsed: if j == 0 { 0.0 } else { t - times[j - 1] },
            weight: 0.0,
        })
        .collect()
}

/// `Σ_{j≥2} (t_j − t_{j−1})/2 · (λ(t_j | H_j) + λ(t_{j−1} | H_{j−1}))`,
/// regrouped per event point.
pub fn trapezoid_rule(times: &[f64]) -> Vec<QuadPoint> {
    let mut pts = event_points(times);
    for j in 1..times.len() {
        let half = (times[j] - times[j - 1]) / 2.0;
        pts[j].weight += half;
        pts[j - 1].weight += half;
    }
    pts
}

/// `Σ_{j≥2} (t_j − t_{j−1}) · mean_i λ(v_i | H_j)` with `v_i` uniform in the
/// interval. Zero-length intervals draw their samples but emit no points.
pub fn monte_carlo_rule(times: &[f64], samples: usize, seed: u64) -> Result<Vec<QuadPoint>> {
    if samples == 0 {
        return Err(Error::Config("Monte Carlo integration needs at least one sample".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pts = Vec::with_capacity(times.len().saturating_sub(1) * samples);
    for j in 1..times.len() {
        let dt = times[j] - times[j - 1];
        for _ in 0..samples {
            let u: f64 = rng.gen();
            if dt > 0.0 {
                pts.push(QuadPoint {
                    anchor: j,
                    time: times[j - 1] + u * dt,
                    elapsed: u * dt,
                    weight: dt / samples as f64,
                });
            }
        }
    }
    Ok(pts)
}

pub fn rule_for(times: &[f64], cfg: &IntegratorConfig, seed: u64) -> Result<Vec<QuadPoint>> {
    match cfg.method {
        IntegratorMethod::Trapezoid => Ok(trapezoid_rule(times)),
        IntegratorMethod::MonteCarlo => monte_carlo_rule(times, cfg.mc_samples, seed),
    }
}

/// `Σ weight · f(point)`.
pub fn integrate(rule: &[QuadPoint], mut f: impl FnMut(&QuadPoint) -> f64) -> f64 {
    rule.iter().map(|p| p.weight * f(p)).sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegularizerValue {
    pub log_likelihood: f64,
    pub compensator: f64,
    pub total: f64,
}

/// Tape handles of the two regularizer terms.
#[derive(Debug, Clone, Copy)]
pub struct RegularizerVars {
    pub log_likelihood: Var,
    pub compensator: Var,
    /// `log_likelihood − compensator`
    pub total: Var,
}

/// Intensities of all heads at the given points.
pub fn point_intensities(
    model: &Model,
    tape: &mut Tape,
    bound: &Bound,
    anchor_table: Var,
    points: &[QuadPoint],
) -> Result<Var> {
    let anchors = tape.gather_rows(anchor_table, points.iter().map(|p| p.anchor).collect())?;
    let elapsed: Vec<f64> = points.iter().map(|p| p.elapsed).collect();
    model
        .intensities(tape, bound, anchors, &elapsed)?
        .ok_or_else(|| Error::Config("the regularizer needs a modulated model".into()))
}

/// `Σ_j ln λ_{head(i_j)}` from the event-point intensity matrix.
pub fn loglik_tape(model: &Model, tape: &mut Tape, event_lambda: Var, items: &[usize]) -> Result<Var> {
    let picks = items
        .iter()
        .enumerate()
        .map(|(j, &i)| (j, model.head_of_item[i]))
        .collect();
    let own = tape.pick(event_lambda, picks)?;
    let logs = tape.ln(own)?;
    tape.sum(logs)
}

/// Weighted sum of total intensity over a quadrature rule.
///
/// For the trapezoid rule the event-point intensities are reused.
pub fn compensator_tape(
    model: &Model,
    tape: &mut Tape,
    bound: &Bound,
    anchor_table: Var,
    event_lambda: Var,
    rule: &[QuadPoint],
    method: IntegratorMethod,
) -> Result<Var> {
    if rule.is_empty() {
        return Ok(tape.constant(NumArray::scalar(0.0)));
    }
    let lambda = match method {
        IntegratorMethod::Trapezoid => event_lambda,
        IntegratorMethod::MonteCarlo => point_intensities(model, tape, bound, anchor_table, rule)?,
    };
    let total = tape.row_sum(lambda)?;
    let weights = tape.constant(NumArray::col_vector(rule.iter().map(|p| p.weight).collect()));
    let weighted = tape.mul(total, weights)?;
    tape.sum(weighted)
}

/// Records `R(u)` for one sequence whose encoder output `h` is already on the
/// tape. `mc_seed` drives the Monte Carlo rule.
pub fn regularizer_tape(
    model: &Model,
    tape: &mut Tape,
    bound: &Bound,
    h: Var,
    seq: &EventSequence,
    cfg: &IntegratorConfig,
    mc_seed: u64,
) -> Result<RegularizerVars> {
    let table = model.anchor_table(tape, h)?;
    let events = event_points(&seq.times);
    let event_lambda = point_intensities(model, tape, bound, table, &events)?;
    regularizer_from_events(model, tape, bound, table, event_lambda, seq, cfg, mc_seed)
}

/// As [`regularizer_tape`], given precomputed event-point intensities.
#[allow(clippy::too_many_arguments)]
pub fn regularizer_from_events(
    model: &Model,
    tape: &mut Tape,
    bound: &Bound,
    anchor_table: Var,
    event_lambda: Var,
    seq: &EventSequence,
    cfg: &IntegratorConfig,
    mc_seed: u64,
) -> Result<RegularizerVars> {
    let log_likelihood = loglik_tape(model, tape, event_lambda, &seq.items)?;
    let rule = if seq.len() < 2 {
        Vec::new()
    } else {
        rule_for(&seq.times, cfg, mc_seed)?
    };
    let compensator = compensator_tape(model, tape, bound, anchor_table, event_lambda, &rule, cfg.method)?;
    let neg = tape.scale(compensator, -1.0)?;
    let total = tape.add(log_likelihood, neg)?;
    Ok(RegularizerVars {
        log_likelihood,
        compensator,
        total,
    })
}

fn evaluate(model: &Model, seq: &EventSequence, cfg: &IntegratorConfig) -> Result<RegularizerValue> {
    let mut tape = Tape::new();
    let bound = model.bind(&mut tape)?;
    let enc = model.encode(&mut tape, &bound, &seq.items)?;
    let vars = regularizer_tape(model, &mut tape, &bound, enc.h, seq, cfg, cfg.seed)?;
    let value = RegularizerValue {
        log_likelihood: tape.value(vars.log_likelihood).item(),
        compensator: tape.value(vars.compensator).item(),
        total: tape.value(vars.total).item(),
    };
    if !(value.log_likelihood.is_finite() && value.compensator.is_finite()) {
        return Err(Error::NonFinite("regularizer".into()));
    }
    Ok(value)
}

/// `R(u)` with the configured integrator.
pub fn regularizer(model: &Model, seq: &EventSequence, cfg: &IntegratorConfig) -> Result<RegularizerValue> {
    evaluate(model, seq, cfg)
}

/// `Σ_j ln λ_{k_j}(t_j | H_j)`.
pub fn event_loglik(seq: &EventSequence, model: &Model) -> Result<f64> {
    Ok(evaluate(model, seq, &IntegratorConfig::default())?.log_likelihood)
}

fn compensator(seq: &EventSequence, model: &Model, cfg: IntegratorConfig) -> Result<f64> {
    if seq.len() < 2 {
        warn!("sequence of user `{}` has no interval to integrate", seq.user_id);
        return Ok(0.0);
    }
    Ok(evaluate(model, seq, &cfg)?.compensator)
}

/// Monte Carlo estimate of the compensator.
pub fn integrate_mc(seq: &EventSequence, model: &Model, samples: usize, seed: u64) -> Result<f64> {
    compensator(
        seq,
        model,
        IntegratorConfig {
            method: IntegratorMethod::MonteCarlo,
            mc_samples: samples,
            seed,
        },
    )
}

/// Trapezoid estimate of the compensator.
pub fn integrate_trapezoid(seq: &EventSequence, model: &Model) -> Result<f64> {
    compensator(seq, model, IntegratorConfig::default())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{names, Modulation, ModelConfig};
    use crate::sm_layer::{intensity, ModulatorParams};

    fn model(modulation: Modulation, seed: u64) -> Model {
        let cfg = ModelConfig {
            n_items: 4,
            d_e: 4,
            d_pe: 4,
            d: 5,
            d_g: 3,
            modulation,
            modulator_init: 0.4,
            ..ModelConfig::default()
        };
        Model::new(cfg, None, seed).unwrap()
    }

    fn seq() -> EventSequence {
        EventSequence::new("u", vec![0.0, 0.7, 0.7, 2.0, 3.5], vec![0, 2, 1, 2, 3]).unwrap()
    }

    #[test]
    fn constant_unit_intensity_has_zero_loglik() {
        assert_eq!(event_loglik(&seq(), &model(Modulation::Constant(1.0), 0)).unwrap(), 0.0);
    }

    #[test]
    fn constant_e_intensity_gives_length() {
        let ll = event_loglik(&seq(), &model(Modulation::Constant(std::f64::consts::E), 0)).unwrap();
        assert!((ll - 5.0).abs() < 1e-12);
    }

    /// λ of every head at an anchor computed straight from the head formula.
    fn oracle_lambdas(m: &Model, s: &EventSequence, anchor: usize, t: f64) -> Vec<f64> {
        let out = m.attention(&s.items).unwrap();
        let zero = vec![0.0; m.config.d];
        let (h, t_a): (&[f64], f64) = if anchor == 0 {
            (&zero, t)
        } else {
            (out.h.row(anchor - 1), s.times[anchor - 1])
        };
        let mp = ModulatorParams::of(m);
        (0..m.head_count()).map(|k| intensity(h, t, t_a, &mp.head(k)).unwrap()).collect()
    }

    #[test]
    fn loglik_matches_per_event_oracle() {
        let m = model(Modulation::Learned, 5);
        let s = EventSequence::new("u", vec![0.0, 1.5, 4.0], vec![3, 0, 3]).unwrap();
        let expected: f64 = (0..3)
            .map(|j| oracle_lambdas(&m, &s, j, s.times[j])[s.items[j]].ln())
            .sum();
        assert!((event_loglik(&s, &m).unwrap() - expected).abs() < 1e-12);
    }

    #[test]
    fn constant_intensity_integrates_exactly() {
        let m = model(Modulation::Constant(2.5), 0);
        let s = seq();
        let exact = 2.5 * 4.0 * 3.5;
        assert!((integrate_trapezoid(&s, &m).unwrap() - exact).abs() < 1e-12);
        for n in [1, 3, 17] {
            assert!((integrate_mc(&s, &m, n, 9).unwrap() - exact).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_length_intervals_contribute_nothing() {
        let m = model(Modulation::Learned, 1);
        let s = EventSequence::new("u", vec![1.0, 1.0, 1.0], vec![0, 1, 2]).unwrap();
        assert_eq!(integrate_trapezoid(&s, &m).unwrap(), 0.0);
        assert_eq!(integrate_mc(&s, &m, 4, 0).unwrap(), 0.0);
    }

    #[test]
    fn short_sequences_integrate_to_zero() {
        let m = model(Modulation::Learned, 1);
        let s = EventSequence::new("u", vec![1.0], vec![0]).unwrap();
        assert_eq!(integrate_trapezoid(&s, &m).unwrap(), 0.0);
        assert_eq!(integrate_mc(&s, &m, 4, 0).unwrap(), 0.0);
    }

    #[test]
    fn trapezoid_arithmetic() {
        let rule = trapezoid_rule(&[0.0, 1.0]);
        let v = integrate(&rule, |p| if p.anchor == 0 { 4.0 } else { 2.0 });
        assert_eq!(v, 3.0);
    }

    #[test]
    fn trapezoid_exact_for_linear_intensity() {
        let times = [0.0, 2.0];
        let f = |t: f64| 1.5 + 0.75 * t;
        let rule = trapezoid_rule(&times);
        let v = integrate(&rule, |p| f(p.time));
        // ∫_0^2 (1.5 + 0.75 t) dt = 3 + 1.5
        assert!((v - 4.5).abs() < 1e-12);
    }

    #[test]
    fn mc_mean_approaches_linear_integral() {
        let times = [1.0, 5.0];
        let f = |t: f64| 0.5 + 2.0 * t;
        let exact = 0.5 * 4.0 + (25.0 - 1.0);
        let rule = monte_carlo_rule(&times, 10_000, 123).unwrap();
        let v = integrate(&rule, |p| f(p.time));
        assert!((v - exact).abs() / exact < 0.01);
    }

    #[test]
    fn mc_is_deterministic_under_seed() {
        let m = model(Modulation::Learned, 3);
        let s = seq();
        let a = integrate_mc(&s, &m, 5, 77).unwrap();
        let b = integrate_mc(&s, &m, 5, 77).unwrap();
        assert_eq!(a.to_bits(), b.to_bits());
        assert_ne!(a, integrate_mc(&s, &m, 5, 78).unwrap());
    }

    #[test]
    fn trapezoid_matches_head_formula_oracle() {
        let m = model(Modulation::Learned, 2);
        let s = seq();
        let mut expected = 0.0;
        for j in 1..s.len() {
            let right: f64 = oracle_lambdas(&m, &s, j, s.times[j]).iter().sum();
            let left: f64 = oracle_lambdas(&m, &s, j - 1, s.times[j - 1]).iter().sum();
            expected += (s.times[j] - s.times[j - 1]) / 2.0 * (right + left);
        }
        assert!((integrate_trapezoid(&s, &m).unwrap() - expected).abs() < 1e-12);
    }

    #[test]
    fn mc_matches_head_formula_oracle() {
        let m = model(Modulation::Learned, 2);
        let s = seq();
        let rule = monte_carlo_rule(&s.times, 3, 5).unwrap();
        let expected = integrate(&rule, |p| oracle_lambdas(&m, &s, p.anchor, p.time).iter().sum());
        assert!((integrate_mc(&s, &m, 3, 5).unwrap() - expected).abs() < 1e-12);
    }

    #[test]
    fn raising_base_rates_raises_the_compensator() {
        let m = model(Modulation::Learned, 4);
        let s = seq();
        let base = integrate_trapezoid(&s, &m).unwrap();
        let mut up = m.clone();
        for v in up.params.get_mut(names::MOD_MU).unwrap().values_mut() {
            *v += 0.5;
        }
        assert!(integrate_trapezoid(&s, &up).unwrap() > base);
    }

    #[test]
    fn zero_samples_rejected() {
        assert!(monte_carlo_rule(&[0.0, 1.0], 0, 0).is_err());
    }
}
