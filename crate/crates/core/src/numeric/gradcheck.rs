use serde::{Deserialize, Serialize};

use super::params::ParamStore;
use super::tape::{Tape, Var};
use crate::error::{Error, Result};

/// Gradients smaller than this are compared on an absolute rather than
/// relative scale.
pub const REL_ERROR_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ParamCheck {
    pub name: String,
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct GradCheckReport {
    pub eps: f64,
    pub loss: f64,
    pub per_param: Vec<ParamCheck>,
    pub worst_param: String,
    pub worst_rel_error: f64,
}

impl GradCheckReport {
    pub fn passes(&self, tol: f64) -> bool {
        self.worst_rel_error < tol
    }
}

pub fn rel_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(REL_ERROR_FLOOR)
}

/// Compares tape gradients with central finite differences for every entry
/// of every parameter.
///
/// `f` records a scalar loss for the given parameters on a fresh tape.
pub fn grad_check<F>(f: F, params: &ParamStore, eps: f64) -> Result<GradCheckReport>
where
    F: Fn(&ParamStore, &mut Tape) -> Result<Var>,
{
    if !(1e-7..=1e-4).contains(&eps) {
        return Err(Error::Config(format!(
            "finite-difference step {eps} outside [1e-7, 1e-4]"
        )));
    }
    let eval = |p: &ParamStore| -> Result<f64> {
        let mut tape = Tape::new();
        let out = f(p, &mut tape)?;
        let v = tape.value(out).item();
        if !v.is_finite() {
            return Err(Error::NonFinite("loss".into()));
        }
        Ok(v)
    };

    let mut tape = Tape::new();
    let out = f(params, &mut tape)?;
    let loss = tape.value(out).item();
    if !loss.is_finite() {
        return Err(Error::NonFinite("loss".into()));
    }
    let grads = tape.backward(out)?;

    let mut probe = params.clone();
    let mut per_param = Vec::new();
    for (name, value) in params.iter() {
        let analytic = grads
            .get(name)
            .map(|g| g.values().to_vec())
            .unwrap_or_else(|| vec![0.0; value.len()]);
        let mut worst = ParamCheck {
            name: name.clone(),
            worst_index: 0,
            analytic: 0.0,
            numeric: 0.0,
            rel_error: 0.0,
        };
        for i in 0..value.len() {
            let orig = value.values()[i];
            probe.get_mut(name).expect("cloned").values_mut()[i] = orig + eps;
            let up = eval(&probe)?;
            probe.get_mut(name).expect("cloned").values_mut()[i] = orig - eps;
            let down = eval(&probe)?;
            probe.get_mut(name).expect("cloned").values_mut()[i] = orig;
            let numeric = (up - down) / (2.0 * eps);
            let err = rel_error(analytic[i], numeric);
            if err > worst.rel_error || i == 0 {
                worst = ParamCheck {
                    name: name.clone(),
                    worst_index: i,
                    analytic: analytic[i],
                    numeric,
                    rel_error: err,
                };
            }
        }
        per_param.push(worst);
    }
    let (worst_param, worst_rel_error) = per_param
        .iter()
        .fold((String::new(), 0.0), |(n, e), c| {
            if c.rel_error > e || n.is_empty() {
                (c.name.clone(), c.rel_error)
            } else {
                (n, e)
            }
        });
    Ok(GradCheckReport {
        eps,
        loss,
        per_param,
        worst_param,
        worst_rel_error,
    })
}
