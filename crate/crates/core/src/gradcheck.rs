//! Central finite-difference check of tape gradients.

use crate::autodiff::{Tape, Var};
use crate::error::Result;
use crate::params::ParamStore;

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_relative_error: f64,
    pub worst_param: String,
    pub worst_index: usize,
    pub checked: usize,
}

/// Denominator floor of the relative error, so entries whose true gradient is
/// near zero are compared in absolute terms.
pub const RELATIVE_FLOOR: f64 = 1e-3;

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(RELATIVE_FLOOR)
}

/// Compares `backward` against `(f(θ+ε) − f(θ−ε)) / 2ε` for every parameter
/// entry. `loss` must build a scalar on the given tape and be deterministic.
pub fn check_gradients<F>(store: &ParamStore, eps: f64, loss: F) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &ParamStore) -> Result<Var>,
{
    let mut tape = Tape::new();
    let out = loss(&mut tape, store)?;
    let grads = tape.backward(out, store)?;

    let eval = |s: &ParamStore| -> Result<f64> {
        let mut t = Tape::new();
        let v = loss(&mut t, s)?;
        Ok(t.value(v).item())
    };

    let mut probe = store.clone();
    let mut report = GradCheckReport {
        max_relative_error: 0.0,
        worst_param: String::new(),
        worst_index: 0,
        checked: 0,
    };
    for id in store.ids() {
        for j in 0..store.get(id).len() {
            let orig = store.get(id).data()[j];
            probe.get_mut(id).data_mut()[j] = orig + eps;
            let plus = eval(&probe)?;
            probe.get_mut(id).data_mut()[j] = orig - eps;
            let minus = eval(&probe)?;
            probe.get_mut(id).data_mut()[j] = orig;

            let numeric = (plus - minus) / (2.0 * eps);
            let err = relative_error(grads.get(id).data()[j], numeric);
            report.checked += 1;
            if err > report.max_relative_error {
                report.max_relative_error = err;
                report.worst_param = store.name(id).to_string();
                report.worst_index = j;
            }
        }
    }
    Ok(report)
}
