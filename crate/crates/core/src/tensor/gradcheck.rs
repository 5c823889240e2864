//! Central finite-difference verification of tape gradients.

use super::params::ParamStore;
use super::tape::{Tape, Var};
use crate::error::{GogError, Result};
use crate::parallel;

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub max_relative_error: f64,
    pub worst_param: String,
    pub worst_index: usize,
    pub worst_analytic: f64,
    pub worst_numeric: f64,
    pub checked: usize,
    /// Worst relative error among coordinates with `|a| + |n|` at least
    /// each of [`MAGNITUDE_FLOORS`].
    pub worst_by_magnitude: Vec<(f64, f64)>,
}

/// Gradient magnitudes used to split the error report.
pub const MAGNITUDE_FLOORS: [f64; 5] = [0.0, 1e-8, 1e-6, 1e-5, 1e-4];

/// Relative disagreement `|a - n| / max(1e-8, |a| + |n|)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / (analytic.abs() + numeric.abs()).max(1e-8)
}

fn eval_loss<F>(loss_fn: &F, store: &ParamStore) -> Result<f64>
where
    F: Fn(&ParamStore, &mut Tape) -> Result<Var>,
{
    let mut tape = Tape::new();
    let loss = loss_fn(store, &mut tape)?;
    let v = tape.value(loss);
    if v.shape() != (1, 1) {
        return Err(GogError::dim("check_gradients", v.shape_str(), "1x1 loss"));
    }
    let l = v.get(0, 0);
    if !l.is_finite() {
        return Err(GogError::Numerical(format!("loss is {l}")));
    }
    Ok(l)
}

/// Compares the backward-pass gradient of every trainable scalar against
/// `(f(θ+ε) − f(θ−ε)) / 2ε` and returns the worst relative error.
pub fn check_gradients<F>(loss_fn: F, store: &ParamStore, epsilon: f64) -> Result<GradCheckReport>
where
    F: Fn(&ParamStore, &mut Tape) -> Result<Var> + Sync,
{
    let mut tape = Tape::new();
    let loss = loss_fn(store, &mut tape)?;
    let grads = tape.backward(loss)?;
    drop(tape);

    let mut coords = Vec::new();
    for (name, p) in store.iter() {
        if p.trainable {
            for i in 0..p.value.data().len() {
                coords.push((name.clone(), i));
            }
        }
    }

    let results = parallel::map(&coords, |(name, i)| -> Result<(f64, f64)> {
        let analytic = grads.get(name).map_or(0.0, |g| g.data()[*i]);
        let mut probe = store.clone();
        let base = store.value(name)?.data()[*i];
        probe.get_mut(name)?.value.data_mut()[*i] = base + epsilon;
        let up = eval_loss(&loss_fn, &probe)?;
        probe.get_mut(name)?.value.data_mut()[*i] = base - epsilon;
        let down = eval_loss(&loss_fn, &probe)?;
        Ok((analytic, (up - down) / (2.0 * epsilon)))
    });

    let mut report = GradCheckReport {
        max_relative_error: 0.0,
        worst_param: String::new(),
        worst_index: 0,
        worst_analytic: 0.0,
        worst_numeric: 0.0,
        checked: coords.len(),
        worst_by_magnitude: MAGNITUDE_FLOORS.iter().map(|&f| (f, 0.0)).collect(),
    };
    for ((name, i), r) in coords.iter().zip(results) {
        let (a, n) = r?;
        let err = relative_error(a, n);
        for (floor, worst) in report.worst_by_magnitude.iter_mut() {
            if a.abs() + n.abs() >= *floor {
                *worst = worst.max(err);
            }
        }
        if err > report.max_relative_error || report.worst_param.is_empty() {
            report.max_relative_error = err;
            report.worst_param = name.clone();
            report.worst_index = *i;
            report.worst_analytic = a;
            report.worst_numeric = n;
        }
    }
    Ok(report)
}
