//! Central-difference gradient oracle.

use super::{ParamId, Params, Tape, Var};
use crate::error::{MaestroError, Result};
use crate::tensor::Tensor;

/// `|analytic - numeric| / max(|analytic|, |numeric|, 1e-12)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-12)
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// Flat coordinate (or `(param, coordinate)` rendered) with the worst error.
    pub worst: String,
    pub analytic: f64,
    pub numeric: f64,
    pub coordinates: usize,
}

impl GradCheckReport {
    fn empty() -> Self {
        Self {
            max_rel_error: 0.0,
            worst: String::new(),
            analytic: 0.0,
            numeric: 0.0,
            coordinates: 0,
        }
    }

    fn observe(&mut self, at: impl FnOnce() -> String, analytic: f64, numeric: f64) {
        self.coordinates += 1;
        let e = relative_error(analytic, numeric);
        if e > self.max_rel_error || self.worst.is_empty() {
            self.max_rel_error = self.max_rel_error.max(e);
            if e >= self.max_rel_error {
                self.worst = at();
                self.analytic = analytic;
                self.numeric = numeric;
            }
        }
    }
}

fn eval_scalar<F>(f: &F, x: &Tensor) -> Result<f64>
where
    F: for<'t> Fn(&'t Tape, Var<'t>) -> Var<'t>,
{
    let tape = Tape::new();
    let v = tape.leaf(x);
    let out = f(&tape, v).item();
    if !out.is_finite() {
        return Err(MaestroError::numeric("finite_diff_check", format!("fn returned {out}")));
    }
    Ok(out)
}

/// Compares the tape gradient of a scalar function against central differences
/// with step `h` at every coordinate of `x`.
pub fn finite_diff_check<F>(f: F, x: &Tensor, h: f64) -> Result<GradCheckReport>
where
    F: for<'t> Fn(&'t Tape, Var<'t>) -> Var<'t>,
{
    if h <= 0.0 {
        return Err(MaestroError::contract("finite difference step must be positive"));
    }
    let xg = x.clone().requiring_grad();
    let tape = Tape::new();
    let v = tape.leaf(&xg);
    let out = f(&tape, v);
    if !out.item().is_finite() {
        return Err(MaestroError::numeric("finite_diff_check", "non-finite fn output"));
    }
    let grads = tape.backward(out)?;
    let analytic = grads
        .get(v)
        .map(<[f64]>::to_vec)
        .unwrap_or_else(|| vec![0.0; x.len()]);

    let mut report = GradCheckReport::empty();
    let mut probe = x.clone();
    for i in 0..x.len() {
        let orig = probe.values()[i];
        probe.values_mut()[i] = orig + h;
        let fp = eval_scalar(&f, &probe)?;
        probe.values_mut()[i] = orig - h;
        let fm = eval_scalar(&f, &probe)?;
        probe.values_mut()[i] = orig;
        report.observe(|| format!("[{i}]"), analytic[i], (fp - fm) / (2.0 * h));
    }
    Ok(report)
}

/// Finite-difference check over every coordinate of the selected parameters.
///
/// `loss` must be a pure function of `params` (fixed seeds, no dropout).
pub fn finite_diff_check_params<F>(
    loss: F,
    params: &Params,
    h: f64,
    select: impl Fn(ParamId, &str) -> bool,
) -> Result<GradCheckReport>
where
    F: for<'t> Fn(&'t Tape, &Params) -> Result<Var<'t>>,
{
    let mut work = params.clone();
    work.zero_grad();
    {
        let tape = Tape::new();
        let out = loss(&tape, &work)?;
        tape.backward_into(out, &mut work)?;
    }
    let eval = |p: &Params| -> Result<f64> {
        let tape = Tape::new();
        let v = loss(&tape, p)?.item();
        if !v.is_finite() {
            return Err(MaestroError::numeric("finite_diff_check", format!("loss {v}")));
        }
        Ok(v)
    };
    let mut report = GradCheckReport::empty();
    let mut probe = params.clone();
    for id in params.ids() {
        let name = params.name(id).to_string();
        if !select(id, &name) {
            continue;
        }
        let analytic = work.get(id).grad().expect("params track gradients").to_vec();
        for i in 0..analytic.len() {
            let orig = probe.get(id).values()[i];
            probe.get_mut(id).values_mut()[i] = orig + h;
            let fp = eval(&probe)?;
            probe.get_mut(id).values_mut()[i] = orig - h;
            let fm = eval(&probe)?;
            probe.get_mut(id).values_mut()[i] = orig;
            report.observe(|| format!("{name}[{i}]"), analytic[i], (fp - fm) / (2.0 * h));
        }
    }
    Ok(report)
}
