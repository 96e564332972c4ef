//! Central finite-difference gradient checker.

use alloc::vec::Vec;

use crate::tape::{Tape, Var};
use crate::tensor::{Tensor, TensorError};

/// Gradients smaller than this are compared in absolute rather than relative terms.
pub const REL_ERROR_FLOOR: f64 = 1e-3;

#[derive(Debug, Clone, Copy)]
pub struct GradCheckOptions {
    pub eps: f64,
    pub tol: f64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        GradCheckOptions { eps: 1e-5, tol: 1e-4 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    /// Max relative error per input, in input order.
    pub max_rel_error: Vec<f64>,
    pub worst: f64,
    pub tol: f64,
    pub passed: bool,
}

/// `|a - n| / max(|a|, |n|, REL_ERROR_FLOOR)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let scale = analytic.abs().max(numeric.abs()).max(REL_ERROR_FLOOR);
    (analytic - numeric).abs() / scale
}

/// Compares the tape gradient of a scalar function against central differences
/// `(f(x + eps) - f(x - eps)) / (2 eps)` for every coordinate of every input.
///
/// `f` receives one leaf per input, in order, and must be deterministic.
pub fn grad_check<F, E>(f: F, inputs: &[Tensor], opts: GradCheckOptions) -> Result<GradCheckReport, E>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var, E>,
    E: From<TensorError>,
{
    let eval = |values: &[Tensor]| -> Result<f64, E> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = values.iter().map(|t| tape.leaf(t.clone())).collect();
        let out = f(&mut tape, &vars)?;
        scalar_value(&tape, out)
    };

    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
    let out = f(&mut tape, &vars)?;
    scalar_value(&tape, out)?;
    tape.backward(out)?;
    let analytic: Vec<Tensor> = vars.iter().map(|&v| tape.grad_tensor(v)).collect();

    let mut work: Vec<Tensor> = inputs.to_vec();
    let mut max_rel_error = Vec::with_capacity(inputs.len());
    for (k, grad) in analytic.iter().enumerate() {
        let mut worst: f64 = 0.0;
        for i in 0..inputs[k].len() {
            let orig = inputs[k].data()[i];
            work[k].data_mut()[i] = orig + opts.eps;
            let plus = eval(&work)?;
            work[k].data_mut()[i] = orig - opts.eps;
            let minus = eval(&work)?;
            work[k].data_mut()[i] = orig;
            let numeric = (plus - minus) / (2.0 * opts.eps);
            worst = worst.max(relative_error(grad.data()[i], numeric));
        }
        max_rel_error.push(worst);
    }
    let worst = max_rel_error.iter().copied().fold(0.0, f64::max);
    Ok(GradCheckReport {
        max_rel_error,
        worst,
        tol: opts.tol,
        passed: worst <= opts.tol,
    })
}

fn scalar_value<E: From<TensorError>>(tape: &Tape, out: Var) -> Result<f64, E> {
    let v = tape.value(out);
    let x = v.item().ok_or_else(|| TensorError::NotScalar {
        shape: v.shape().to_vec(),
    })?;
    if !x.is_finite() {
        return Err(TensorError::NonFinite {
            what: "grad_check objective",
        }
        .into());
    }
    Ok(x)
}
