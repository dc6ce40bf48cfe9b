//! Central finite-difference gradient checking.
//!
//! The numeric side only ever evaluates the forward function, so it is
//! independent of the backward rules it checks.

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Outcome of a gradient comparison.
#[derive(Clone, Debug)]
pub struct GradCheckReport {
    /// Largest `|analytic - numeric| / max(|analytic|, |numeric|, floor)`.
    pub max_rel_error: f64,
    /// Number of scalar coordinates compared.
    pub coordinates: usize,
}

/// Relative errors below this magnitude floor are measured absolutely.
pub const REL_FLOOR: f64 = 1e-3;

pub fn rel_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

/// Evaluates `f` on fresh leaves holding `inputs` and returns the scalar value.
pub fn eval_scalar<F>(inputs: &[Tensor], f: &F) -> Result<f64>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.param(t.clone())).collect();
    let out = f(&mut tape, &vars)?;
    tape.value(out).item()
}

/// Central differences of the scalar function `f` at `inputs`.
pub fn numeric_gradient<F>(inputs: &[Tensor], eps: f64, f: &F) -> Result<Vec<Tensor>>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut work: Vec<Tensor> = inputs.to_vec();
    let mut grads = Vec::with_capacity(inputs.len());
    for t in 0..inputs.len() {
        let mut g = Tensor::zeros(inputs[t].shape());
        for i in 0..inputs[t].numel() {
            let orig = work[t].data()[i];
            work[t].data_mut()[i] = orig + eps;
            let hi = eval_scalar(&work, f)?;
            work[t].data_mut()[i] = orig - eps;
            let lo = eval_scalar(&work, f)?;
            work[t].data_mut()[i] = orig;
            g.data_mut()[i] = (hi - lo) / (2.0 * eps);
        }
        grads.push(g);
    }
    Ok(grads)
}

/// Compares tape gradients of `f` against central differences.
pub fn check<F>(inputs: &[Tensor], eps: f64, f: F) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.param(t.clone())).collect();
    let out = f(&mut tape, &vars)?;
    let analytic = tape.backward(out, &vars)?;
    let numeric = numeric_gradient(inputs, eps, &f)?;

    let mut max_rel_error: f64 = 0.0;
    let mut coordinates = 0;
    for (a, n) in analytic.iter().zip(&numeric) {
        for (&av, &nv) in a.data().iter().zip(n.data()) {
            if !av.is_finite() || !nv.is_finite() {
                return Err(Error::NonFinite("gradient check".into()));
            }
            max_rel_error = max_rel_error.max(rel_error(av, nv));
            coordinates += 1;
        }
    }
    Ok(GradCheckReport {
        max_rel_error,
        coordinates,
    })
}
