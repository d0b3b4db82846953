//! Central finite-difference verification of analytic gradients.

use crate::autodiff::{Tape, Var};
use crate::error::{HydraError, Result};
use crate::tensor::Tensor;

/// Finite-difference step.
pub const STEP: f64 = 1e-5;

/// Gradients smaller than this are compared absolutely (scaled by this floor)
/// rather than relatively, so near-zero entries do not blow up the ratio.
pub const RELATIVE_FLOOR: f64 = 1e-3;

/// A scalar function of one tensor with a claimed gradient.
pub trait Differentiable {
    fn value(&self, x: &Tensor) -> Result<f64>;
    fn gradient(&self, x: &Tensor) -> Result<Tensor>;
}

/// Adapts a closure that records a computation on a [`Tape`].
pub struct TapeFn<F>(pub F);

impl<F> TapeFn<F>
where
    F: Fn(&mut Tape, Var) -> Result<Var>,
{
    fn run(&self, x: &Tensor) -> Result<(Tape, Var, Var)> {
        let mut tape = Tape::new();
        let input = tape.input(x.clone());
        let out = (self.0)(&mut tape, input)?;
        if tape.value(out).len() != 1 {
            return Err(HydraError::Contract(format!(
                "gradient check needs a scalar output, got shape {:?}",
                tape.value(out).shape()
            )));
        }
        Ok((tape, input, out))
    }
}

impl<F> Differentiable for TapeFn<F>
where
    F: Fn(&mut Tape, Var) -> Result<Var>,
{
    fn value(&self, x: &Tensor) -> Result<f64> {
        let (tape, _, out) = self.run(x)?;
        Ok(tape.value(out).item())
    }

    fn gradient(&self, x: &Tensor) -> Result<Tensor> {
        let (tape, input, out) = self.run(x)?;
        let grads = tape.backward(out)?;
        Ok(grads.get(input).cloned().unwrap_or_else(|| Tensor::zeros(x.shape())))
    }
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub max_relative_error: f64,
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub tolerance: f64,
    pub passed: bool,
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(RELATIVE_FLOOR)
}

/// Compares `f.gradient(input)` against central differences at every entry.
pub fn grad_check(f: &impl Differentiable, input: &Tensor, tolerance: f64) -> Result<GradCheckReport> {
    let analytic = f.gradient(input)?;
    if analytic.shape() != input.shape() {
        return Err(HydraError::dim("grad_check", input.shape(), analytic.shape()));
    }
    let mut probe = input.clone();
    let mut report = GradCheckReport {
        max_relative_error: 0.0,
        worst_index: 0,
        analytic: 0.0,
        numeric: 0.0,
        tolerance,
        passed: true,
    };
    for i in 0..input.len() {
        let orig = input.data()[i];
        probe.data_mut()[i] = orig + STEP;
        let plus = f.value(&probe)?;
        probe.data_mut()[i] = orig - STEP;
        let minus = f.value(&probe)?;
        probe.data_mut()[i] = orig;

        let numeric = (plus - minus) / (2.0 * STEP);
        let a = analytic.data()[i];
        let err = relative_error(a, numeric);
        if err > report.max_relative_error || i == 0 {
            report.max_relative_error = err;
            report.worst_index = i;
            report.analytic = a;
            report.numeric = numeric;
        }
    }
    report.passed = report.max_relative_error <= tolerance;
    Ok(report)
}
