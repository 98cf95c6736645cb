//! Central finite-difference gradient checking.

use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// Outcome of comparing analytic and numerical gradients.
#[derive(Debug, Clone)]
pub struct GradCheckReport {
    /// Per input: `max |analytic - numeric| / max(max|analytic|, max|numeric|)`.
    pub relative_errors: Vec<f64>,
    /// Per input: largest absolute elementwise difference.
    pub absolute_errors: Vec<f64>,
}

impl GradCheckReport {
    pub fn max_relative_error(&self) -> f64 {
        self.relative_errors.iter().cloned().fold(0.0, f64::max)
    }

    pub fn passes(&self, tolerance: f64) -> bool {
        self.max_relative_error() < tolerance
    }
}

/// Evaluates the scalar function with the given inputs and no gradient tracking.
pub fn eval_scalar<F>(f: &F, inputs: &[Tensor]) -> f64
where
    F: Fn(&mut Tape, &[Var]) -> Var,
{
    let mut tape = Tape::inference();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.constant(t.clone())).collect();
    let out = f(&mut tape, &vars);
    tape.value(out).item()
}

/// Numerical gradient of `f` with respect to input `which`.
pub fn numerical_gradient<F>(f: &F, inputs: &[Tensor], which: usize, eps: f64) -> Tensor
where
    F: Fn(&mut Tape, &[Var]) -> Var,
{
    let mut work = inputs.to_vec();
    let n = work[which].numel();
    let mut grad = Tensor::zeros(work[which].shape().to_vec());
    for i in 0..n {
        let orig = work[which].data()[i];
        work[which].data_mut()[i] = orig + eps;
        let plus = eval_scalar(f, &work);
        work[which].data_mut()[i] = orig - eps;
        let minus = eval_scalar(f, &work);
        work[which].data_mut()[i] = orig;
        grad.data_mut()[i] = (plus - minus) / (2.0 * eps);
    }
    grad
}

/// Analytic gradients of `f` with respect to every input.
pub fn analytic_gradients<F>(f: &F, inputs: &[Tensor]) -> Vec<Tensor>
where
    F: Fn(&mut Tape, &[Var]) -> Var,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.variable(t.clone())).collect();
    let out = f(&mut tape, &vars);
    let grads = tape.backward(out);
    vars.iter()
        .zip(inputs)
        .map(|(&v, t)| {
            grads
                .wrt(v)
                .cloned()
                .unwrap_or_else(|| Tensor::zeros(t.shape().to_vec()))
        })
        .collect()
}

/// Compares reverse-mode gradients with central differences of step `eps`.
pub fn check_gradients<F>(f: F, inputs: &[Tensor], eps: f64) -> GradCheckReport
where
    F: Fn(&mut Tape, &[Var]) -> Var,
{
    let analytic = analytic_gradients(&f, inputs);
    let mut relative_errors = Vec::with_capacity(inputs.len());
    let mut absolute_errors = Vec::with_capacity(inputs.len());
    for (i, a) in analytic.iter().enumerate() {
        let n = numerical_gradient(&f, inputs, i, eps);
        let diff = a.max_abs_diff(&n);
        let scale = a.max_abs().max(n.max_abs());
        absolute_errors.push(diff);
        relative_errors.push(if scale > 0.0 { diff / scale } else { 0.0 });
    }
    GradCheckReport {
        relative_errors,
        absolute_errors,
    }
}
