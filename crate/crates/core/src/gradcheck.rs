//! Central finite-difference gradient checks.

use crate::error::Result;
use crate::param::Parameter;

pub const DEFAULT_STEP: f64 = 1e-5;

/// Scale below which errors are measured absolutely rather than relatively.
const RELATIVE_FLOOR: f64 = 1e-6;

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let denom = analytic.abs().max(numeric.abs()).max(RELATIVE_FLOOR);
    (analytic - numeric).abs() / denom
}

/// Central-difference gradient of `f` at `x`.
pub fn numeric_gradient(mut f: impl FnMut(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            probe[i] = x[i] + h;
            let plus = f(&probe);
            probe[i] = x[i] - h;
            let minus = f(&probe);
            probe[i] = x[i];
            (plus - minus) / (2.0 * h)
        })
        .collect()
}

pub fn max_relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    assert_eq!(analytic.len(), numeric.len());
    analytic
        .iter()
        .zip(numeric)
        .map(|(&a, &n)| relative_error(a, n))
        .fold(0.0, f64::max)
}

/// Compares the analytic parameter gradients of a model against central
/// differences and returns the worst relative error.
///
/// `loss` must evaluate the scalar objective and accumulate its gradient into
/// the parameters. `params` enumerates the parameters to check, in a stable
/// order. Gradients are left zeroed on return.
pub fn finite_diff_check<M>(
    model: &mut M,
    mut loss: impl FnMut(&mut M) -> Result<f64>,
    mut params: impl FnMut(&mut M) -> Vec<&mut Parameter>,
    h: f64,
) -> Result<f64> {
    params(model).into_iter().for_each(Parameter::zero_grad);
    loss(model)?;
    let analytic: Vec<Vec<f64>> = params(model)
        .into_iter()
        .map(|p| p.grad.data().to_vec())
        .collect();

    let mut worst = 0.0f64;
    for (pi, grads) in analytic.iter().enumerate() {
        for (ei, &a) in grads.iter().enumerate() {
            let original = params(model)[pi].value.data()[ei];
            params(model)[pi].value.data_mut()[ei] = original + h;
            let plus = loss(model)?;
            params(model)[pi].value.data_mut()[ei] = original - h;
            let minus = loss(model)?;
            params(model)[pi].value.data_mut()[ei] = original;
            let numeric = (plus - minus) / (2.0 * h);
            worst = worst.max(relative_error(a, numeric));
        }
    }
    params(model).into_iter().for_each(Parameter::zero_grad);
    Ok(worst)
}
