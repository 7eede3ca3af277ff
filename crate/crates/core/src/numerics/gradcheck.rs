use crate::error::{CekdError, Result};
use crate::numerics::Tensor;

/// Central-difference gradient of a scalar function of a parameter tensor.
///
/// This is the oracle every analytic gradient in the crate is checked
/// against; it must stay independent of the backward passes it verifies.
pub fn finite_diff_gradient<F>(f: F, params: &Tensor, eps: f64) -> Result<Tensor>
where
    F: Fn(&Tensor) -> f64,
{
    if !(1e-7..=1e-3).contains(&eps) {
        return Err(CekdError::invalid(format!(
            "finite-difference step {eps} outside [1e-7, 1e-3]"
        )));
    }
    let mut grad = Tensor::zeros(params.shape());
    let mut probe = params.clone();
    for i in 0..params.len() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + eps;
        let plus = f(&probe);
        probe.data_mut()[i] = orig - eps;
        let minus = f(&probe);
        probe.data_mut()[i] = orig;
        if !plus.is_finite() || !minus.is_finite() {
            return Err(CekdError::Numeric(format!(
                "non-finite function value while perturbing coordinate {i}"
            )));
        }
        grad.data_mut()[i] = (plus - minus) / (2.0 * eps);
    }
    Ok(grad)
}
