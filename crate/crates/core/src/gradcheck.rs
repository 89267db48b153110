//! Central-difference gradient oracle.
//!
//! Lives apart from the tape on purpose: it only ever calls the supplied
//! closure, so it stays independent of the reverse-mode implementation it
//! is used to verify.

use alloc::vec::Vec;

use crate::error::{CoreError, Result};
use crate::tensor::Tensor;

/// Central-difference estimate of df/dp per coordinate:
/// (f(p + h e_i) - f(p - h e_i)) / (2h).
///
/// `f` must be deterministic; `h` must be positive.
pub fn finite_difference_gradient<F>(mut f: F, params: &Tensor, h: f64) -> Result<Tensor>
where
    F: FnMut(&Tensor) -> Result<f64>,
{
    assert!(h > 0.0, "step must be positive");
    let mut probe = params.clone();
    let mut grad = Vec::with_capacity(params.len());
    for i in 0..params.len() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + h;
        let plus = f(&probe)?;
        probe.data_mut()[i] = orig - h;
        let minus = f(&probe)?;
        probe.data_mut()[i] = orig;
        if !plus.is_finite() || !minus.is_finite() {
            return Err(CoreError::NonFiniteProbe { coordinate: i });
        }
        grad.push((plus - minus) / (2.0 * h));
    }
    Tensor::new(params.shape().to_vec(), grad)
}

/// Relative-error agreement check used by the gradient tests:
/// passes when |a - b| <= tol * max(|a|, |b|) or the absolute gap is
/// negligible outright.
pub fn grad_close(analytic: f64, numeric: f64, rel_tol: f64) -> bool {
    let diff = libm::fabs(analytic - numeric);
    let scale = libm::fabs(analytic).max(libm::fabs(numeric));
    diff <= rel_tol * scale || diff <= 1e-8
}
