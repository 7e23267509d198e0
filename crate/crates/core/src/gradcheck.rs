//! Central finite differences for checking hand-written backward passes.

use crate::tensor::Tensor;

pub const FD_STEP: f64 = 1e-5;

/// Denominator floor for relative errors; below it the comparison is effectively absolute.
pub const REL_FLOOR: f64 = 1e-4;

/// Numerical gradient of a scalar function, one coordinate at a time.
pub fn central_difference(x: &Tensor, f: impl Fn(&Tensor) -> f64, h: f64) -> Tensor {
    let mut probe = x.clone();
    let mut grad = Tensor::zeros(x.shape());
    for i in 0..x.len() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + h;
        let up = f(&probe);
        probe.data_mut()[i] = orig - h;
        let down = f(&probe);
        probe.data_mut()[i] = orig;
        grad.data_mut()[i] = (up - down) / (2.0 * h);
    }
    grad
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

pub fn max_relative_error(analytic: &Tensor, numeric: &Tensor) -> f64 {
    assert_eq!(analytic.shape(), numeric.shape());
    analytic
        .data()
        .iter()
        .zip(numeric.data())
        .map(|(&a, &n)| relative_error(a, n))
        .fold(0.0, f64::max)
}
