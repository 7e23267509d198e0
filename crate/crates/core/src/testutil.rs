use rand::Rng;

use crate::gradcheck::{central_difference, max_relative_error, FD_STEP};
use crate::nn::init::normal_tensor;
use crate::tensor::Tensor;

pub fn random_tensor(rng: &mut impl Rng, shape: &[usize]) -> Tensor {
    normal_tensor(rng, shape, 1.0)
}

pub fn finite_diff_check(x: &Tensor, analytic: &Tensor, f: impl Fn(&Tensor) -> f64, tol: f64) {
    let numeric = central_difference(x, f, FD_STEP);
    let err = max_relative_error(analytic, &numeric);
    assert!(err <= tol, "relative error {err:e} > {tol:e}");
}
