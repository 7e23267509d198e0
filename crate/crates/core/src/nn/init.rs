use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::tensor::Tensor;

pub fn normal_tensor(rng: &mut impl Rng, shape: &[usize], std: f64) -> Tensor {
    Tensor::from_fn(shape, |_| {
        let z: f64 = StandardNormal.sample(rng);
        z * std
    })
}

/// Kaiming-normal conv kernel `[out, in, k, k]`, std = √(2 / fan_in).
pub fn kaiming_kernel(rng: &mut impl Rng, out_ch: usize, in_ch: usize, k: usize) -> Tensor {
    let fan_in = (in_ch * k * k) as f64;
    normal_tensor(rng, &[out_ch, in_ch, k, k], (2.0 / fan_in).sqrt())
}
