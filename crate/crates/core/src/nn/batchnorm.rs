//! Per-channel batch normalization over `[B, C, H, W]`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BatchNorm {
    pub gamma: Tensor,
    pub beta: Tensor,
    pub running_mean: Tensor,
    pub running_var: Tensor,
    pub momentum: f64,
    pub eps: f64,
}

#[derive(Clone, Debug)]
pub struct BnCache {
    xhat: Vec<f64>,
    inv_std: Vec<f64>,
    dims: (usize, usize, usize, usize),
}

impl BatchNorm {
    /// γ=1, β=0, running mean 0, running variance 1.
    pub fn new(channels: usize) -> Self {
        BatchNorm {
            gamma: Tensor::full(&[channels], 1.0),
            beta: Tensor::zeros(&[channels]),
            running_mean: Tensor::zeros(&[channels]),
            running_var: Tensor::full(&[channels], 1.0),
            momentum: BN_MOMENTUM,
            eps: BN_EPS,
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.len()
    }

    fn check(&self, x: &Tensor) -> Result<(usize, usize, usize, usize)> {
        let dims = x.dims4()?;
        if dims.1 != self.channels() {
            return Err(Error::Shape(format!(
                "batchnorm over {} channels given input {:?}",
                self.channels(),
                x.shape()
            )));
        }
        Ok(dims)
    }

    /// Normalizes with batch statistics and folds them into the running estimates.
    pub fn forward_train(&mut self, x: &Tensor) -> Result<(Tensor, BnCache)> {
        let (b, c, h, w) = self.check(x)?;
        let hw = h * w;
        let count = (b * hw) as f64;
        let mut out = vec![0.0; x.len()];
        let mut xhat = vec![0.0; x.len()];
        let mut inv_std = vec![0.0; c];
        for ch in 0..c {
            let planes = (0..b).map(|bi| &x.data()[(bi * c + ch) * hw..(bi * c + ch + 1) * hw]);
            let mean = planes.clone().flatten().sum::<f64>() / count;
            let var = planes.flatten().map(|v| (v - mean) * (v - mean)).sum::<f64>() / count;
            let istd = 1.0 / (var + self.eps).sqrt();
            inv_std[ch] = istd;
            let (g, be) = (self.gamma.data()[ch], self.beta.data()[ch]);
            for bi in 0..b {
                let base = (bi * c + ch) * hw;
                for i in base..base + hw {
                    let xh = (x.data()[i] - mean) * istd;
                    xhat[i] = xh;
                    out[i] = g * xh + be;
                }
            }
            let unbiased = if count > 1.0 { var * count / (count - 1.0) } else { var };
            let m = self.momentum;
            let rm = &mut self.running_mean.data_mut()[ch];
            *rm = (1.0 - m) * *rm + m * mean;
            let rv = &mut self.running_var.data_mut()[ch];
            *rv = (1.0 - m) * *rv + m * unbiased;
        }
        Ok((
            Tensor::new(x.shape().to_vec(), out)?,
            BnCache {
                xhat,
                inv_std,
                dims: (b, c, h, w),
            },
        ))
    }

    pub fn forward_eval(&self, x: &Tensor) -> Result<Tensor> {
        let (b, c, h, w) = self.check(x)?;
        let hw = h * w;
        let mut out = x.clone();
        for ch in 0..c {
            let scale = self.gamma.data()[ch] / (self.running_var.data()[ch] + self.eps).sqrt();
            let shift = self.beta.data()[ch] - self.running_mean.data()[ch] * scale;
            for bi in 0..b {
                for v in &mut out.data_mut()[(bi * c + ch) * hw..(bi * c + ch + 1) * hw] {
                    *v = *v * scale + shift;
                }
            }
        }
        Ok(out)
    }

    /// Returns `(grad_input, grad_gamma, grad_beta)` for a train-mode forward.
    pub fn backward(&self, grad_out: &Tensor, cache: &BnCache) -> Result<(Tensor, Tensor, Tensor)> {
        let (b, c, h, w) = cache.dims;
        if grad_out.dims4()? != cache.dims {
            return Err(Error::Shape("batchnorm backward: gradient shape differs from forward".into()));
        }
        let hw = h * w;
        let count = (b * hw) as f64;
        let g = grad_out.data();
        let mut dx = vec![0.0; g.len()];
        let mut dgamma = vec![0.0; c];
        let mut dbeta = vec![0.0; c];
        for ch in 0..c {
            let (mut sum_g, mut sum_gx) = (0.0, 0.0);
            for bi in 0..b {
                let base = (bi * c + ch) * hw;
                for i in base..base + hw {
                    sum_g += g[i];
                    sum_gx += g[i] * cache.xhat[i];
                }
            }
            dgamma[ch] = sum_gx;
            dbeta[ch] = sum_g;
            let k = self.gamma.data()[ch] * cache.inv_std[ch] / count;
            for bi in 0..b {
                let base = (bi * c + ch) * hw;
                for i in base..base + hw {
                    dx[i] = k * (count * g[i] - sum_g - cache.xhat[i] * sum_gx);
                }
            }
        }
        Ok((
            Tensor::new(grad_out.shape().to_vec(), dx)?,
            Tensor::new(vec![c], dgamma)?,
            Tensor::new(vec![c], dbeta)?,
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testutil::{finite_diff_check, random_tensor};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn train_mode_normalizes_each_channel() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let x = random_tensor(&mut rng, &[4, 3, 5, 5]).map(|v| 3.0 * v + 2.0);
        let mut bn = BatchNorm::new(3);
        let (y, _) = bn.forward_train(&x).unwrap();
        for ch in 0..3 {
            let vals: Vec<f64> = (0..4)
                .flat_map(|b| y.data()[(b * 3 + ch) * 25..(b * 3 + ch + 1) * 25].to_vec())
                .collect();
            let mean = vals.iter().sum::<f64>() / vals.len() as f64;
            let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / vals.len() as f64;
            assert!(mean.abs() < 1e-12);
            assert!((var - 1.0).abs() < 1e-3);
        }
    }

    #[test]
    fn eval_before_training_uses_initial_stats() {
        let bn = BatchNorm::new(2);
        let x = Tensor::from_fn(&[1, 2, 2, 2], |i| i as f64);
        let y = bn.forward_eval(&x).unwrap();
        let expect = x.map(|v| v / (1.0 + BN_EPS).sqrt());
        assert!(y.max_abs_diff(&expect) < 1e-15);
    }

    #[test]
    fn running_stats_converge_to_batch_stats() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = random_tensor(&mut rng, &[8, 2, 4, 4]).map(|v| 0.5 * v - 1.0);
        let mut bn = BatchNorm::new(2);
        bn.gamma = Tensor::new(vec![2], vec![1.5, 0.7]).unwrap();
        bn.beta = Tensor::new(vec![2], vec![0.2, -0.3]).unwrap();
        let mut gaps = Vec::new();
        for _ in 0..80 {
            let (train_out, _) = bn.forward_train(&x).unwrap();
            gaps.push(bn.forward_eval(&x).unwrap().max_abs_diff(&train_out));
        }
        assert!(gaps.last().unwrap() < &gaps[0]);
        // residual is the unbiased-vs-biased variance factor only
        assert!(*gaps.last().unwrap() < 0.05, "{gaps:?}");
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let x = random_tensor(&mut rng, &[3, 2, 3, 3]);
        let probe = random_tensor(&mut rng, &[3, 2, 3, 3]);
        let mut bn = BatchNorm::new(2);
        bn.gamma = random_tensor(&mut rng, &[2]);
        bn.beta = random_tensor(&mut rng, &[2]);
        let loss = |x: &Tensor, gamma: &Tensor, beta: &Tensor| {
            let mut b = bn.clone();
            b.gamma = gamma.clone();
            b.beta = beta.clone();
            let (y, _) = b.forward_train(x).unwrap();
            y.data().iter().zip(probe.data()).map(|(a, p)| a * p).sum::<f64>()
        };
        let (_, cache) = bn.clone().forward_train(&x).unwrap();
        let (dx, dg, db) = bn.backward(&probe, &cache).unwrap();
        finite_diff_check(&x, &dx, |v| loss(v, &bn.gamma, &bn.beta), 1e-6);
        finite_diff_check(&bn.gamma, &dg, |v| loss(&x, v, &bn.beta), 1e-6);
        finite_diff_check(&bn.beta, &db, |v| loss(&x, &bn.gamma, v), 1e-6);
    }
}
