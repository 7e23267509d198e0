use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Fully-connected layer `y = x·Wᵀ + b` with `W: [out, in]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Linear {
    pub weight: Tensor,
    pub bias: Tensor,
}

impl Linear {
    pub fn in_features(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn out_features(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let (b, n_in) = x.dims2()?;
        let (n_out, w_in) = self.weight.dims2()?;
        if n_in != w_in || self.bias.len() != n_out {
            return Err(Error::Shape(format!(
                "linear {:?} applied to {:?}",
                self.weight.shape(),
                x.shape()
            )));
        }
        let mut out = vec![0.0; b * n_out];
        for bi in 0..b {
            let xr = &x.data()[bi * n_in..(bi + 1) * n_in];
            for o in 0..n_out {
                let wr = &self.weight.data()[o * n_in..(o + 1) * n_in];
                out[bi * n_out + o] =
                    self.bias.data()[o] + wr.iter().zip(xr).map(|(a, b)| a * b).sum::<f64>();
            }
        }
        Tensor::new(vec![b, n_out], out)
    }

    /// Returns `(grad_input, grad_weight, grad_bias)`.
    pub fn backward(&self, x: &Tensor, grad_out: &Tensor) -> Result<(Tensor, Tensor, Tensor)> {
        let (b, n_in) = x.dims2()?;
        let (gb, n_out) = grad_out.dims2()?;
        if gb != b || n_out != self.out_features() {
            return Err(Error::Shape("linear backward: gradient shape mismatch".into()));
        }
        let mut gx = vec![0.0; b * n_in];
        let mut gw = vec![0.0; n_out * n_in];
        let mut gbias = vec![0.0; n_out];
        for bi in 0..b {
            let xr = &x.data()[bi * n_in..(bi + 1) * n_in];
            for o in 0..n_out {
                let g = grad_out.data()[bi * n_out + o];
                gbias[o] += g;
                let wr = &self.weight.data()[o * n_in..(o + 1) * n_in];
                for j in 0..n_in {
                    gw[o * n_in + j] += g * xr[j];
                    gx[bi * n_in + j] += g * wr[j];
                }
            }
        }
        Ok((
            Tensor::new(vec![b, n_in], gx)?,
            Tensor::new(vec![n_out, n_in], gw)?,
            Tensor::new(vec![n_out], gbias)?,
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
    fn gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let lin = Linear {
            weight: random_tensor(&mut rng, &[5, 10]),
            bias: random_tensor(&mut rng, &[5]),
        };
        let x = random_tensor(&mut rng, &[3, 10]);
        let probe = random_tensor(&mut rng, &[3, 5]);
        let dot = |y: Tensor| y.data().iter().zip(probe.data()).map(|(a, b)| a * b).sum::<f64>();
        let (gx, gw, gb) = lin.backward(&x, &probe).unwrap();
        finite_diff_check(&x, &gx, |v| dot(lin.forward(v).unwrap()), 1e-6);
        finite_diff_check(&lin.weight, &gw, |v| {
            let l = Linear { weight: v.clone(), bias: lin.bias.clone() };
            dot(l.forward(&x).unwrap())
        }, 1e-6);
        finite_diff_check(&lin.bias, &gb, |v| {
            let l = Linear { weight: lin.weight.clone(), bias: v.clone() };
            dot(l.forward(&x).unwrap())
        }, 1e-6);
    }
}
