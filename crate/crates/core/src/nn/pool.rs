//! 2×2 stride-2 max pooling and global average pooling.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Flat input index of each output's maximum.
#[derive(Clone, Debug)]
pub struct PoolCache {
    argmax: Vec<usize>,
    input_shape: Vec<usize>,
}

pub fn pooled_size(h: usize, w: usize) -> Result<(usize, usize)> {
    if h < 2 || w < 2 {
        return Err(Error::Shape(format!("maxpool2x2 on {h}x{w} input")));
    }
    Ok((h / 2, w / 2))
}

/// Odd trailing rows/columns are dropped. Ties go to the lowest flat index.
pub fn maxpool2x2_forward(x: &Tensor) -> Result<(Tensor, PoolCache)> {
    let (b, c, h, w) = x.dims4()?;
    let (oh, ow) = pooled_size(h, w)?;
    let mut out = Vec::with_capacity(b * c * oh * ow);
    let mut argmax = Vec::with_capacity(out.capacity());
    let d = x.data();
    for plane in 0..b * c {
        let base = plane * h * w;
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best = base + 2 * oy * w + 2 * ox;
                for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                    let i = base + (2 * oy + dy) * w + 2 * ox + dx;
                    if d[i] > d[best] {
                        best = i;
                    }
                }
                out.push(d[best]);
                argmax.push(best);
            }
        }
    }
    Ok((
        Tensor::new(vec![b, c, oh, ow], out)?,
        PoolCache {
            argmax,
            input_shape: x.shape().to_vec(),
        },
    ))
}

pub fn maxpool2x2_backward(grad_out: &Tensor, cache: &PoolCache) -> Result<Tensor> {
    if grad_out.len() != cache.argmax.len() {
        return Err(Error::Shape("maxpool backward: gradient size differs from forward".into()));
    }
    let mut g = Tensor::zeros(&cache.input_shape);
    for (&src, &gv) in cache.argmax.iter().zip(grad_out.data()) {
        g.data_mut()[src] += gv;
    }
    Ok(g)
}

/// `[B, C, H, W] → [B, C]`.
pub fn global_avg_pool(x: &Tensor) -> Result<Tensor> {
    let (b, c, h, w) = x.dims4()?;
    let hw = h * w;
    let out = x
        .data()
        .chunks_exact(hw)
        .map(|p| p.iter().sum::<f64>() / hw as f64)
        .collect();
    Tensor::new(vec![b, c], out)
}

pub fn global_avg_pool_backward(grad_out: &Tensor, input_shape: &[usize]) -> Result<Tensor> {
    let hw: usize = input_shape[2..].iter().product();
    if grad_out.len() * hw != input_shape.iter().product::<usize>() {
        return Err(Error::Shape("global average pool backward: size mismatch".into()));
    }
    let mut data = Vec::with_capacity(grad_out.len() * hw);
    for &g in grad_out.data() {
        data.extend(std::iter::repeat_n(g / hw as f64, hw));
    }
    Tensor::new(input_shape.to_vec(), data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testutil::{finite_diff_check, random_tensor};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn picks_the_max_and_routes_gradient_there() {
        let x = Tensor::new(vec![1, 1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let (y, cache) = maxpool2x2_forward(&x).unwrap();
        assert_eq!(y.data(), &[4.0]);
        let g = maxpool2x2_backward(&Tensor::full(&[1, 1, 1, 1], 2.5), &cache).unwrap();
        assert_eq!(g.data(), &[0.0, 0.0, 0.0, 2.5]);
    }

    #[test]
    fn ties_go_to_lowest_index() {
        let x = Tensor::new(vec![1, 1, 2, 2], vec![0.0, 7.0, 7.0, 7.0]).unwrap();
        let (_, cache) = maxpool2x2_forward(&x).unwrap();
        let g = maxpool2x2_backward(&Tensor::full(&[1, 1, 1, 1], 1.0), &cache).unwrap();
        assert_eq!(g.data(), &[0.0, 1.0, 0.0, 0.0]);
    }

    #[test]
    fn odd_sizes_drop_the_remainder() {
        let x = Tensor::from_fn(&[1, 1, 5, 3], |i| i as f64);
        let (y, _) = maxpool2x2_forward(&x).unwrap();
        assert_eq!(y.shape(), &[1, 1, 2, 1]);
        assert_eq!(y.data(), &[4.0, 10.0]);
    }

    #[test]
    fn gap_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = random_tensor(&mut rng, &[2, 3, 4, 5]);
        let probe = random_tensor(&mut rng, &[2, 3]);
        let g = global_avg_pool_backward(&probe, x.shape()).unwrap();
        finite_diff_check(
            &x,
            &g,
            |v| {
                let y = global_avg_pool(v).unwrap();
                y.data().iter().zip(probe.data()).map(|(a, b)| a * b).sum()
            },
            1e-6,
        );
    }
}
