//! Same-padded stride-1 2-D cross-correlation (no bias).
//!
//! Lowered to a matrix product: the input batch is unrolled into a column
//! matrix of shape `[in_ch·k·k, B·H·W]`, multiplied by the kernel viewed as
//! `[out_ch, in_ch·k·k]`. The column matrix is kept as the backward cache.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Everything conv2d_backward needs from the forward pass.
#[derive(Clone, Debug)]
pub struct ConvCache {
    input_dims: (usize, usize, usize, usize),
    kernel_size: usize,
    cols: Vec<f64>,
}

/// `C[m×n] = A[m×k]·B[k×n] (+ C if accumulate)`, all with explicit strides.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    (rsa, csa): (isize, isize),
    b: &[f64],
    (rsb, csb): (isize, isize),
    c: &mut [f64],
    accumulate: bool,
) {
    if m == 0 || n == 0 {
        return;
    }
    debug_assert!(c.len() >= m * n);
    let beta = if accumulate { 1.0 } else { 0.0 };
    // SAFETY: callers pass slices sized for the given dimensions/strides; c is
    // row-major contiguous [m, n].
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

fn check_shapes(input: &Tensor, kernel: &Tensor) -> Result<(usize, usize, usize, usize, usize, usize)> {
    let (b, cin, h, w) = input.dims4()?;
    let (cout, kin, kh, kw) = kernel.dims4()?;
    if kin != cin {
        return Err(Error::Shape(format!(
            "conv2d: input has {cin} channels but kernel expects {kin}"
        )));
    }
    if kh != kw || kh % 2 == 0 {
        return Err(Error::Shape(format!(
            "conv2d: kernel must be square and odd, got {kh}x{kw}"
        )));
    }
    Ok((b, cin, h, w, cout, kh))
}

fn im2col(input: &[f64], (b, cin, h, w): (usize, usize, usize, usize), k: usize) -> Vec<f64> {
    let pad = (k / 2) as isize;
    let hw = h * w;
    let n = b * hw;
    let mut cols = vec![0.0; cin * k * k * n];
    for ci in 0..cin {
        for ky in 0..k {
            for kx in 0..k {
                let row = (ci * k + ky) * k + kx;
                let dst_row = &mut cols[row * n..(row + 1) * n];
                let dx = kx as isize - pad;
                let x0 = (-dx).max(0) as usize;
                let x1 = (w as isize - dx).min(w as isize).max(0) as usize;
                if x0 >= x1 {
                    continue;
                }
                for bi in 0..b {
                    let src_plane = &input[(bi * cin + ci) * hw..(bi * cin + ci + 1) * hw];
                    for y in 0..h {
                        let sy = y as isize + ky as isize - pad;
                        if sy < 0 || sy >= h as isize {
                            continue;
                        }
                        let src = &src_plane[sy as usize * w..(sy as usize + 1) * w];
                        let dst = &mut dst_row[bi * hw + y * w..bi * hw + (y + 1) * w];
                        let sx0 = (x0 as isize + dx) as usize;
                        dst[x0..x1].copy_from_slice(&src[sx0..sx0 + (x1 - x0)]);
                    }
                }
            }
        }
    }
    cols
}

fn col2im(cols: &[f64], (b, cin, h, w): (usize, usize, usize, usize), k: usize) -> Vec<f64> {
    let pad = (k / 2) as isize;
    let hw = h * w;
    let n = b * hw;
    let mut out = vec![0.0; b * cin * hw];
    for ci in 0..cin {
        for ky in 0..k {
            for kx in 0..k {
                let row = (ci * k + ky) * k + kx;
                let src_row = &cols[row * n..(row + 1) * n];
                let dx = kx as isize - pad;
                let x0 = (-dx).max(0) as usize;
                let x1 = (w as isize - dx).min(w as isize).max(0) as usize;
                if x0 >= x1 {
                    continue;
                }
                for bi in 0..b {
                    let plane = &mut out[(bi * cin + ci) * hw..(bi * cin + ci + 1) * hw];
                    for y in 0..h {
                        let sy = y as isize + ky as isize - pad;
                        if sy < 0 || sy >= h as isize {
                            continue;
                        }
                        let src = &src_row[bi * hw + y * w + x0..bi * hw + y * w + x1];
                        let sx0 = (x0 as isize + dx) as usize;
                        let dst = &mut plane[sy as usize * w + sx0..sy as usize * w + sx0 + (x1 - x0)];
                        for (d, s) in dst.iter_mut().zip(src) {
                            *d += s;
                        }
                    }
                }
            }
        }
    }
    out
}

/// Forward convolution with `(k−1)/2` zero padding on every side.
pub fn conv2d_forward(input: &Tensor, kernel: &Tensor) -> Result<(Tensor, ConvCache)> {
    let (b, cin, h, w, cout, k) = check_shapes(input, kernel)?;
    let hw = h * w;
    let n = b * hw;
    let r = cin * k * k;
    let cols = im2col(input.data(), (b, cin, h, w), k);
    let mut out_mat = vec![0.0; cout * n];
    gemm(
        cout,
        r,
        n,
        kernel.data(),
        (r as isize, 1),
        &cols,
        (n as isize, 1),
        &mut out_mat,
        false,
    );
    // [cout, b, hw] -> [b, cout, hw]
    let mut out = vec![0.0; b * cout * hw];
    for co in 0..cout {
        for bi in 0..b {
            out[(bi * cout + co) * hw..(bi * cout + co + 1) * hw]
                .copy_from_slice(&out_mat[co * n + bi * hw..co * n + (bi + 1) * hw]);
        }
    }
    let cache = ConvCache {
        input_dims: (b, cin, h, w),
        kernel_size: k,
        cols,
    };
    Ok((Tensor::new(vec![b, cout, h, w], out)?, cache))
}

/// Returns `(grad_input, grad_kernel)`.
pub fn conv2d_backward(grad_out: &Tensor, cache: &ConvCache, kernel: &Tensor) -> Result<(Tensor, Tensor)> {
    let (b, cin, h, w) = cache.input_dims;
    let k = cache.kernel_size;
    let (gb, cout, gh, gw) = grad_out.dims4()?;
    let (kc, kin, kh, _) = kernel.dims4()?;
    if (gb, gh, gw) != (b, h, w) || kc != cout || kin != cin || kh != k {
        return Err(Error::Shape(format!(
            "conv2d_backward: grad {:?} / kernel {:?} inconsistent with cached input {:?}",
            grad_out.shape(),
            kernel.shape(),
            cache.input_dims
        )));
    }
    let hw = h * w;
    let n = b * hw;
    let r = cin * k * k;
    let mut g_mat = vec![0.0; cout * n];
    for co in 0..cout {
        for bi in 0..b {
            g_mat[co * n + bi * hw..co * n + (bi + 1) * hw]
                .copy_from_slice(&grad_out.data()[(bi * cout + co) * hw..(bi * cout + co + 1) * hw]);
        }
    }
    // grad_kernel[cout, r] = G[cout, n] · colsᵀ[n, r]
    let mut grad_kernel = vec![0.0; cout * r];
    gemm(
        cout,
        n,
        r,
        &g_mat,
        (n as isize, 1),
        &cache.cols,
        (1, n as isize),
        &mut grad_kernel,
        false,
    );
    // grad_cols[r, n] = Kᵀ[r, cout] · G[cout, n]
    let mut grad_cols = vec![0.0; r * n];
    gemm(
        r,
        cout,
        n,
        kernel.data(),
        (1, r as isize),
        &g_mat,
        (n as isize, 1),
        &mut grad_cols,
        false,
    );
    let grad_input = col2im(&grad_cols, (b, cin, h, w), k);
    Ok((
        Tensor::new(vec![b, cin, h, w], grad_input)?,
        Tensor::new(kernel.shape().to_vec(), grad_kernel)?,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testutil::{finite_diff_check, random_tensor};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Six nested loops, straight from the definition.
    fn naive_conv(input: &Tensor, kernel: &Tensor) -> Tensor {
        let (b, cin, h, w) = input.dims4().unwrap();
        let (cout, _, k, _) = kernel.dims4().unwrap();
        let p = (k / 2) as isize;
        let mut out = Tensor::zeros(&[b, cout, h, w]);
        for bi in 0..b {
            for co in 0..cout {
                for y in 0..h {
                    for x in 0..w {
                        let mut acc = 0.0;
                        for ci in 0..cin {
                            for ky in 0..k {
                                for kx in 0..k {
                                    let sy = y as isize + ky as isize - p;
                                    let sx = x as isize + kx as isize - p;
                                    if sy < 0 || sx < 0 || sy >= h as isize || sx >= w as isize {
                                        continue;
                                    }
                                    acc += kernel.data()[((co * cin + ci) * k + ky) * k + kx]
                                        * input.data()[((bi * cin + ci) * h + sy as usize) * w + sx as usize];
                                }
                            }
                        }
                        out.data_mut()[((bi * cout + co) * h + y) * w + x] = acc;
                    }
                }
            }
        }
        out
    }

    #[test]
    fn zero_kernel_gives_zero_output() {
        let input = Tensor::full(&[1, 1, 3, 3], 1.0);
        let kernel = Tensor::zeros(&[1, 1, 3, 3]);
        let (out, _) = conv2d_forward(&input, &kernel).unwrap();
        assert!(out.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn delta_kernel_is_identity() {
        let input = Tensor::from_fn(&[1, 1, 3, 3], |i| i as f64 * 0.5 - 1.0);
        let mut kernel = Tensor::zeros(&[1, 1, 3, 3]);
        kernel.data_mut()[4] = 1.0;
        let (out, cache) = conv2d_forward(&input, &kernel).unwrap();
        assert_eq!(out, input);

        let g = Tensor::from_fn(&[1, 1, 3, 3], |i| (i * i) as f64);
        let (gi, _) = conv2d_backward(&g, &cache, &kernel).unwrap();
        assert_eq!(gi, g);
    }

    #[test]
    fn matches_naive_loops() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for k in [1, 3, 5] {
            let input = random_tensor(&mut rng, &[2, 3, 8, 8]);
            let kernel = random_tensor(&mut rng, &[4, 3, k, k]);
            let (fast, _) = conv2d_forward(&input, &kernel).unwrap();
            let slow = naive_conv(&input, &kernel);
            assert!(fast.max_abs_diff(&slow) <= 1e-12, "k={k}");
        }
    }

    #[test]
    fn rejects_channel_mismatch() {
        let input = Tensor::zeros(&[1, 2, 4, 4]);
        let kernel = Tensor::zeros(&[1, 3, 3, 3]);
        let err = conv2d_forward(&input, &kernel).unwrap_err();
        assert!(err.to_string().contains("2 channels"), "{err}");
    }

    #[test]
    fn zero_grad_gives_zero_grads() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let input = random_tensor(&mut rng, &[1, 2, 5, 5]);
        let kernel = random_tensor(&mut rng, &[3, 2, 3, 3]);
        let (_, cache) = conv2d_forward(&input, &kernel).unwrap();
        let (gi, gk) = conv2d_backward(&Tensor::zeros(&[1, 3, 5, 5]), &cache, &kernel).unwrap();
        assert!(gi.data().iter().chain(gk.data()).all(|&v| v == 0.0));
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for k in [3, 5] {
            let input = random_tensor(&mut rng, &[2, 2, 5, 6]);
            let kernel = random_tensor(&mut rng, &[3, 2, k, k]);
            let probe = random_tensor(&mut rng, &[2, 3, 5, 6]);
            let loss = |x: &Tensor, kr: &Tensor| {
                let (o, _) = conv2d_forward(x, kr).unwrap();
                o.data().iter().zip(probe.data()).map(|(a, b)| a * b).sum::<f64>()
            };
            let (_, cache) = conv2d_forward(&input, &kernel).unwrap();
            let (gi, gk) = conv2d_backward(&probe, &cache, &kernel).unwrap();
            finite_diff_check(&input, &gi, |x| loss(x, &kernel), 1e-6);
            finite_diff_check(&kernel, &gk, |kr| loss(&input, kr), 1e-6);
        }
    }
}
