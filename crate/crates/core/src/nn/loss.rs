use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Mean softmax cross-entropy over the batch and its gradient `(softmax − onehot)/B`.
pub fn softmax_cross_entropy(logits: &Tensor, labels: &[usize]) -> Result<(f64, Tensor)> {
    let (b, c) = logits.dims2()?;
    if labels.len() != b {
        return Err(Error::Shape(format!("{} labels for a batch of {b}", labels.len())));
    }
    let mut loss = 0.0;
    let mut grad = vec![0.0; b * c];
    for (bi, &label) in labels.iter().enumerate() {
        if label >= c {
            return Err(Error::Label { label, classes: c });
        }
        let row = &logits.data()[bi * c..(bi + 1) * c];
        let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = row.iter().map(|v| (v - m).exp()).sum();
        let log_z = m + sum.ln();
        loss += log_z - row[label];
        for (j, v) in row.iter().enumerate() {
            let p = (v - log_z).exp();
            grad[bi * c + j] = (p - if j == label { 1.0 } else { 0.0 }) / b as f64;
        }
    }
    Ok((loss / b as f64, Tensor::new(vec![b, c], grad)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testutil::{finite_diff_check, random_tensor};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn uniform_logits_give_ln_c() {
        let (loss, _) = softmax_cross_entropy(&Tensor::zeros(&[2, 7]), &[0, 3]).unwrap();
        assert!((loss - 7f64.ln()).abs() < 1e-12);
        assert!((loss - 1.9459).abs() < 1e-4);
    }

    #[test]
    fn saturated_true_class_gives_zero_loss() {
        let mut logits = Tensor::zeros(&[1, 7]);
        logits.data_mut()[2] = 1000.0;
        let (loss, grad) = softmax_cross_entropy(&logits, &[2]).unwrap();
        assert!(loss.abs() < 1e-12);
        assert!(grad.is_finite());
    }

    #[test]
    fn rejects_out_of_range_label() {
        assert!(matches!(
            softmax_cross_entropy(&Tensor::zeros(&[1, 3]), &[3]),
            Err(Error::Label { label: 3, classes: 3 })
        ));
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let logits = random_tensor(&mut rng, &[4, 7]);
        let labels = [0, 6, 3, 3];
        let (_, g) = softmax_cross_entropy(&logits, &labels).unwrap();
        finite_diff_check(&logits, &g, |l| softmax_cross_entropy(l, &labels).unwrap().0, 1e-6);
    }
}
