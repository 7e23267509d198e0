use crate::tensor::Tensor;

pub fn relu(x: &Tensor) -> Tensor {
    x.map(|v| v.max(0.0))
}

/// Gradient of ReLU given its forward *output*; zero where the output is zero.
pub fn relu_backward(grad_out: &Tensor, output: &Tensor) -> Tensor {
    let mut g = grad_out.clone();
    for (gv, &o) in g.data_mut().iter_mut().zip(output.data()) {
        if o <= 0.0 {
            *gv = 0.0;
        }
    }
    g
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relu_values() {
        let x = Tensor::new(vec![2], vec![-2.5, 1.5]).unwrap();
        assert_eq!(relu(&x).data(), &[0.0, 1.5]);
        let g = relu_backward(&Tensor::full(&[2], 1.0), &relu(&x));
        assert_eq!(g.data(), &[0.0, 1.0]);
    }
}
