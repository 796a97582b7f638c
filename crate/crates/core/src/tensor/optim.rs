use super::LayerParams;
use crate::Scalar;

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum SgdOutcome {
    Applied,
    /// A gradient was NaN or infinite; no parameter changed.
    SkippedNonFinite { layer: usize },
}

/// Plain SGD: `p <- p - lr * grad`, then zeroes every accumulator.
pub fn sgd_step<T: Scalar>(layers: &mut [LayerParams<T>], learning_rate: T) -> SgdOutcome {
    let bad = layers
        .iter()
        .position(|l| !(l.grad_kernel.all_finite() && l.grad_bias.all_finite()));
    if let Some(layer) = bad {
        layers.iter_mut().for_each(LayerParams::zero_grad);
        return SgdOutcome::SkippedNonFinite { layer };
    }
    for l in layers.iter_mut() {
        for (p, &g) in l.kernel.data_mut().iter_mut().zip(l.grad_kernel.data()) {
            *p -= learning_rate * g;
        }
        for (p, &g) in l.bias.data_mut().iter_mut().zip(l.grad_bias.data()) {
            *p -= learning_rate * g;
        }
        l.zero_grad();
    }
    SgdOutcome::Applied
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    fn scalar_layer(p: f64, g: f64) -> LayerParams<f64> {
        let mut l = LayerParams::new(
            Tensor::from_vec(&[1, 1, 1, 1], vec![p]).unwrap(),
            Tensor::zeros(&[1]),
            0,
            1,
        )
        .unwrap();
        l.grad_kernel.data_mut()[0] = g;
        l
    }

    #[test]
    fn zero_rate_keeps_parameters() {
        let mut layers = vec![scalar_layer(1.0, 2.0)];
        assert_eq!(sgd_step(&mut layers, 0.0), SgdOutcome::Applied);
        assert_eq!(layers[0].kernel.data()[0], 1.0);
        assert_eq!(layers[0].grad_kernel.data()[0], 0.0);
    }

    #[test]
    fn single_scalar_step() {
        let mut layers = vec![scalar_layer(1.0, 2.0)];
        sgd_step(&mut layers, 0.1);
        assert!((layers[0].kernel.data()[0] - 0.8).abs() < 1e-15);
    }

    #[test]
    fn quadratic_loss_decreases_monotonically() {
        // loss(p) = (p - 3)^2, grad = 2 (p - 3)
        let loss = |p: f64| (p - 3.0).powi(2);
        let mut layers = vec![scalar_layer(0.0, 0.0)];
        let mut prev = loss(0.0);
        for _ in 0..2 {
            let p = layers[0].kernel.data()[0];
            layers[0].grad_kernel.data_mut()[0] = 2.0 * (p - 3.0);
            sgd_step(&mut layers, 0.1);
            let now = loss(layers[0].kernel.data()[0]);
            assert!(now < prev);
            prev = now;
        }
        // closed form: p_k = 3 (1 - 0.8^k)
        assert!((layers[0].kernel.data()[0] - 3.0 * (1.0 - 0.64)).abs() < 1e-12);
    }

    #[test]
    fn non_finite_gradient_skips_step() {
        let mut layers = vec![scalar_layer(1.0, 0.5), scalar_layer(2.0, f64::NAN)];
        assert_eq!(sgd_step(&mut layers, 0.1), SgdOutcome::SkippedNonFinite { layer: 1 });
        assert_eq!(layers[0].kernel.data()[0], 1.0);
        assert_eq!(layers[1].kernel.data()[0], 2.0);
        assert!(layers[1].grad_kernel.data()[0] == 0.0);
    }
}
