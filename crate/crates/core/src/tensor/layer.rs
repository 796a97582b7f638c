use rand::Rng;

use super::{Tensor, TensorError};
use crate::Scalar;

/// Convolution kernel, bias and their gradient accumulators.
///
/// `padding` is stored explicitly; [`LayerParams::glorot`] uses same-padding
/// (`kernel / 2`) so stride-1 layers keep the spatial size.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerParams<T> {
    pub kernel: Tensor<T>,
    pub bias: Tensor<T>,
    pub grad_kernel: Tensor<T>,
    pub grad_bias: Tensor<T>,
    pub padding: usize,
    pub stride: usize,
}

impl<T: Scalar> LayerParams<T> {
    pub fn new(kernel: Tensor<T>, bias: Tensor<T>, padding: usize, stride: usize) -> Result<Self, TensorError> {
        if kernel.ndim() != 4 || bias.ndim() != 1 || bias.shape()[0] != kernel.shape()[0] {
            return Err(TensorError::ShapeMismatch {
                context: "layer params (kernel O x C x K x K, bias O)",
                left: kernel.shape().to_vec(),
                right: bias.shape().to_vec(),
            });
        }
        if stride == 0 {
            return Err(TensorError::Invalid("stride must be at least 1".into()));
        }
        let grad_kernel = Tensor::zeros(kernel.shape());
        let grad_bias = Tensor::zeros(bias.shape());
        Ok(LayerParams {
            kernel,
            bias,
            grad_kernel,
            grad_bias,
            padding,
            stride,
        })
    }

    pub fn zeros(out_features: usize, in_features: usize, size: usize) -> Self {
        Self::new(
            Tensor::zeros(&[out_features, in_features, size, size]),
            Tensor::zeros(&[out_features]),
            size / 2,
            1,
        )
        .expect("well-formed shapes")
    }

    /// Uniform init in `±sqrt(6 / (fan_in + fan_out))`, zero bias.
    pub fn glorot<R: Rng + ?Sized>(out_features: usize, in_features: usize, size: usize, rng: &mut R) -> Self {
        Self::glorot_with_gain(out_features, in_features, size, 1.0, rng)
    }

    /// Glorot bound scaled by `gain`; `sqrt(2)` keeps activation variance
    /// steady through rectifiers.
    pub fn glorot_with_gain<R: Rng + ?Sized>(
        out_features: usize,
        in_features: usize,
        size: usize,
        gain: f64,
        rng: &mut R,
    ) -> Self {
        let fan_in = (in_features * size * size) as f64;
        let fan_out = (out_features * size * size) as f64;
        let limit = gain * (6.0 / (fan_in + fan_out)).sqrt();
        let kernel = Tensor::from_fn(&[out_features, in_features, size, size], |_| {
            T::of(rng.gen_range(-limit..=limit))
        });
        Self::new(kernel, Tensor::zeros(&[out_features]), size / 2, 1).expect("well-formed shapes")
    }

    pub fn out_features(&self) -> usize {
        self.kernel.shape()[0]
    }

    pub fn in_features(&self) -> usize {
        self.kernel.shape()[1]
    }

    pub fn kernel_size(&self) -> usize {
        self.kernel.shape()[2]
    }

    pub fn parameter_count(&self) -> usize {
        self.kernel.len() + self.bias.len()
    }

    pub fn zero_grad(&mut self) {
        self.grad_kernel.fill(T::zero());
        self.grad_bias.fill(T::zero());
    }

    /// Fresh zeroed accumulators with this layer's shapes.
    pub fn empty_grads(&self) -> (Tensor<T>, Tensor<T>) {
        (Tensor::zeros(self.kernel.shape()), Tensor::zeros(self.bias.shape()))
    }

    /// Adds externally accumulated gradients into this layer's accumulators.
    pub fn accumulate(&mut self, grad_kernel: &Tensor<T>, grad_bias: &Tensor<T>) -> Result<(), TensorError> {
        self.grad_kernel.add_assign(grad_kernel)?;
        self.grad_bias.add_assign(grad_bias)
    }
}
