use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{LayerParams, Tensor, TensorError};
use crate::Scalar;

/// A differentiable model with a scalar loss over its convolution layers.
pub trait Model<T: Scalar> {
    type Target;

    fn layers(&self) -> &[LayerParams<T>];

    fn layers_mut(&mut self) -> &mut [LayerParams<T>];

    fn loss(&self, input: &Tensor<T>, target: &Self::Target) -> Result<T, TensorError>;

    /// Adds d(loss)/d(params) into `grads` (one `(kernel, bias)` pair per
    /// layer) without touching the model, and returns the loss.
    fn gradients_into(
        &self,
        input: &Tensor<T>,
        target: &Self::Target,
        grads: &mut [(Tensor<T>, Tensor<T>)],
    ) -> Result<T, TensorError>;

    /// The loss together with a fingerprint of every piecewise-linear branch
    /// taken (rectifier signs, pooling winners). Smooth models return `None`.
    fn loss_with_signature(&self, input: &Tensor<T>, target: &Self::Target) -> Result<(T, Option<u64>), TensorError> {
        Ok((self.loss(input, target)?, None))
    }

    fn empty_gradients(&self) -> Vec<(Tensor<T>, Tensor<T>)> {
        self.layers().iter().map(LayerParams::empty_grads).collect()
    }

    /// Adds d(loss)/d(params) into every layer's accumulators and returns the loss.
    fn accumulate_gradients(&mut self, input: &Tensor<T>, target: &Self::Target) -> Result<T, TensorError> {
        let mut grads = self.empty_gradients();
        let loss = self.gradients_into(input, target, &mut grads)?;
        for (layer, (gk, gb)) in self.layers_mut().iter_mut().zip(&grads) {
            layer.accumulate(gk, gb)?;
        }
        Ok(loss)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_relative_error: f64,
    pub checked: usize,
    /// Probes whose `±epsilon` step changed a rectifier or pooling branch.
    /// Central differences are not meaningful across a kink, so these are
    /// counted but not scored.
    pub kinks: usize,
    /// (layer, is_bias, index) of the worst coordinate.
    pub worst: Option<(usize, bool, usize)>,
}

/// Gradients smaller than this are compared in absolute terms.
const MAGNITUDE_FLOOR: f64 = 1e-6;

/// Compares analytic parameter gradients to central differences.
///
/// At most `probes_per_tensor` coordinates of every kernel and bias are
/// probed (all of them when the tensor is smaller), chosen with `seed`.
pub fn gradcheck<T: Scalar, M: Model<T>>(
    model: &mut M,
    input: &Tensor<T>,
    target: &M::Target,
    epsilon: T,
    probes_per_tensor: usize,
    seed: u64,
) -> Result<GradCheckReport, TensorError> {
    model.layers_mut().iter_mut().for_each(LayerParams::zero_grad);
    model.accumulate_gradients(input, target)?;
    let analytic: Vec<(Tensor<T>, Tensor<T>)> = model
        .layers()
        .iter()
        .map(|l| (l.grad_kernel.clone(), l.grad_bias.clone()))
        .collect();
    model.layers_mut().iter_mut().for_each(LayerParams::zero_grad);

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = GradCheckReport {
        max_relative_error: 0.0,
        checked: 0,
        kinks: 0,
        worst: None,
    };
    let base = model.loss_with_signature(input, target)?.1;
    for layer in 0..analytic.len() {
        for is_bias in [false, true] {
            let len = if is_bias {
                analytic[layer].1.len()
            } else {
                analytic[layer].0.len()
            };
            let picks: Vec<usize> = if len <= probes_per_tensor {
                (0..len).collect()
            } else {
                let mut v = sample(&mut rng, len, probes_per_tensor).into_vec();
                v.sort_unstable();
                v
            };
            for idx in picks {
                let original = *slot(model, layer, is_bias, idx);
                *slot(model, layer, is_bias, idx) = original + epsilon;
                let (plus, sig_plus) = model.loss_with_signature(input, target)?;
                *slot(model, layer, is_bias, idx) = original - epsilon;
                let (minus, sig_minus) = model.loss_with_signature(input, target)?;
                *slot(model, layer, is_bias, idx) = original;
                if sig_plus != base || sig_minus != base {
                    report.kinks += 1;
                    continue;
                }
                let numeric = ((plus - minus) / (epsilon + epsilon)).to_f64_lossy();
                let a = if is_bias {
                    analytic[layer].1.data()[idx]
                } else {
                    analytic[layer].0.data()[idx]
                }
                .to_f64_lossy();
                let denom = a.abs().max(numeric.abs()).max(MAGNITUDE_FLOOR);
                let rel = (a - numeric).abs() / denom;
                report.checked += 1;
                if rel > report.max_relative_error || report.worst.is_none() {
                    report.max_relative_error = rel;
                    report.worst = Some((layer, is_bias, idx));
                }
            }
        }
    }
    Ok(report)
}

fn slot<T: Scalar, M: Model<T>>(model: &mut M, layer: usize, is_bias: bool, idx: usize) -> &mut T {
    let l = &mut model.layers_mut()[layer];
    if is_bias {
        &mut l.bias.data_mut()[idx]
    } else {
        &mut l.kernel.data_mut()[idx]
    }
}
