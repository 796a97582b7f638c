//! Straight-line layer stacks with a recorded forward trace for backprop.

use crate::tensor::{
    conv2d, conv2d_backward_into, maxpool, maxpool_backward, relu, relu_backward, LayerParams, Tensor,
    TensorError,
};
use std::hash::{DefaultHasher, Hash, Hasher};

use crate::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) enum Stage {
    Conv(usize),
    Relu,
    Pool { window: usize, stride: usize },
}

pub(crate) struct Trace<T> {
    /// Input of every stage, in order.
    inputs: Vec<Tensor<T>>,
    argmax: Vec<Vec<usize>>,
}

pub(crate) fn trunk_stages(blocks: usize, convs_per_block: usize, window: usize, stride: usize) -> Vec<Stage> {
    let mut stages = Vec::new();
    let mut layer = 0;
    for _ in 0..blocks {
        for _ in 0..convs_per_block {
            stages.push(Stage::Conv(layer));
            stages.push(Stage::Relu);
            layer += 1;
        }
        stages.push(Stage::Pool { window, stride });
    }
    stages
}

pub(crate) fn forward<T: Scalar>(
    layers: &[LayerParams<T>],
    stages: &[Stage],
    input: &Tensor<T>,
    keep_trace: bool,
) -> Result<(Tensor<T>, Option<Trace<T>>), TensorError> {
    let mut trace = keep_trace.then(|| Trace {
        inputs: Vec::with_capacity(stages.len()),
        argmax: Vec::new(),
    });
    let mut x = input.clone();
    for stage in stages {
        let next = match *stage {
            Stage::Conv(i) => conv2d(&x, &layers[i])?,
            Stage::Relu => relu(&x),
            Stage::Pool { window, stride } => {
                let p = maxpool(&x, window, stride)?;
                if let Some(t) = trace.as_mut() {
                    t.argmax.push(p.argmax);
                }
                p.output
            }
        };
        if let Some(t) = trace.as_mut() {
            t.inputs.push(x);
        }
        x = next;
    }
    Ok((x, trace))
}

/// Backpropagates `grad` (d loss / d output) through the stack, adding
/// parameter gradients into `grads`. Returns the input gradient when asked.
pub(crate) fn backward<T: Scalar>(
    layers: &[LayerParams<T>],
    stages: &[Stage],
    trace: &Trace<T>,
    mut grad: Tensor<T>,
    grads: &mut [(Tensor<T>, Tensor<T>)],
    need_input_grad: bool,
) -> Result<Option<Tensor<T>>, TensorError> {
    let mut pool_idx = trace.argmax.len();
    for (si, stage) in stages.iter().enumerate().rev() {
        let input = &trace.inputs[si];
        let wants_grad = si > 0 || need_input_grad;
        grad = match *stage {
            Stage::Conv(i) => {
                let (gk, gb) = &mut grads[i];
                match conv2d_backward_into(input, &layers[i], &grad, gk, gb, wants_grad)? {
                    Some(g) => g,
                    None => return Ok(None),
                }
            }
            Stage::Relu => relu_backward(input, &grad)?,
            Stage::Pool { .. } => {
                pool_idx -= 1;
                maxpool_backward(&grad, &trace.argmax[pool_idx], input.shape())?
            }
        };
    }
    Ok(Some(grad))
}

/// Forward pass that also fingerprints the branch taken at every rectifier
/// and pooling window.
pub(crate) fn forward_with_signature<T: Scalar>(
    layers: &[LayerParams<T>],
    stages: &[Stage],
    input: &Tensor<T>,
) -> Result<(Tensor<T>, u64), TensorError> {
    let (out, trace) = forward(layers, stages, input, true)?;
    let trace = trace.expect("trace requested");
    let mut h = DefaultHasher::new();
    for (stage, x) in stages.iter().zip(&trace.inputs) {
        if *stage == Stage::Relu {
            for chunk in x.data().chunks(64) {
                let bits = chunk.iter().enumerate().fold(0u64, |acc, (i, &v)| acc | ((v > T::zero()) as u64) << i);
                h.write_u64(bits);
            }
        }
    }
    trace.argmax.hash(&mut h);
    Ok((out, h.finish()))
}

/// Maps an RGB image to a `1 x 3 x H x W` tensor scaled to `[-1, 1]`.
pub fn image_tensor<T: Scalar>(image: &crate::RgbImage) -> Tensor<T> {
    let (w, h) = image.dims();
    let plane = w * h;
    let mut data = vec![T::zero(); 3 * plane];
    for (i, px) in image.data().chunks_exact(3).enumerate() {
        for c in 0..3 {
            data[c * plane + i] = T::of(px[c] as f64 / 127.5 - 1.0);
        }
    }
    Tensor::from_vec(&[1, 3, h, w], data).expect("sized from image")
}
