use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::maps::{class_scores, msroi_map, upsample_map, ClassScores, MapMode, SaliencyMap};
use super::stack::{self, image_tensor, Stage};
use super::train::Classifier;
use super::spec::RELU_GAIN;
use super::{MsroiError, NetworkSpec};
use crate::tensor::{conv2d, sigmoid, Checkpoint, CheckpointKind, LayerParams, Model, Tensor, TensorError};
use crate::{RgbImage, Scalar};

/// Shared convolutional trunk followed by a per-category linear head.
#[derive(Clone, Debug, PartialEq)]
pub struct MsroiNet<T> {
    spec: NetworkSpec,
    /// Trunk convolutions in order, head last.
    layers: Vec<LayerParams<T>>,
    stages: Vec<Stage>,
}

/// Runs the per-category head over the trunk output and views the result as
/// `(C, D, h, w)`.
pub fn head_forward<T: Scalar>(
    trunk_output: &Tensor<T>,
    head: &LayerParams<T>,
    categories: usize,
) -> Result<Tensor<T>, MsroiError> {
    if trunk_output.ndim() != 4 || trunk_output.shape()[0] != 1 {
        return Err(MsroiError::Shape(format!(
            "trunk output must be 1 x F x h x w, got {:?}",
            trunk_output.shape()
        )));
    }
    let out = head.out_features();
    if categories == 0 || out % categories != 0 {
        return Err(MsroiError::Shape(format!(
            "head has {out} output maps, not a multiple of {categories} categories"
        )));
    }
    let y = conv2d(trunk_output, head)?;
    let (h, w) = (y.shape()[2], y.shape()[3]);
    Ok(y.reshape(&[categories, out / categories, h, w])?)
}

/// Numerically stable `ln(1 + e^z)`.
fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

/// Multi-label cross entropy of independent sigmoids over class scores.
pub fn multilabel_loss<T: Scalar>(scores: &ClassScores<T>, labels: &[bool]) -> T {
    scores
        .values()
        .iter()
        .zip(labels)
        .map(|(&z, &y)| {
            let z = z.to_f64_lossy();
            T::of(softplus(z) - if y { z } else { 0.0 })
        })
        .sum()
}

/// Per-category likelihood `P(c) = 1 / (1 + e^{-Z[c]})`.
pub fn sigmoid_likelihood<T: Scalar>(scores: &ClassScores<T>) -> Vec<T> {
    scores.values().iter().map(|&z| sigmoid(z)).collect()
}

impl<T: Scalar> MsroiNet<T> {
    pub fn new(spec: NetworkSpec, seed: u64) -> Result<Self, MsroiError> {
        spec.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut layers = Vec::new();
        let mut in_f = spec.input_channels;
        for &f in &spec.block_features {
            for _ in 0..spec.convs_per_block {
                layers.push(LayerParams::glorot_with_gain(f, in_f, spec.kernel, RELU_GAIN, &mut rng));
                in_f = f;
            }
        }
        layers.push(LayerParams::glorot(
            spec.categories * spec.head_features,
            in_f,
            spec.head_kernel,
            &mut rng,
        ));
        Ok(Self::assemble(spec, layers))
    }

    fn assemble(spec: NetworkSpec, layers: Vec<LayerParams<T>>) -> Self {
        let mut stages = stack::trunk_stages(spec.blocks(), spec.convs_per_block, spec.pool_window, spec.pool_stride);
        stages.push(Stage::Conv(layers.len() - 1));
        MsroiNet { spec, layers, stages }
    }

    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    pub fn head_params(&self) -> &LayerParams<T> {
        self.layers.last().expect("head present")
    }

    pub fn parameter_count(&self) -> usize {
        self.layers.iter().map(LayerParams::parameter_count).sum()
    }

    fn trunk_len(&self) -> usize {
        self.stages.len() - 1
    }

    pub fn trunk_forward(&self, input: &Tensor<T>) -> Result<Tensor<T>, MsroiError> {
        self.check_input(input)?;
        Ok(stack::forward(&self.layers, &self.stages[..self.trunk_len()], input, false)?.0)
    }

    /// Head activations `(C, D, h, w)` for a `1 x 3 x H x W` input.
    pub fn forward(&self, input: &Tensor<T>) -> Result<Tensor<T>, MsroiError> {
        let trunk = self.trunk_forward(input)?;
        head_forward(&trunk, self.head_params(), self.spec.categories)
    }

    fn check_input(&self, input: &Tensor<T>) -> Result<(), MsroiError> {
        let s = input.shape();
        if s.len() != 4 || s[0] != 1 || s[1] != self.spec.input_channels {
            return Err(MsroiError::Shape(format!(
                "network input must be 1 x {} x H x W, got {s:?}",
                self.spec.input_channels
            )));
        }
        if self.spec.head_shape(s[2], s[3]).is_none() {
            return Err(MsroiError::Shape(format!(
                "input {}x{} too small for {} pooling blocks",
                s[3],
                s[2],
                self.spec.blocks()
            )));
        }
        Ok(())
    }

    /// Saliency map at the image's own resolution.
    ///
    /// The image is resampled so each side is a multiple of the trunk's
    /// downsampling factor, the map is formed at head resolution and then
    /// upsampled back to the image size.
    pub fn saliency(&self, image: &RgbImage, mode: MapMode) -> Result<SaliencyMap, MsroiError> {
        let head = self.forward(&image_tensor(&self.inference_view(image)?))?;
        let z = class_scores(&head)?;
        let small = msroi_map(&head, &z, mode)?;
        upsample_map(&small, image.width(), image.height())
    }

    pub(crate) fn inference_view(&self, image: &RgbImage) -> Result<RgbImage, MsroiError> {
        inference_view(image, self.spec.downsampling())
    }

    pub fn to_checkpoint(&self) -> Checkpoint<T> {
        Checkpoint {
            kind: CheckpointKind::MultiStructure,
            categories: self.spec.categories,
            head_features: self.spec.head_features,
            layers: self.layers.clone(),
        }
    }

    /// Rebuilds a network from checkpointed layers, inferring the
    /// architecture from their shapes.
    pub fn from_checkpoint(ckpt: Checkpoint<T>) -> Result<Self, MsroiError> {
        if ckpt.kind != CheckpointKind::MultiStructure {
            return Err(MsroiError::Checkpoint("checkpoint holds a class-activation network".into()));
        }
        let spec = spec_from_layers(&ckpt.layers[..ckpt.layers.len().saturating_sub(1)], ckpt.categories)?;
        let head = ckpt.layers.last().expect("non-empty after spec_from_layers");
        let spec = NetworkSpec {
            head_features: ckpt.head_features,
            head_kernel: head.kernel_size(),
            ..spec
        };
        if head.out_features() != spec.categories * spec.head_features || head.in_features() != spec.trunk_output_features() {
            return Err(MsroiError::Checkpoint(format!(
                "head kernel {:?} inconsistent with {} categories x {} features",
                head.kernel.shape(),
                spec.categories,
                spec.head_features
            )));
        }
        spec.validate()?;
        Ok(Self::assemble(spec, ckpt.layers))
    }
}

/// Resamples to the nearest multiple of `factor` on each side (at least `factor`).
pub(crate) fn inference_view(image: &RgbImage, factor: usize) -> Result<RgbImage, MsroiError> {
    let snap = |v: usize| ((v as f64 / factor as f64).round() as usize).max(1) * factor;
    let (w, h) = (snap(image.width()), snap(image.height()));
    image
        .resize_bilinear(w, h)
        .map_err(|e| MsroiError::Shape(e.to_string()))
}

/// Recovers a trunk spec (two convs per block, 2x2/2 pooling) from layer shapes.
pub(crate) fn spec_from_layers<T: Scalar>(trunk: &[LayerParams<T>], categories: usize) -> Result<NetworkSpec, MsroiError> {
    let convs_per_block = 2;
    if trunk.is_empty() || trunk.len() % convs_per_block != 0 {
        return Err(MsroiError::Checkpoint(format!(
            "trunk of {} layers is not a whole number of two-conv blocks",
            trunk.len()
        )));
    }
    let kernel = trunk[0].kernel_size();
    let mut block_features = Vec::new();
    let mut in_f = trunk[0].in_features();
    let input_channels = in_f;
    for (i, l) in trunk.iter().enumerate() {
        if l.in_features() != in_f || l.kernel_size() != kernel {
            return Err(MsroiError::Checkpoint(format!("layer {i} does not chain onto its predecessor")));
        }
        if i % convs_per_block == convs_per_block - 1 {
            block_features.push(l.out_features());
        } else if trunk[i + 1].out_features() != l.out_features() {
            return Err(MsroiError::Checkpoint(format!("layer {i} changes width inside a block")));
        }
        in_f = l.out_features();
    }
    Ok(NetworkSpec {
        input_channels,
        block_features,
        convs_per_block,
        kernel,
        categories,
        ..NetworkSpec::default()
    })
}

impl<T: Scalar> Model<T> for MsroiNet<T> {
    type Target = Vec<bool>;

    fn layers(&self) -> &[LayerParams<T>] {
        &self.layers
    }

    fn layers_mut(&mut self) -> &mut [LayerParams<T>] {
        &mut self.layers
    }

    fn loss(&self, input: &Tensor<T>, target: &Vec<bool>) -> Result<T, TensorError> {
        let head = self.forward(input).map_err(MsroiError::into_tensor_error)?;
        let z = class_scores(&head).map_err(MsroiError::into_tensor_error)?;
        Ok(multilabel_loss(&z, target))
    }

    fn loss_with_signature(&self, input: &Tensor<T>, target: &Vec<bool>) -> Result<(T, Option<u64>), TensorError> {
        self.check_input(input).map_err(MsroiError::into_tensor_error)?;
        let (out, sig) = stack::forward_with_signature(&self.layers, &self.stages, input)?;
        let block = out.len() / self.spec.categories;
        let z = ClassScores(out.data().chunks(block).map(|b| b.iter().copied().sum()).collect());
        Ok((multilabel_loss(&z, target), Some(sig)))
    }

    fn gradients_into(
        &self,
        input: &Tensor<T>,
        target: &Vec<bool>,
        grads: &mut [(Tensor<T>, Tensor<T>)],
    ) -> Result<T, TensorError> {
        Ok(self.gradients_with_prediction(input, target, grads)?.0)
    }
}

impl<T: Scalar> Classifier<T> for MsroiNet<T> {
    fn categories(&self) -> usize {
        self.spec.categories
    }

    fn predict(&self, input: &Tensor<T>) -> Result<Vec<bool>, TensorError> {
        let head = self.forward(input).map_err(MsroiError::into_tensor_error)?;
        let z = class_scores(&head).map_err(MsroiError::into_tensor_error)?;
        Ok(z.values().iter().map(|&v| v > T::zero()).collect())
    }

    fn loss_with_prediction(&self, input: &Tensor<T>, target: &Vec<bool>) -> Result<(T, Vec<bool>), TensorError> {
        let head = self.forward(input).map_err(MsroiError::into_tensor_error)?;
        let z = class_scores(&head).map_err(MsroiError::into_tensor_error)?;
        let pred = z.values().iter().map(|&v| v > T::zero()).collect();
        Ok((multilabel_loss(&z, target), pred))
    }

    fn gradients_with_prediction(
        &self,
        input: &Tensor<T>,
        target: &Vec<bool>,
        grads: &mut [(Tensor<T>, Tensor<T>)],
    ) -> Result<(T, Vec<bool>), TensorError> {
        let c = self.spec.categories;
        if target.len() != c {
            return Err(TensorError::Invalid(format!("{} labels for {c} categories", target.len())));
        }
        self.check_input(input).map_err(MsroiError::into_tensor_error)?;
        let (out, trace) = stack::forward(&self.layers, &self.stages, input, true)?;
        let trace = trace.expect("trace requested");
        let block = out.len() / c;
        let z: Vec<T> = out.data().chunks(block).map(|b| b.iter().copied().sum()).collect();
        let scores = ClassScores(z);
        let loss = multilabel_loss(&scores, target);
        // d loss / d Z[c] = sigmoid(Z[c]) - y[c], broadcast over the category's block
        let mut grad = Tensor::zeros(out.shape());
        for (ci, chunk) in grad.data_mut().chunks_mut(block).enumerate() {
            let y = if target[ci] { T::one() } else { T::zero() };
            chunk.fill(sigmoid(scores.values()[ci]) - y);
        }
        stack::backward(&self.layers, &self.stages, &trace, grad, grads, false)?;
        let prediction = scores.values().iter().map(|&v| v > T::zero()).collect();
        Ok((loss, prediction))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_spec() -> NetworkSpec {
        NetworkSpec {
            block_features: vec![2, 3],
            categories: 3,
            head_features: 2,
            ..NetworkSpec::default()
        }
    }

    #[test]
    fn head_shape_for_desk_network() {
        let net = MsroiNet::<f64>::new(NetworkSpec::default(), 1).unwrap();
        let x = Tensor::zeros(&[1, 3, 64, 64]);
        assert_eq!(net.forward(&x).unwrap().shape(), &[6, 4, 2, 2]);
    }

    #[test]
    fn zero_trunk_zero_head() {
        let head = LayerParams::<f64>::zeros(6, 5, 1);
        let out = head_forward(&Tensor::zeros(&[1, 5, 3, 3]), &head, 3).unwrap();
        assert_eq!(out.shape(), &[3, 2, 3, 3]);
        assert!(out.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn head_rejects_bad_category_split() {
        let head = LayerParams::<f64>::zeros(5, 5, 1);
        assert!(head_forward(&Tensor::zeros(&[1, 5, 3, 3]), &head, 3).is_err());
    }

    #[test]
    fn likelihood_at_zero_is_half() {
        let p = sigmoid_likelihood(&ClassScores(vec![0.0f64, 0.0]));
        assert_eq!(p, vec![0.5, 0.5]);
    }

    #[test]
    fn likelihood_is_monotone() {
        let grid: Vec<f64> = (-400..=400).map(|i| i as f64 * 0.1).collect();
        let p = sigmoid_likelihood(&ClassScores(grid));
        assert!(p.windows(2).all(|w| w[0] <= w[1]));
        assert!(p.last().unwrap() > &0.999);
    }

    #[test]
    fn checkpoint_roundtrip_rebuilds_spec() {
        let net = MsroiNet::<f64>::new(small_spec(), 4).unwrap();
        let back = MsroiNet::from_checkpoint(net.to_checkpoint()).unwrap();
        assert_eq!(back, net);
    }

    #[test]
    fn rejects_wrong_input_channels() {
        let net = MsroiNet::<f64>::new(small_spec(), 4).unwrap();
        assert!(net.forward(&Tensor::zeros(&[1, 1, 8, 8])).is_err());
        assert!(net.forward(&Tensor::zeros(&[1, 3, 2, 2])).is_err());
    }

    #[test]
    fn forward_is_deterministic() {
        let net = MsroiNet::<f64>::new(small_spec(), 9).unwrap();
        let x = Tensor::from_fn(&[1, 3, 8, 8], |i| ((i * 37) % 11) as f64 / 11.0 - 0.5);
        let a = net.forward(&x).unwrap();
        let b = net.forward(&x).unwrap();
        assert!(a.data().iter().zip(b.data()).all(|(p, q)| p.to_bits() == q.to_bits()));
    }
}
