//! Class activation mapping baseline: the same trunk, a global sum over the
//! final feature maps and a linear softmax classifier.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::maps::{cam_map, upsample_map, SaliencyMap};
use super::network::{inference_view, spec_from_layers};
use super::stack::{self, image_tensor, Stage};
use super::train::Classifier;
use super::spec::RELU_GAIN;
use super::{MsroiError, NetworkSpec};
use crate::tensor::{softmax, Checkpoint, CheckpointKind, LayerParams, Model, Tensor, TensorError};
use crate::{RgbImage, Scalar};

#[derive(Clone, Debug, PartialEq)]
pub struct CamNet<T> {
    spec: NetworkSpec,
    /// Trunk convolutions, then the `C x F x 1 x 1` classifier (bias unused).
    layers: Vec<LayerParams<T>>,
    stages: Vec<Stage>,
}

impl<T: Scalar> CamNet<T> {
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
        layers.push(LayerParams::glorot(spec.categories, in_f, 1, &mut rng));
        Ok(Self::assemble(spec, layers))
    }

    fn assemble(spec: NetworkSpec, layers: Vec<LayerParams<T>>) -> Self {
        let stages = stack::trunk_stages(spec.blocks(), spec.convs_per_block, spec.pool_window, spec.pool_stride);
        CamNet { spec, layers, stages }
    }

    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    pub fn classifier(&self) -> &LayerParams<T> {
        self.layers.last().expect("classifier present")
    }

    fn check_input(&self, input: &Tensor<T>) -> Result<(), MsroiError> {
        let s = input.shape();
        if s.len() != 4 || s[0] != 1 || s[1] != self.spec.input_channels || self.spec.head_shape(s[2], s[3]).is_none() {
            return Err(MsroiError::Shape(format!(
                "input {s:?} is not 1 x {} x H x W or too small for the trunk",
                self.spec.input_channels
            )));
        }
        Ok(())
    }

    /// Final feature maps `(1, F, h, w)`.
    pub fn features(&self, input: &Tensor<T>) -> Result<Tensor<T>, MsroiError> {
        self.check_input(input)?;
        Ok(stack::forward(&self.layers, &self.stages, input, false)?.0)
    }

    /// `S_c = sum_{x,y} M_c(x, y)` for every category.
    pub fn class_logits(&self, features: &Tensor<T>) -> Vec<T> {
        let pooled = spatial_sums(features);
        let w = self.classifier().kernel.data();
        let f = pooled.len();
        (0..self.spec.categories)
            .map(|c| w[c * f..(c + 1) * f].iter().zip(&pooled).map(|(&a, &b)| a * b).sum())
            .collect()
    }

    pub fn posterior(&self, input: &Tensor<T>) -> Result<Vec<T>, MsroiError> {
        Ok(softmax(&self.class_logits(&self.features(input)?)))
    }

    /// CAM for `category`, or for the most probable category when `None`,
    /// at the image's resolution.
    pub fn saliency(&self, image: &RgbImage, category: Option<usize>) -> Result<SaliencyMap, MsroiError> {
        let view = inference_view(image, self.spec.downsampling())?;
        let feats = self.features(&image_tensor(&view))?;
        let category = match category {
            Some(c) => c,
            None => argmax(&self.class_logits(&feats)),
        };
        let small = cam_map(&feats, &self.classifier().kernel, category)?;
        upsample_map(&small, image.width(), image.height())
    }

    pub fn to_checkpoint(&self) -> Checkpoint<T> {
        Checkpoint {
            kind: CheckpointKind::ClassActivation,
            categories: self.spec.categories,
            head_features: self.spec.trunk_output_features(),
            layers: self.layers.clone(),
        }
    }

    pub fn from_checkpoint(ckpt: Checkpoint<T>) -> Result<Self, MsroiError> {
        if ckpt.kind != CheckpointKind::ClassActivation {
            return Err(MsroiError::Checkpoint("checkpoint holds a multi-structure network".into()));
        }
        let spec = spec_from_layers(&ckpt.layers[..ckpt.layers.len().saturating_sub(1)], ckpt.categories)?;
        let cls = ckpt.layers.last().expect("non-empty after spec_from_layers");
        if cls.kernel.shape() != [spec.categories, spec.trunk_output_features(), 1, 1] {
            return Err(MsroiError::Checkpoint(format!("classifier shape {:?}", cls.kernel.shape())));
        }
        spec.validate()?;
        Ok(Self::assemble(spec, ckpt.layers))
    }

    fn target_distribution(&self, target: &[bool]) -> Result<Vec<T>, TensorError> {
        let n = target.iter().filter(|&&y| y).count();
        if target.len() != self.spec.categories || n == 0 {
            return Err(TensorError::Invalid("CAM target needs at least one present category".into()));
        }
        let share = T::one() / T::of(n as f64);
        Ok(target.iter().map(|&y| if y { share } else { T::zero() }).collect())
    }
}

fn spatial_sums<T: Scalar>(features: &Tensor<T>) -> Vec<T> {
    let plane = features.shape()[2] * features.shape()[3];
    features.data().chunks(plane).map(|p| p.iter().copied().sum()).collect()
}

fn argmax<T: Scalar>(v: &[T]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

fn cross_entropy<T: Scalar>(p: &[T], q: &[T]) -> T {
    let tiny = T::of(1e-300_f64.max(T::min_positive_value().to_f64_lossy()));
    p.iter()
        .zip(q)
        .filter(|(_, &qi)| qi > T::zero())
        .map(|(&pi, &qi)| -qi * pi.max(tiny).ln())
        .sum()
}

impl<T: Scalar> Model<T> for CamNet<T> {
    type Target = Vec<bool>;

    fn layers(&self) -> &[LayerParams<T>] {
        &self.layers
    }

    fn layers_mut(&mut self) -> &mut [LayerParams<T>] {
        &mut self.layers
    }

    /// Softmax cross entropy against the uniform distribution over present labels.
    fn loss(&self, input: &Tensor<T>, target: &Vec<bool>) -> Result<T, TensorError> {
        let q = self.target_distribution(target)?;
        let feats = self.features(input).map_err(MsroiError::into_tensor_error)?;
        Ok(cross_entropy(&softmax(&self.class_logits(&feats)), &q))
    }

    fn loss_with_signature(&self, input: &Tensor<T>, target: &Vec<bool>) -> Result<(T, Option<u64>), TensorError> {
        let q = self.target_distribution(target)?;
        self.check_input(input).map_err(MsroiError::into_tensor_error)?;
        let (feats, sig) = stack::forward_with_signature(&self.layers, &self.stages, input)?;
        Ok((cross_entropy(&softmax(&self.class_logits(&feats)), &q), Some(sig)))
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

impl<T: Scalar> Classifier<T> for CamNet<T> {
    fn categories(&self) -> usize {
        self.spec.categories
    }

    /// Single-label prediction: only the most probable category is present.
    fn predict(&self, input: &Tensor<T>) -> Result<Vec<bool>, TensorError> {
        let feats = self.features(input).map_err(MsroiError::into_tensor_error)?;
        let best = argmax(&self.class_logits(&feats));
        Ok((0..self.spec.categories).map(|c| c == best).collect())
    }

    fn loss_with_prediction(&self, input: &Tensor<T>, target: &Vec<bool>) -> Result<(T, Vec<bool>), TensorError> {
        let q = self.target_distribution(target)?;
        let feats = self.features(input).map_err(MsroiError::into_tensor_error)?;
        let logits = self.class_logits(&feats);
        let best = argmax(&logits);
        let pred = (0..self.spec.categories).map(|c| c == best).collect();
        Ok((cross_entropy(&softmax(&logits), &q), pred))
    }

    fn gradients_with_prediction(
        &self,
        input: &Tensor<T>,
        target: &Vec<bool>,
        grads: &mut [(Tensor<T>, Tensor<T>)],
    ) -> Result<(T, Vec<bool>), TensorError> {
        let q = self.target_distribution(target)?;
        self.check_input(input).map_err(MsroiError::into_tensor_error)?;
        let (feats, trace) = stack::forward(&self.layers, &self.stages, input, true)?;
        let trace = trace.expect("trace requested");
        let logits = self.class_logits(&feats);
        let p = softmax(&logits);
        let loss = cross_entropy(&p, &q);
        let d_logits: Vec<T> = p.iter().zip(&q).map(|(&a, &b)| a - b).collect();

        let pooled = spatial_sums(&feats);
        let f = pooled.len();
        let cls = self.layers.len() - 1;
        let w = self.layers[cls].kernel.data();
        {
            let gk = grads[cls].0.data_mut();
            for (c, &dl) in d_logits.iter().enumerate() {
                for d in 0..f {
                    gk[c * f + d] += dl * pooled[d];
                }
            }
        }
        let plane = feats.shape()[2] * feats.shape()[3];
        let mut grad = Tensor::zeros(feats.shape());
        for (d, chunk) in grad.data_mut().chunks_mut(plane).enumerate() {
            let g: T = d_logits.iter().enumerate().map(|(c, &dl)| dl * w[c * f + d]).sum();
            chunk.fill(g);
        }
        stack::backward(&self.layers, &self.stages, &trace, grad, grads, false)?;
        let best = argmax(&logits);
        Ok((loss, (0..self.spec.categories).map(|c| c == best).collect()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::gradcheck;

    fn tiny() -> NetworkSpec {
        NetworkSpec {
            block_features: vec![3, 4],
            categories: 3,
            ..NetworkSpec::default()
        }
    }

    #[test]
    fn posterior_sums_to_one() {
        let net = CamNet::<f64>::new(tiny(), 2).unwrap();
        let x = Tensor::from_fn(&[1, 3, 8, 8], |i| ((i * 13) % 7) as f64 / 7.0 - 0.5);
        let p = net.posterior(&x).unwrap();
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut net = CamNet::<f64>::new(tiny(), 5).unwrap();
        let x = Tensor::from_fn(&[1, 3, 8, 8], |i| ((i * 29) % 17) as f64 / 17.0 - 0.5);
        let r = gradcheck(&mut net, &x, &vec![true, false, true], 1e-3, 12, 1).unwrap();
        assert!(r.max_relative_error < 1e-4, "{r:?}");
    }

    #[test]
    fn checkpoint_roundtrip() {
        let net = CamNet::<f64>::new(tiny(), 3).unwrap();
        assert_eq!(CamNet::from_checkpoint(net.to_checkpoint()).unwrap(), net);
    }
}
