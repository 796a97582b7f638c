//! Multi-structure region-of-interest network, the CAM baseline, saliency
//! maps and training.

mod cam;
mod maps;
mod merge;
mod network;
mod spec;
mod stack;
mod train;

use thiserror::Error;

use crate::tensor::{CheckpointError, TensorError};

pub use cam::CamNet;
pub use maps::{
    cam_map, category_weights, class_scores, msroi_map, msroi_raw_map, upsample_map, ClassScores, MapMode,
    RankWeighting, SaliencyMap,
};
pub use merge::ClassMergeTable;
pub use network::{head_forward, multilabel_loss, sigmoid_likelihood, MsroiNet};
pub use spec::NetworkSpec;
pub use stack::image_tensor;
pub use train::{evaluate, prepare_samples, train, Classifier, EpochStats, LabeledImage, Sample, TrainConfig, TrainReport};

#[derive(Debug, Error)]
pub enum MsroiError {
    #[error("invalid network spec: {0}")]
    Spec(String),
    #[error("shape error: {0}")]
    Shape(String),
    #[error("invalid map: {0}")]
    Map(String),
    #[error("category {category} out of range for {categories} categories")]
    UnknownCategory { category: usize, categories: usize },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("class merge table: {0}")]
    MergeTable(String),
    #[error("unknown label {0:?}")]
    UnknownLabel(String),
    #[error("dataset: {0}")]
    Dataset(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

impl From<CheckpointError> for MsroiError {
    fn from(e: CheckpointError) -> Self {
        MsroiError::Checkpoint(e.to_string())
    }
}

impl MsroiError {
    /// Flattens into a tensor error for use behind the `Model` trait.
    pub fn into_tensor_error(self) -> TensorError {
        match self {
            MsroiError::Tensor(e) => e,
            other => TensorError::Invalid(other.to_string()),
        }
    }
}
