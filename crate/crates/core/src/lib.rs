pub mod harness;
pub mod image;
pub mod jpeg;
pub mod metrics;
pub mod msroi;
pub mod scalar;
pub mod semantic;
pub mod tensor;

pub use image::RgbImage;
pub use scalar::Scalar;

pub type Tensor32 = tensor::Tensor<f32>;
pub type Tensor64 = tensor::Tensor<f64>;
pub type MsroiNet32 = msroi::MsroiNet<f32>;
pub type MsroiNet64 = msroi::MsroiNet<f64>;
pub type CamNet64 = msroi::CamNet<f64>;
