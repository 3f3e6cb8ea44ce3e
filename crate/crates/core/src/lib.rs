pub mod autodiff;
pub mod error;
pub mod gnn;
pub mod gradcheck;
pub mod graph;
pub mod kan;
pub mod nn;
pub mod params;
pub mod scalar;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use params::{Ctx, Mode, ParamId, ParamStore};
pub use scalar::Scalar;
pub use tensor::Tensor;

pub type Tensor64 = Tensor<f64>;
pub type Tensor32 = Tensor<f32>;
pub type ParamStore64 = ParamStore<f64>;
pub type ParamStore32 = ParamStore<f32>;
pub type Model64 = gnn::Model<f64>;
pub type Model32 = gnn::Model<f32>;
pub type GraphInput64 = gnn::GraphInput<f64>;
pub type GraphInput32 = gnn::GraphInput<f32>;
