//! Multi-scale single-image super-resolution with an overscaling head.

pub mod adam;
pub mod checkpoint;
pub mod error;
pub mod eval;
pub mod gradcheck;
pub mod graph;
pub mod image;
pub mod kv;
pub mod loss;
pub mod metrics;
mod kernels;
pub mod model;
pub mod params;
pub mod rng;
pub mod scale;
pub mod tensor;
pub mod train;

pub use adam::Adam;
pub use checkpoint::Checkpoint;
pub use error::{Error, Result};
pub use graph::{Graph, Var};
pub use image::Image;
pub use model::{param_count, Head, ModelConfig};
pub use params::{ParamEntry, ParamStore};
pub use scale::{Scale, ScaleSet};
pub use tensor::{Real, Shape, Tensor};
