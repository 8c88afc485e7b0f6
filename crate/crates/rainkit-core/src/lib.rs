//! rainkit-core: masked region statistics, region-aware normalization layers,
//! a U-Net harmonization generator with configurable normalization placement,
//! GAN training losses, and the image-quality metric suite — all on a small
//! CPU tensor engine with reverse-mode differentiation.

pub mod checkpoint;
pub mod config;
pub mod data;
pub mod error;
pub mod gradcheck;
pub mod graph;
pub mod metrics;
pub mod loss;
pub mod model;
pub mod norm;
pub mod optim;
pub mod rng;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use graph::{Tape, Var};
pub use optim::{AdamConfig, ParamId, ParamStore};
pub use tensor::{Element, Shape, Tensor};
