//! Bi-temporal change detection built on a from-scratch reverse-mode
//! tensor engine: selective-scan state-space blocks, five spatio-temporal
//! fusion mechanisms, an attention-refined multi-stage decoder, segmentation
//! losses, metrics, and a deterministic training loop.

pub mod data;
pub mod decoder;
pub mod encoder;
pub mod error;
pub mod fusion;
pub mod gradsuite;
pub mod loss;
pub mod mask;
pub mod metrics;
pub mod model;
pub mod module;
pub mod nn;
pub mod runner;
pub mod ssm;
pub mod tensor;

pub use error::{Error, Result};
pub use mask::BinaryMask;
pub use model::{ChangeDetector, ModelConfig, Preset};
pub use module::Module;
pub use tensor::{GradStore, Shape, Tensor};
